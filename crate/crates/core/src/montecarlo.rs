//! Reproducible random paths and parallel ensemble reduction.
//!
//! Every path draws from its own ChaCha8 stream seeded by a hash of the
//! master seed and the path index, and partial results are merged in fixed
//! path-index order. Ensemble statistics are therefore bit-identical for any
//! number of worker threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{integer_ratio, Error, Result};

/// Paths handled sequentially inside one parallel work item.
pub const BLOCK_SIZE: usize = 16;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps `(master_seed, path_index)` to a per-path seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub master_seed: u64,
}

impl SeedPolicy {
    pub fn new(master_seed: u64) -> Self {
        SeedPolicy { master_seed }
    }

    pub fn path_seed(&self, index: u64) -> u64 {
        splitmix64(splitmix64(self.master_seed) ^ splitmix64(index.wrapping_mul(0xd1b5_4a32_d192_ed03)))
    }

    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        path_rng(self.path_seed(index))
    }
}

/// Random stream of one path.
pub fn path_rng(path_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(path_seed)
}

/// Brownian increments on a uniform fine grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianGrid {
    pub fine_dt: f64,
    pub increments: Vec<f64>,
    pub path_seed: u64,
}

impl BrownianGrid {
    pub fn horizon(&self) -> f64 {
        self.increments.len() as f64 * self.fine_dt
    }
}

/// Independent `N(0, τ_f)` increments covering `[0, horizon]`.
pub fn generate_grid(horizon: f64, fine_dt: f64, path_seed: u64) -> Result<BrownianGrid> {
    let n =
        integer_ratio(horizon, fine_dt).filter(|&n| n >= 1).ok_or(Error::NonIntegralGrid { horizon, dt: fine_dt })?;
    let mut rng = path_rng(path_seed);
    let sd = fine_dt.sqrt();
    let increments = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(BrownianGrid { fine_dt, increments, path_seed })
}

/// Sums consecutive blocks of `τ/τ_f` fine increments.
pub fn coarsen(grid: &BrownianGrid, tau: f64) -> Result<Vec<f64>> {
    let ratio = integer_ratio(tau, grid.fine_dt)
        .filter(|&r| r >= 1 && grid.increments.len().is_multiple_of(r))
        .ok_or(Error::NonIntegralRatio { tau, fine_dt: grid.fine_dt })?;
    Ok(grid.increments.chunks_exact(ratio).map(|c| c.iter().sum()).collect())
}

/// Identity of one path inside an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathContext {
    pub index: usize,
    pub seed: u64,
}

impl PathContext {
    pub fn rng(&self) -> ChaCha8Rng {
        path_rng(self.seed)
    }
}

/// Partial result that can absorb the partial result of the following paths.
pub trait Accumulator: Send + Sized {
    fn merge(&mut self, later: Self);
}

fn merge_in_order<A: Accumulator>(mut parts: Vec<A>) -> Option<A> {
    // pairwise tree over the index order
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.merge(b);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Folds every path into an accumulator and merges the blocks in index order.
///
/// `workers = 0` uses the global rayon pool. The first failing path (by
/// index) is reported as [`Error::PathFailed`].
pub fn fold_paths<A, I, F>(n_paths: usize, seeds: &SeedPolicy, workers: usize, init: I, job: F) -> Result<A>
where
    A: Accumulator,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, PathContext) -> Result<()> + Sync + Send,
{
    let n_blocks = n_paths.div_ceil(BLOCK_SIZE);
    let parts: Vec<Result<A>> = with_workers(workers, || {
        (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let mut acc = init();
                for index in b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(n_paths) {
                    let ctx = PathContext { index, seed: seeds.path_seed(index as u64) };
                    job(&mut acc, ctx).map_err(|e| Error::PathFailed { path: index, source: Box::new(e) })?;
                }
                Ok(acc)
            })
            .collect()
    })?;
    let parts = parts.into_iter().collect::<Result<Vec<A>>>()?;
    Ok(merge_in_order(parts).unwrap_or_else(init))
}

/// Runs `job` for every path and returns the outputs in path order.
pub fn map_paths<T, F>(n_paths: usize, seeds: &SeedPolicy, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(PathContext) -> Result<T> + Sync + Send,
{
    struct Collected<T>(Vec<T>);
    impl<T: Send> Accumulator for Collected<T> {
        fn merge(&mut self, later: Self) {
            self.0.extend(later.0);
        }
    }
    fold_paths(
        n_paths,
        seeds,
        workers,
        || Collected(Vec::new()),
        |acc, ctx| {
            acc.0.push(job(ctx)?);
            Ok(())
        },
    )
    .map(|c| c.0)
}

/// Running count, mean and centred second moment of a vector of outputs
/// (Welford updates, Chan merges).
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Moments { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, xs: &[f64]) {
        assert_eq!(xs.len(), self.dim(), "sample dimension mismatch");
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(xs) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }

    pub fn estimates(&self) -> Vec<Estimate> {
        (0..self.dim()).map(|i| self.estimate(i)).collect()
    }

    pub fn estimate(&self, i: usize) -> Estimate {
        let n = self.count as f64;
        let var = if self.count > 1 { self.m2[i] / (n - 1.0) } else { 0.0 };
        Estimate { mean: self.mean[i], std_error: (var.max(0.0) / n).sqrt(), std_dev: var.max(0.0).sqrt() }
    }
}

impl Accumulator for Moments {
    fn merge(&mut self, later: Self) {
        if later.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = later;
            return;
        }
        let (na, nb) = (self.count as f64, later.count as f64);
        let n = na + nb;
        for i in 0..self.dim() {
            let delta = later.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += later.m2[i] + delta * delta * na * nb / n;
        }
        self.count += later.count;
    }
}

/// Sample mean with its standard error `sd / √n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub std_dev: f64,
}

/// Per-level ensemble statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub tau: Option<f64>,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub n_paths: usize,
    pub records: Vec<LevelRecord>,
    pub metadata: BTreeMap<String, String>,
}

impl EnsembleReport {
    /// Labels the records with step sizes, in order.
    pub fn with_levels(mut self, taus: &[f64]) -> Self {
        for (r, &t) in self.records.iter_mut().zip(taus) {
            r.tau = Some(t);
        }
        self
    }

    pub fn with_metadata(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }
}

/// Mean and standard error of every component of `job`'s output.
pub fn run_ensemble<F>(job: F, n_paths: usize, seeds: &SeedPolicy, workers: usize) -> Result<EnsembleReport>
where
    F: Fn(PathContext) -> Result<Vec<f64>> + Sync + Send,
{
    if n_paths < 2 {
        return Err(Error::TooFewPaths(n_paths));
    }
    let first = job(PathContext { index: 0, seed: seeds.path_seed(0) })
        .map_err(|e| Error::PathFailed { path: 0, source: Box::new(e) })?;
    let dim = first.len();
    let moments = fold_paths(
        n_paths,
        seeds,
        workers,
        || Moments::new(dim),
        |acc, ctx| {
            let out = job(ctx)?;
            if out.len() != dim {
                return Err(Error::InvalidParameter(format!("path output has {} entries, expected {dim}", out.len())));
            }
            acc.push(&out);
            Ok(())
        },
    )?;
    let records = moments
        .estimates()
        .into_iter()
        .map(|e| LevelRecord { tau: None, estimate: e.mean, std_error: e.std_error })
        .collect();
    Ok(EnsembleReport { n_paths, records, metadata: BTreeMap::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Distribution;

    #[test]
    fn single_increment_grid() {
        let g = generate_grid(0.25, 0.25, 1).unwrap();
        assert_eq!(g.increments.len(), 1);
        assert!(matches!(generate_grid(1.0, 0.3, 1), Err(Error::NonIntegralGrid { .. })));
        assert!(matches!(generate_grid(0.0, 0.3, 1), Err(Error::NonIntegralGrid { .. })));
    }

    #[test]
    fn grids_are_reproducible() {
        let a = generate_grid(1.0, 2.0_f64.powi(-10), 42).unwrap();
        let b = generate_grid(1.0, 2.0_f64.powi(-10), 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_grid(1.0, 2.0_f64.powi(-10), 43).unwrap());
        assert!((a.horizon() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn brownian_endpoint_variance() {
        let seeds = SeedPolicy::new(5);
        let n = 100_000;
        let ends = map_paths(n, &seeds, 0, |ctx| {
            let g = generate_grid(2.0, 0.125, ctx.seed)?;
            Ok(g.increments.iter().sum::<f64>())
        })
        .unwrap();
        let mean = ends.iter().sum::<f64>() / n as f64;
        let var = ends.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 2.0).abs() < 4.0 * 2.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn coarsening() {
        let g = generate_grid(1.0, 2.0_f64.powi(-6), 9).unwrap();
        assert_eq!(coarsen(&g, g.fine_dt).unwrap(), g.increments);
        let whole = coarsen(&g, 1.0).unwrap();
        assert_eq!(whole.len(), 1);
        assert!((whole[0] - g.increments.iter().sum::<f64>()).abs() < 1e-14);
        let quarter = coarsen(&g, 0.25).unwrap();
        assert_eq!(quarter.len(), 4);
        assert!((quarter[1] - g.increments[16..32].iter().sum::<f64>()).abs() < 1e-15);
        assert!(matches!(coarsen(&g, 0.3), Err(Error::NonIntegralRatio { .. })));
    }

    #[test]
    fn coarse_increment_variance() {
        let seeds = SeedPolicy::new(17);
        let tau = 0.125;
        let samples =
            map_paths(20_000, &seeds, 0, |ctx| coarsen(&generate_grid(1.0, 2.0_f64.powi(-7), ctx.seed)?, tau))
                .unwrap()
                .concat();
        let n = samples.len() as f64;
        let var = samples.iter().map(|w| w * w).sum::<f64>() / n;
        assert!((var - tau).abs() < 4.0 * tau * (2.0 / n).sqrt());
    }

    #[test]
    fn path_seeds_are_distinct() {
        let s = SeedPolicy::new(0);
        let mut seen: Vec<u64> = (0..10_000).map(|i| s.path_seed(i)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 10_000);
        assert_ne!(SeedPolicy::new(1).path_seed(0), s.path_seed(0));
    }

    #[test]
    fn constant_job() {
        let r = run_ensemble(|_| Ok(vec![2.5, -1.0]), 37, &SeedPolicy::new(1), 0).unwrap();
        assert_eq!(r.records[0].estimate, 2.5);
        assert_eq!(r.records[0].std_error, 0.0);
        assert_eq!(r.records[1].estimate, -1.0);
        assert_eq!(r.n_paths, 37);
    }

    #[test]
    fn normal_job_mean_within_clt_band() {
        let n = 20_000;
        let r = run_ensemble(|ctx| Ok(vec![StandardNormal.sample(&mut ctx.rng())]), n, &SeedPolicy::new(3), 0).unwrap();
        assert!(r.records[0].estimate.abs() < 3.0 / (n as f64).sqrt());
        assert!((r.records[0].std_error - 1.0 / (n as f64).sqrt()).abs() < 0.05 / (n as f64).sqrt());
    }

    #[test]
    fn worker_count_invariance() {
        let job = |ctx: PathContext| {
            let mut rng = ctx.rng();
            let z: f64 = rng.sample(StandardNormal);
            Ok(vec![z, z.exp(), (ctx.index as f64).sqrt()])
        };
        let seeds = SeedPolicy::new(2024);
        let reports: Vec<_> = [1, 4, 16].iter().map(|&w| run_ensemble(job, 1001, &seeds, w).unwrap()).collect();
        for r in &reports[1..] {
            for (a, b) in r.records.iter().zip(&reports[0].records) {
                assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
                assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
            }
        }
    }

    #[test]
    fn first_failure_is_reported_by_index() {
        let r = run_ensemble(
            |ctx| if ctx.index == 40 || ctx.index == 90 { Err(Error::EmptyWindow) } else { Ok(vec![1.0]) },
            100,
            &SeedPolicy::new(0),
            4,
        );
        assert_eq!(r.unwrap_err().path_index(), Some(40));
        assert!(matches!(run_ensemble(|_| Ok(vec![1.0]), 1, &SeedPolicy::new(0), 0), Err(Error::TooFewPaths(1))));
    }

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 17) as f64 * 0.3 - 2.0).collect();
        let mut all = Moments::new(1);
        xs.iter().for_each(|&x| all.push(&[x]));
        let mut a = Moments::new(1);
        let mut b = Moments::new(1);
        xs[..33].iter().for_each(|&x| a.push(&[x]));
        xs[33..].iter().for_each(|&x| b.push(&[x]));
        a.merge(b);
        assert_eq!(a.count, 100);
        assert!((a.mean[0] - all.mean[0]).abs() < 1e-14);
        assert!((a.m2[0] - all.m2[0]).abs() < 1e-11);
    }

    #[test]
    fn map_paths_preserves_order() {
        let out = map_paths(100, &SeedPolicy::new(0), 3, |ctx| Ok(ctx.index)).unwrap();
        assert_eq!(out, (0..100).collect::<Vec<_>>());
    }
}
