use langevin_splitting::detflow::{energy_residual, step_limit};
use langevin_splitting::montecarlo::{coarsen, generate_grid, run_ensemble, SeedPolicy};
use langevin_splitting::stochflow::OuIncrement;
use langevin_splitting::{energy_h, simulate, ConservativeMap, Integrator, PhysParams, SchemeSpec, State};
use proptest::prelude::*;

fn map_strategy() -> impl Strategy<Value = ConservativeMap> {
    prop::sample::select(ConservativeMap::ENERGY_PRESERVING.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn conservative_maps_preserve_modified_energy(
        map in map_strategy(),
        p in -3.0..3.0f64,
        q in -3.0..3.0f64,
        u in 0.5..15.0f64,
        k in 4..12i32,
    ) {
        let prm = PhysParams::new(u, 1.0).unwrap();
        let tau = 2.0_f64.powi(-k).min(0.5 * step_limit(u));
        let s = State::new(p, q);
        let r = energy_residual(map, s, tau, &prm).unwrap();
        prop_assert!(r <= 1e-9 * (1.0 + energy_h(s, &prm).abs()), "residual {}", r);
    }

    #[test]
    fn noise_free_step_contracts_modified_energy(
        map in map_strategy(),
        p in -2.0..2.0f64,
        q in -2.0..2.0f64,
        u in 1.0..15.0f64,
    ) {
        // H is conserved by the map; the decay scales the quadratic part of H
        // by e^{-υτ} and the quartic part by e^{-2υτ}
        let prm = PhysParams::new(u, 0.0).unwrap();
        let integ = Integrator::new(SchemeSpec::lie_trotter(map), prm, 2.0_f64.powi(-7));
        let s = State::new(p, q);
        let next = integ.step_draw(s, 0.0).unwrap();
        let bound = (-u * integ.tau).exp() * energy_h(s, &prm);
        prop_assert!(energy_h(next, &prm) <= bound + 1e-9 * (1.0 + bound.abs()));
    }

    #[test]
    fn ou_increment_contracts(u in 0.1..20.0f64, sigma in 0.0..3.0f64, tau in 1e-6..1.0f64) {
        let inc = OuIncrement::new(tau, &PhysParams::new(u, sigma).unwrap());
        prop_assert!(inc.decay > 0.0 && inc.decay < 1.0);
        prop_assert!(inc.noise_std >= 0.0 && inc.noise_std <= sigma * tau.sqrt() + 1e-15);
    }

    #[test]
    fn coarsening_preserves_the_endpoint(seed in any::<u64>(), k in 0..6i32) {
        let grid = generate_grid(1.0, 2.0_f64.powi(-6), seed).unwrap();
        let coarse = coarsen(&grid, 2.0_f64.powi(-k)).unwrap();
        let fine_sum: f64 = grid.increments.iter().sum();
        prop_assert!((coarse.iter().sum::<f64>() - fine_sum).abs() < 1e-12);
    }

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>(), map in map_strategy()) {
        let prm = PhysParams::new(10.0, 1.0).unwrap();
        let spec = SchemeSpec::lie_trotter(map);
        let a = simulate(State::new(1.0, -0.5), 0.25, 2.0_f64.powi(-6), &prm, &spec, seed).unwrap();
        let b = simulate(State::new(1.0, -0.5), 0.25, 2.0_f64.powi(-6), &prm, &spec, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn ensembles_do_not_depend_on_worker_count() {
    let prm = PhysParams::new(10.0, 1.0).unwrap();
    let spec = SchemeSpec::lie_trotter(ConservativeMap::Avf);
    let job = |ctx: langevin_splitting::montecarlo::PathContext| {
        let t = simulate(State::new(1.0, 1.0), 0.5, 2.0_f64.powi(-6), &prm, &spec, ctx.seed)?;
        let x = t.terminal();
        Ok(vec![x.p, x.q, energy_h(x, &prm)])
    };
    let seeds = SeedPolicy::new(99);
    let one = run_ensemble(job, 333, &seeds, 1).unwrap();
    for workers in [2, 4, 16] {
        assert_eq!(run_ensemble(job, 333, &seeds, workers).unwrap(), one);
    }
}
