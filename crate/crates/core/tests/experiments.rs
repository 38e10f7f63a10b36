use kgorbit_core::experiments::{
    bound_check_i, bound_check_phi, default_loop_budget, energy_deviation, period_scaling_sweep,
};
use kgorbit_core::stationary::{default_band, MultiplierClass};
use kgorbit_core::{
    evolve, floquet, perturb_near_k, power_law_fit, run_first_return, run_many_loops, sample_orbit, Distribution,
    FloquetConfig, LoopOptions, Model, ModelParams, PerturbationSpec, PlanarState, State, StepperConfig,
};

fn setup() -> (Model, kgorbit_core::DeltaBand) {
    let params = ModelParams::circle(0.5, 1, 12);
    let band = default_band(&params);
    (Model::new(params).unwrap(), band)
}

fn perturbed(model: &Model, eta: f64, seed: u64) -> State {
    perturb_near_k(model, eta, PlanarState::new(eta, 0.0), &PerturbationSpec::standard(eta, seed)).unwrap()
}

#[test]
fn planar_first_return_matches_quadrature() {
    let (m, band) = setup();
    for eta in [0.2, 0.05] {
        let s = State::planar(m.mode_count(), eta, 0.0);
        let fr = run_first_return(&m, &s, eta, &band, &StepperConfig::new(1e-3, 100.0)).unwrap();
        assert!((fr.return_time / fr.reference_period - 1.0).abs() < 1e-6);
        assert!(fr.within_log_bounds);
        assert!(fr.return_distance < 1e-8);
        assert_eq!(fr.j_initial, 0.0);
    }
}

#[test]
fn first_return_from_inside_the_band() {
    let (m, band) = setup();
    let params = m.params().clone();
    let eta = 0.1;
    let orbit = sample_orbit(eta, 64, &params).unwrap();
    // A sample on the upper arc inside [δ, δ'].
    let (t, p) = orbit
        .samples
        .iter()
        .find(|(_, p)| band.contains(p.a0) && p.b0 > 0.0)
        .copied()
        .unwrap();
    let mut s = p.embed(m.mode_count());
    s.t = t;
    let fr = run_first_return(&m, &s, eta, &band, &StepperConfig::new(1e-3, 100.0)).unwrap();
    assert_eq!(fr.section.kind, kgorbit_core::SectionKind::A0Equals);
    assert!((fr.return_time / orbit.period - 1.0).abs() < 1e-6);
}

#[test]
fn stability_report_is_deterministic() {
    let (m, band) = setup();
    let eta = 0.1;
    let s = perturbed(&m, eta, 42);
    let cfg = StepperConfig::new(2e-3, 100.0);
    let opts = LoopOptions::default();
    let a = run_many_loops(&m, &s, eta, &band, 2, &cfg, &opts).unwrap();
    let b = run_many_loops(&m, &s, eta, &band, 2, &cfg, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.loop_records.len(), 2);
    assert!(a.j_within_regime && !a.regime_exit);
    assert!(a.confinement_held);
    assert!(a.fits.contains_key("cumulative_time_vs_loop"));
}

#[test]
fn fixed_and_rebaselined_loops_agree_on_timing() {
    let (m, band) = setup();
    let eta = 0.1;
    let s = perturbed(&m, eta, 3);
    let cfg = StepperConfig::new(2e-3, 100.0);
    let budget = default_loop_budget(eta, 1.0);
    let re = run_many_loops(&m, &s, eta, &band, budget, &cfg, &LoopOptions::default()).unwrap();
    let fixed = run_many_loops(
        &m,
        &s,
        eta,
        &band,
        budget,
        &cfg,
        &LoopOptions {
            rebaseline: false,
            ..LoopOptions::default()
        },
    )
    .unwrap();
    for (x, y) in re.loop_records.iter().zip(&fixed.loop_records) {
        assert!((x.loop_time - y.loop_time).abs() < 1e-6);
    }
    assert!(fixed.loop_records.iter().all(|r| r.eta_baseline == eta));
}

#[test]
fn loops_leaving_the_regime_stop_early() {
    let (m, band) = setup();
    let eta = 0.1;
    // J(0) far above η⁵.
    let spec = PerturbationSpec {
        amplitude: 0.02,
        mode_set: vec![1, 2],
        distribution: Distribution::Equipartition,
        seed: 1,
    };
    let s = perturb_near_k(&m, eta, PlanarState::new(eta, 0.0), &spec).unwrap();
    let rep = run_many_loops(&m, &s, eta, &band, 5, &StepperConfig::new(2e-3, 100.0), &LoopOptions::default()).unwrap();
    assert!(rep.regime_exit && !rep.j_within_regime);
    assert_eq!(rep.loop_records.len(), 1);
}

#[test]
fn fitted_bounds_are_stable_under_refinement() {
    let (m, _) = setup();
    let eta = 0.05;
    let s = perturbed(&m, eta, 5);
    let fitted: Vec<(f64, f64)> = [1e-3, 5e-4]
        .iter()
        .map(|dt| {
            let mut cfg = StepperConfig::new(*dt, 20.0);
            cfg.sample_stride = (1e-2 / dt).round() as usize;
            let traj = evolve(&m, &s, &cfg).unwrap();
            let i = bound_check_i(&traj, m.params(), 1e6).unwrap();
            assert!(!i.vacuous && i.violations.is_empty());
            let phi = bound_check_phi(&traj, eta).unwrap();
            (i.fitted_c.unwrap(), phi.fitted_c.unwrap())
        })
        .collect();
    assert!(fitted[0].0.is_finite() && fitted[0].1.is_finite());
    assert!((fitted[0].0 / fitted[1].0 - 1.0).abs() < 1e-2);
    assert!((fitted[0].1 / fitted[1].1 - 1.0).abs() < 1e-2);
}

#[test]
fn energy_deviation_decays_faster_than_cubically() {
    let (m, _) = setup();
    let etas = [0.1, 0.05, 0.02, 0.01];
    let devs: Vec<f64> = etas
        .iter()
        .map(|eta| energy_deviation(&m, &perturbed(&m, *eta, 9), *eta).unwrap())
        .collect();
    let fit = power_law_fit(&etas, &devs).unwrap();
    assert!(fit.slope >= 3.0, "exponent {}", fit.slope);
}

#[test]
fn period_sweep_slope_near_saddle_rate() {
    let params = ModelParams::circle(0.5, 1, 4);
    let sweep = period_scaling_sweep(&[1e-2, 1e-3, 1e-4, 1e-5, 1e-6], &params).unwrap();
    assert!((sweep.fit.slope - 2.0 / params.m).abs() / (2.0 / params.m) < 1e-2);
}

#[test]
fn floquet_multipliers_are_symplectic() {
    let params = ModelParams::circle(0.5, 1, 4);
    for eta in [0.1, 0.01] {
        let orbit = sample_orbit(eta, 32, &params).unwrap();
        for lambda in [std::f64::consts::TAU, 2.0 * std::f64::consts::TAU] {
            let mono = floquet(&orbit, lambda, &params, &FloquetConfig::default()).unwrap();
            assert!((mono.det - 1.0).abs() < 1e-8);
            let product = mono.multipliers[0] * mono.multipliers[1];
            assert!((product.re - 1.0).abs() < 1e-8 && product.im.abs() < 1e-8);
            if mono.class == MultiplierClass::Elliptic {
                assert!(mono.multipliers.iter().all(|z| (z.norm() - 1.0).abs() < 1e-8));
            }
        }
    }
    let orbit = sample_orbit(0.1, 32, &params).unwrap();
    assert!(floquet(&orbit, 0.3, &params, &FloquetConfig::default()).is_err());
}
