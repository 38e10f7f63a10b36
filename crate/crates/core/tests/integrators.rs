use kgorbit_core::stationary::{homoclinic, planar_rk4_step};
use kgorbit_core::{
    evolve, Model, ModelParams, PlanarState, Propagator, Scheme, SectionKind, SectionSpec, SignConstraint, State,
    StepperConfig,
};

fn model(k: usize) -> Model {
    Model::new(ModelParams::circle(0.5, 1, k)).unwrap()
}

fn run(model: &Model, s: &State, dt: f64, t: f64, scheme: Scheme) -> State {
    let mut p = Propagator::new(model, s.clone(), scheme, dt, None).unwrap();
    let n = (t / dt).round() as u64;
    for _ in 0..n {
        p.step().unwrap();
    }
    p.into_state()
}

fn smooth_state(model: &Model) -> State {
    let mut s = State::planar(model.mode_count(), 0.3, 0.05);
    for k in 1..model.mode_count() {
        let lam = model.table().modes()[k].eigenvalue;
        s.a[k] = 0.01 * (k as f64).sin() / (1.0 + lam * lam);
        s.b[k] = 0.01 * (k as f64 * 0.7).cos() / (1.0 + lam * lam);
    }
    s
}

fn convergence_ratios(model: &Model, s: &State, scheme: Scheme, dts: &[f64], t: f64) -> Vec<f64> {
    let reference = run(model, s, 1e-5, t, Scheme::Rk4);
    let errs: Vec<f64> = dts
        .iter()
        .map(|dt| model.dist_x(&run(model, s, *dt, t, scheme), &reference).unwrap())
        .collect();
    errs.windows(2).map(|w| w[0] / w[1]).collect()
}

#[test]
fn split2_is_second_order_on_the_planar_orbit() {
    let m = model(4);
    let s = State::planar(m.mode_count(), 0.1, 0.0);
    for r in convergence_ratios(&m, &s, Scheme::Split2, &[0.04, 0.02, 0.01], 5.0) {
        assert!((3.5..4.5).contains(&r), "ratio {r}");
    }
}

#[test]
fn rk4_is_fourth_order_on_the_planar_orbit() {
    let m = model(4);
    let s = State::planar(m.mode_count(), 0.1, 0.0);
    for r in convergence_ratios(&m, &s, Scheme::Rk4, &[0.1, 0.05, 0.025], 5.0) {
        assert!((14.0..18.0).contains(&r), "ratio {r}");
    }
}

#[test]
fn schemes_agree_on_a_smooth_state() {
    let m = model(6);
    let s = smooth_state(&m);
    let a = run(&m, &s, 1e-4, 10.0, Scheme::Split2);
    let b = run(&m, &s, 1e-4, 10.0, Scheme::Rk4);
    let d = m.dist_x(&a, &b).unwrap();
    assert!(d <= 1e-6, "split2 vs rk4 differ by {d}");
}

#[test]
fn split2_is_reversible() {
    let m = model(8);
    let s = State::planar(m.mode_count(), 0.1, 0.0);
    let mut there = run(&m, &s, 1e-3, 20.0, Scheme::Split2);
    there.b.iter_mut().for_each(|v| *v = -*v);
    let mut back = run(&m, &there, 1e-3, 20.0, Scheme::Split2);
    back.b.iter_mut().for_each(|v| *v = -*v);
    back.t = 0.0;
    let d = m.dist_x(&back, &s).unwrap();
    assert!(d <= 1e-8, "round trip error {d}");
}

#[test]
fn planar_start_stays_planar() {
    let m = model(8);
    let s = State::planar(m.mode_count(), 0.2, 0.0);
    let mut cfg = StepperConfig::new(1e-2, 50.0);
    cfg.sample_stride = 10;
    let traj = evolve(&m, &s, &cfg).unwrap();
    assert!(traj.states.iter().all(|s| s.off_plane_norm_sq() == 0.0));
}

#[test]
fn split2_follows_the_homoclinic() {
    let m = model(4);
    let params = m.params();
    let h = homoclinic(-5.0, params);
    let s = State::planar(m.mode_count(), h.a0, h.b0);
    let out = run(&m, &s, 1e-3, 5.0, Scheme::Split2);
    let peak = homoclinic(0.0, params);
    assert!((out.a[0] - peak.a0).abs() < 1e-6);
    assert!(out.b[0].abs() < 1e-6);
}

#[test]
fn planar_rk4_tracks_the_closed_form() {
    let params = ModelParams::circle(0.5, 2, 4);
    let mut s = homoclinic(-5.0, &params);
    let dt = 1e-3;
    let mut worst = 0.0f64;
    for k in 1..=10_000 {
        s = planar_rk4_step(&params, s, dt);
        let exact = homoclinic(-5.0 + k as f64 * dt, &params);
        worst = worst.max((s.a0 - exact.a0).abs()).max((s.b0 - exact.b0).abs());
    }
    assert!(worst < 1e-8, "sup error {worst}");
}

fn first_right_turn(m: &Model, eps: f64) -> kgorbit_core::Crossing {
    let params = m.params();
    let omega = (2.0 * params.p as f64).sqrt() * params.m;
    let s = State::planar(m.mode_count(), params.center(), eps * omega);
    let section = SectionSpec {
        kind: SectionKind::B0Equals,
        level: 0.0,
        sign_constraint: SignConstraint::A0RightOfCenter,
    };
    // split2 displaces the discrete equilibrium by O(dt²), which swamps tiny oscillations.
    let mut p = Propagator::new(m, s, Scheme::Rk4, 1e-3, Some(section)).unwrap();
    loop {
        if let Some(c) = p.step().unwrap() {
            break c;
        }
    }
}

#[test]
fn small_oscillation_crossing_at_quarter_period() {
    let m = model(4);
    let params = m.params();
    let quarter = std::f64::consts::PI / (2.0 * (2.0 * params.p as f64).sqrt() * params.m);
    // The asymmetric potential shifts the first quarter swing by O(ε).
    let shifts: Vec<f64> = [1e-4, 1e-5, 1e-6]
        .iter()
        .map(|eps| {
            let c = first_right_turn(&m, *eps);
            assert!(c.state.b[0].abs() <= 1e-10);
            assert!(c.state.a[0] > params.center());
            c.time - quarter
        })
        .collect();
    assert!(shifts[2].abs() < 1e-5, "{shifts:?}");
    let ratio = shifts[0] / shifts[1];
    assert!((8.0..12.0).contains(&ratio), "{shifts:?}");
}

#[test]
fn sign_constraint_filters_direction() {
    let m = model(4);
    let params = m.params();
    // b₀ starts positive and first crosses a₀ = center moving right.
    let s = State::planar(m.mode_count(), 0.2, 0.0);
    let c = params.center();
    let first = |sign| {
        let section = SectionSpec {
            kind: SectionKind::A0Equals,
            level: c,
            sign_constraint: sign,
        };
        let mut p = Propagator::new(&m, s.clone(), Scheme::Split2, 1e-3, Some(section)).unwrap();
        loop {
            if let Some(x) = p.step().unwrap() {
                break x;
            }
        }
    };
    let right = first(SignConstraint::B0Positive);
    let left = first(SignConstraint::B0Negative);
    assert!(right.state.b[0] > 0.0 && left.state.b[0] < 0.0);
    assert!(left.time > right.time);
    let planar = PlanarState::new(right.state.a[0], right.state.b[0]);
    assert!((planar.a0 - c).abs() <= 1e-10);
}

#[test]
fn non_finite_state_is_reported() {
    let m = model(2);
    let s = State::planar(m.mode_count(), 50.0, 0.0);
    let mut cfg = StepperConfig::new(0.5, 100.0);
    cfg.scheme = Scheme::Rk4;
    let err = evolve(&m, &s, &cfg).unwrap_err();
    assert!(matches!(err, kgorbit_core::KgError::NonFiniteState { .. }));
}
