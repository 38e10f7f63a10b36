//! Stability experiments around the periodic orbits `K_η`.
//!
//! Every constant reported here is fitted from the run itself; nothing is
//! asserted a priori beyond exponents and boundedness.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::hamiltonian::{phi_from, EnergyBreakdown, Model, State};
use crate::integrators::{
    Propagator, SectionKind, SectionSpec, SignConstraint, StepperConfig, Trajectory,
};
use crate::spectra::ModelParams;
use crate::stationary::{
    dist_to_k, f_inverse, period, sample_orbit, DeltaBand, PeriodicOrbit, PlanarState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Equal X-norm share per mode with seeded phases between position and momentum.
    Equipartition,
    /// Whole budget in the position of the first listed mode.
    SingleMode,
    /// Gaussian direction in the listed modes.
    RandomDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// X-distance from the base point.
    pub amplitude: f64,
    /// Mode indices; 0 perturbs the planar pair.
    pub mode_set: Vec<usize>,
    pub distribution: Distribution,
    pub seed: u64,
}

impl PerturbationSpec {
    /// Budget `η³` spread over modes `1..=8`.
    pub fn standard(eta: f64, seed: u64) -> Self {
        Self {
            amplitude: eta.powi(3),
            mode_set: (1..=8).collect(),
            distribution: Distribution::Equipartition,
            seed,
        }
    }
}

/// Sampling density used for the brute-force distance fallback.
pub const ORBIT_SAMPLES: usize = 2048;

/// Perturbs a point of `K_η` by exactly `spec.amplitude` in X-norm.
pub fn perturb_near_k(model: &Model, eta: f64, base: PlanarState, spec: &PerturbationSpec) -> Result<State> {
    let params = model.params();
    let level = params.f(eta);
    if (base.level(params) - level).abs() > 1e-9 {
        return Err(KgError::InvalidParameter(format!(
            "base point ({}, {}) is not on K_η for η = {eta}",
            base.a0, base.b0
        )));
    }
    if spec.mode_set.is_empty() {
        return Err(KgError::EmptyModeSet);
    }
    if let Some(bad) = spec.mode_set.iter().find(|k| **k >= model.mode_count()) {
        return Err(KgError::OutOfRange(format!(
            "mode {bad} exceeds the {} available modes",
            model.mode_count()
        )));
    }
    if !(spec.amplitude >= 0.0 && spec.amplitude.is_finite()) {
        return Err(KgError::InvalidParameter(format!(
            "amplitude must be non-negative, got {}",
            spec.amplitude
        )));
    }
    let mut s = base.embed(model.mode_count());
    if spec.amplitude == 0.0 {
        return Ok(s);
    }

    let n = model.mode_count();
    let mut direction = State::zeros(n);
    let weight = |k: usize| (1.0 + model.table().modes()[k].eigenvalue_sq).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.distribution {
        Distribution::SingleMode => {
            let k = spec.mode_set[0];
            direction.a[k] = 1.0 / weight(k);
        }
        Distribution::Equipartition => {
            for &k in &spec.mode_set {
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                direction.a[k] = theta.cos() / weight(k);
                direction.b[k] = theta.sin();
            }
        }
        Distribution::RandomDirection => {
            for &k in &spec.mode_set {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                direction.a[k] = x / weight(k);
                direction.b[k] = y;
            }
        }
    }
    let norm = model.xnorm(&direction)?;
    if norm == 0.0 {
        return Err(KgError::InvalidParameter("degenerate perturbation direction".into()));
    }
    let scale = spec.amplitude / norm;
    for k in 0..n {
        s.a[k] += scale * direction.a[k];
        s.b[k] += scale * direction.b[k];
    }
    Ok(s)
}

/// `|H(s) + ½m²η²|`, the deviation from the orbit's energy.
pub fn energy_deviation(model: &Model, s: &State, eta: f64) -> Result<f64> {
    let m = model.params().m;
    Ok((model.hamiltonian(s)? + 0.5 * m * m * eta * eta).abs())
}

/// The first-return section attached to a starting point.
///
/// Inside `[δ, δ']` the section is `a₀ = a₀(0)` with the sign of `b₀(0)`;
/// outside it is `b₀ = b₀(0)` on the same side of `m^{1/p}` as `a₀(0)`.
pub fn return_section(start: &State, band: &DeltaBand, params: &ModelParams) -> SectionSpec {
    let (a0, b0) = (start.a[0], start.b[0]);
    if band.contains(a0) {
        SectionSpec {
            kind: SectionKind::A0Equals,
            level: a0,
            sign_constraint: if b0 >= 0.0 {
                SignConstraint::B0Positive
            } else {
                SignConstraint::B0Negative
            },
        }
    } else {
        SectionSpec {
            kind: SectionKind::B0Equals,
            level: b0,
            sign_constraint: if a0 < params.center() {
                SignConstraint::A0LeftOfCenter
            } else {
                SignConstraint::A0RightOfCenter
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstReturn {
    pub eta: f64,
    pub return_time: f64,
    pub return_state: State,
    /// Full X-distance between the return state and the start.
    pub return_distance: f64,
    /// Distance restricted to `(a₀, b₀)`.
    pub planar_return_distance: f64,
    pub j_initial: f64,
    pub j_at_return: f64,
    pub reference_period: f64,
    /// `T / ln(1/η)`.
    pub log_ratio: f64,
    /// Whether `T` lies within `[½, 2]·T(η)`, the fitted logarithmic bounds.
    pub within_log_bounds: bool,
    pub section: SectionSpec,
}

/// Extremes observed along one loop.
#[derive(Debug, Clone, Copy, Default)]
struct LoopStats {
    max_j: f64,
    min_a0: f64,
    max_dist: f64,
}

struct Monitor<'a> {
    orbit: &'a PeriodicOrbit,
    band: &'a DeltaBand,
    stride: u64,
    j_series: Vec<(f64, f64)>,
}

fn run_loop(
    model: &Model,
    start: &State,
    section: SectionSpec,
    wait: f64,
    cfg: &StepperConfig,
    loop_index: usize,
    mut monitor: Option<&mut Monitor<'_>>,
) -> Result<(f64, State, LoopStats)> {
    let mut prop = Propagator::new(model, start.clone(), cfg.scheme, cfg.dt, Some(section))?;
    let mut stats = LoopStats {
        max_j: model.j_energy(start),
        min_a0: start.a[0],
        max_dist: 0.0,
    };
    let observe = |s: &State, stats: &mut LoopStats, monitor: &mut Option<&mut Monitor<'_>>| -> Result<()> {
        let j = model.j_energy(s);
        stats.max_j = stats.max_j.max(j);
        stats.min_a0 = stats.min_a0.min(s.a[0]);
        if let Some(mon) = monitor.as_deref_mut() {
            mon.j_series.push((s.t, j));
            let d = dist_to_k(model, s, mon.orbit, mon.band)?.distance;
            stats.max_dist = stats.max_dist.max(d);
        }
        Ok(())
    };
    observe(start, &mut stats, &mut monitor)?;
    let stride = monitor.as_ref().map_or(cfg.sample_stride as u64, |m| m.stride).max(1);
    loop {
        let event = prop.step()?;
        // The section contains the start point; ignore a grazing re-entry on the first step.
        if let Some(c) = event.filter(|_| prop.steps() > 1) {
            observe(&c.state, &mut stats, &mut monitor)?;
            return Ok((c.time, c.state, stats));
        }
        if prop.steps() % stride == 0 {
            observe(prop.state(), &mut stats, &mut monitor)?;
        }
        if prop.time() - start.t > wait {
            return Err(KgError::NoReturn {
                loop_index,
                waited: wait,
            });
        }
    }
}

fn planar_distance(a: &State, b: &State) -> f64 {
    (a.a[0] - b.a[0]).abs() + (a.b[0] - b.b[0]).abs()
}

/// Integrates from `s0` until the first return to its section.
pub fn run_first_return(model: &Model, s0: &State, eta: f64, band: &DeltaBand, cfg: &StepperConfig) -> Result<FirstReturn> {
    cfg.validate()?;
    let params = model.params();
    let reference = period(eta, params)?;
    let section = return_section(s0, band, params);
    let (time, state, _) = run_loop(model, s0, section, 10.0 * reference, cfg, 0, None)?;
    let return_time = time - s0.t;
    let log_eta = (1.0 / eta).ln();
    Ok(FirstReturn {
        eta,
        return_time,
        return_distance: model.dist_x(&state, s0)?,
        planar_return_distance: planar_distance(&state, s0),
        j_initial: model.j_energy(s0),
        j_at_return: model.j_energy(&state),
        reference_period: reference,
        log_ratio: return_time / log_eta,
        within_log_bounds: (0.5 * reference..=2.0 * reference).contains(&return_time),
        return_state: state,
        section,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub loop_index: usize,
    /// Absolute time of the return.
    pub return_time: f64,
    /// Duration of this loop.
    pub loop_time: f64,
    /// X-distance between the return state and the loop's starting state.
    pub return_distance: f64,
    pub j_at_start: f64,
    pub j_at_return: f64,
    /// η of the orbit through this loop's starting point.
    pub eta_baseline: f64,
    pub max_dist_to_k: f64,
    pub max_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub eta: f64,
    pub loop_records: Vec<LoopRecord>,
    pub j_series: Vec<(f64, f64)>,
    pub h0: f64,
    pub per_loop_growth: Vec<f64>,
    pub fits: BTreeMap<String, LinearFit>,
    /// `J ≤ η⁵` held at every sample.
    pub j_within_regime: bool,
    /// Stopped because `J` exceeded `η⁵`.
    pub regime_exit: bool,
    /// `max dist_X(·, K_η) / η²` over the run.
    pub empirical_c: f64,
    /// `max dist ≤ C·η²` for the supplied `C`, if one was supplied.
    pub distance_within_bound: Option<bool>,
    pub min_a0: f64,
    /// `a₀ ≥ η/2` throughout.
    pub confinement_held: bool,
    pub rebaseline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopOptions {
    /// Re-derive `η'` and the section from each return point.
    pub rebaseline: bool,
    /// Constant `C` for the verdict `max dist ≤ C·η²`.
    pub distance_constant: Option<f64>,
    /// Steps between monitored samples.
    pub monitor_stride: u64,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            rebaseline: true,
            distance_constant: None,
            monitor_stride: 20,
        }
    }
}

/// Default loop budget `⌈c·ln(1/η)⌉`.
pub fn default_loop_budget(eta: f64, c: f64) -> usize {
    (c * (1.0 / eta).ln()).ceil().max(1.0) as usize
}

/// `η'` with `(a₀, b₀) ∈ K_{η'}`, when the level lies inside the loop.
pub fn orbit_parameter(s: PlanarState, params: &ModelParams) -> Option<f64> {
    let level = s.level(params);
    if level >= 0.0 {
        return None;
    }
    f_inverse(level, true, params)
}

/// Chains first returns, monitoring `J` and the distance to the original `K_η`.
pub fn run_many_loops(
    model: &Model,
    s0: &State,
    eta: f64,
    band: &DeltaBand,
    loop_budget: usize,
    cfg: &StepperConfig,
    opts: &LoopOptions,
) -> Result<StabilityReport> {
    cfg.validate()?;
    let params = model.params();
    let orbit = sample_orbit(eta, ORBIT_SAMPLES, params)?;
    let j_limit = eta.powi(5);
    let mut monitor = Monitor {
        orbit: &orbit,
        band,
        stride: opts.monitor_stride.max(1),
        j_series: Vec::new(),
    };

    let fixed_section = return_section(s0, band, params);
    let mut start = s0.clone();
    let mut records: Vec<LoopRecord> = Vec::new();
    let mut growth = Vec::new();
    let mut max_dist = 0.0f64;
    let mut min_a0 = f64::INFINITY;
    let mut regime_exit = false;
    let mut j_ok = true;

    for loop_index in 0..loop_budget {
        let planar = PlanarState::new(start.a[0], start.b[0]);
        let eta_baseline = if opts.rebaseline {
            orbit_parameter(planar, params).unwrap_or(eta)
        } else {
            eta
        };
        let section = if opts.rebaseline {
            return_section(&start, band, params)
        } else {
            fixed_section
        };
        let wait = 10.0 * period(eta_baseline, params)?;
        let (time, ret, stats) = run_loop(model, &start, section, wait, cfg, loop_index, Some(&mut monitor))?;
        let reference = if opts.rebaseline { &start } else { s0 };
        let j_start = model.j_energy(&start);
        let j_ret = model.j_energy(&ret);
        if j_start > 0.0 {
            growth.push(j_ret / j_start);
        }
        max_dist = max_dist.max(stats.max_dist);
        min_a0 = min_a0.min(stats.min_a0);
        records.push(LoopRecord {
            loop_index,
            return_time: time,
            loop_time: time - start.t,
            return_distance: model.dist_x(&ret, reference)?,
            j_at_start: j_start,
            j_at_return: j_ret,
            eta_baseline,
            max_dist_to_k: stats.max_dist,
            max_j: stats.max_j,
        });
        if stats.max_j > j_limit {
            j_ok = false;
            regime_exit = true;
            break;
        }
        start = ret;
    }

    let mut fits = BTreeMap::new();
    let idx: Vec<f64> = records.iter().map(|r| r.loop_index as f64 + 1.0).collect();
    let times: Vec<f64> = records.iter().map(|r| r.return_time - s0.t).collect();
    if let Some(f) = linear_fit(&idx, &times) {
        fits.insert("cumulative_time_vs_loop".to_string(), f);
    }
    if records.iter().all(|r| r.j_at_return > 0.0) {
        let lj: Vec<f64> = records.iter().map(|r| r.j_at_return.ln()).collect();
        if let Some(f) = linear_fit(&idx, &lj) {
            fits.insert("log_j_vs_loop".to_string(), f);
        }
    }
    let empirical_c = max_dist / (eta * eta);
    Ok(StabilityReport {
        eta,
        loop_records: records,
        j_series: monitor.j_series,
        h0: model.hamiltonian(s0)?,
        per_loop_growth: growth,
        fits,
        j_within_regime: j_ok,
        regime_exit,
        empirical_c,
        distance_within_bound: opts.distance_constant.map(|c| max_dist <= c * eta * eta),
        min_a0,
        confinement_held: min_a0 >= 0.5 * eta,
        rebaseline: opts.rebaseline,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSweep {
    pub etas: Vec<f64>,
    pub periods: Vec<f64>,
    /// `T = A·ln(1/η) + B`: `slope` is A, `intercept` is B.
    pub fit: LinearFit,
}

/// Fits the quadrature periods against `ln(1/η)`.
pub fn period_scaling_sweep(etas: &[f64], params: &ModelParams) -> Result<PeriodSweep> {
    let periods = etas
        .iter()
        .map(|e| period(*e, params))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = etas.iter().map(|e| (1.0 / e).ln()).collect();
    let fit = linear_fit(&x, &periods).ok_or(KgError::InsufficientSamples {
        needed: 2,
        found: etas.len(),
    })?;
    Ok(PeriodSweep {
        etas: etas.to_vec(),
        periods,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IBoundCheck {
    /// `I` vanished identically, so the bound says nothing.
    pub vacuous: bool,
    /// `max |İ| / (a₀^{2p-1}|ȧ₀| I + I^{3/2})`.
    pub fitted_c: Option<f64>,
    pub cap: f64,
    /// Time intervals where the ratio exceeded `cap`.
    pub violations: Vec<(f64, f64)>,
    pub samples_used: usize,
}

/// Empirical constant in `|İ| ≤ C a₀^{2p-1}|ȧ₀| I + C I^{3/2}`.
pub fn bound_check_i(traj: &Trajectory, params: &ModelParams, cap: f64) -> Result<IBoundCheck> {
    let n = traj.energy_series.len();
    if n < 3 || traj.states.len() != n {
        return Err(KgError::InsufficientSamples { needed: 3, found: n });
    }
    let series: Vec<f64> = traj.energy_series.iter().map(|e| e.i).collect();
    if series.iter().all(|v| *v == 0.0) {
        return Ok(IBoundCheck {
            vacuous: true,
            fitted_c: None,
            cap,
            violations: Vec::new(),
            samples_used: 0,
        });
    }
    let p = params.p as i32;
    let mut fitted = 0.0f64;
    let mut used = 0;
    let mut violations: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for k in 1..n - 1 {
        let dt = traj.times[k + 1] - traj.times[k - 1];
        let di = (series[k + 1] - series[k - 1]) / dt;
        let s = &traj.states[k];
        let i = series[k];
        let rhs = s.a[0].abs().powi(2 * p - 1) * s.b[0].abs() * i + i.powf(1.5);
        if rhs <= 0.0 {
            continue;
        }
        used += 1;
        let ratio = di.abs() / rhs;
        fitted = fitted.max(ratio);
        let t = traj.times[k];
        if ratio > cap {
            open = Some(open.map_or((t, t), |(a, _)| (a, t)));
        } else if let Some(iv) = open.take() {
            violations.push(iv);
        }
    }
    if let Some(iv) = open {
        violations.push(iv);
    }
    Ok(IBoundCheck {
        vacuous: false,
        fitted_c: (used > 0).then_some(fitted),
        cap,
        violations,
        samples_used: used,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiBoundCheck {
    /// `max |φ(t)| / min(1, t²)`.
    pub fitted_c: Option<f64>,
    pub max_abs_phi: f64,
    pub phi_series: Vec<(f64, f64)>,
}

/// Empirical constant in `|φ(t)| ≤ C·min(1, t²)` along a trajectory.
pub fn bound_check_phi(traj: &Trajectory, eta: f64) -> Result<PhiBoundCheck> {
    let n = traj.energy_series.len();
    if n < 2 {
        return Err(KgError::InsufficientSamples { needed: 2, found: n });
    }
    let initial: EnergyBreakdown = traj.energy_series[0];
    let t0 = traj.times[0];
    let mut fitted: Option<f64> = None;
    let mut max_abs = 0.0f64;
    let mut series = Vec::with_capacity(n);
    for (t, e) in traj.times.iter().zip(&traj.energy_series) {
        let phi = phi_from(e, &initial, eta);
        series.push((*t, phi));
        max_abs = max_abs.max(phi.abs());
        let tau = t - t0;
        if tau > 0.0 {
            let ratio = phi.abs() / tau.powi(2).min(1.0);
            fitted = Some(fitted.map_or(ratio, |c: f64| c.max(ratio)));
        }
    }
    Ok(PhiBoundCheck {
        fitted_c: fitted,
        max_abs_phi: max_abs,
        phi_series: series,
    })
}
