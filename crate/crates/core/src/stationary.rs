//! The space-stationary plane `aₖ = bₖ = 0, k ≥ 1`.
//!
//! On this plane the dynamics reduce to `ȧ₀ = b₀, ḃ₀ = m²a₀ - a₀^{2p+1}`, which
//! conserves `b₀² + f(a₀)`. The zero level carries the homoclinic loop; the
//! level `f(η)` for `0 < η < m^{1/p}` carries the periodic orbit `K_η` between
//! the turning points `η` and `η'`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::hamiltonian::{Model, State};
use crate::quadrature;
use crate::spectra::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarState {
    pub a0: f64,
    pub b0: f64,
}

impl PlanarState {
    pub fn new(a0: f64, b0: f64) -> Self {
        Self { a0, b0 }
    }

    /// `b₀² + f(a₀)`, conserved by the planar flow.
    pub fn level(&self, params: &ModelParams) -> f64 {
        self.b0 * self.b0 + params.f(self.a0)
    }

    pub fn embed(&self, modes: usize) -> State {
        State::planar(modes, self.a0, self.b0)
    }
}

/// One member of the periodic family, sampled at equal times over a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub eta: f64,
    pub eta_prime: f64,
    pub period: f64,
    pub samples: Vec<(f64, PlanarState)>,
    pub energy_level: f64,
}

/// The turning-point pair `δ < m^{1/p} < δ'` on a common level of `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaBand {
    pub delta: f64,
    pub delta_prime: f64,
}

impl DeltaBand {
    pub fn contains(&self, a0: f64) -> bool {
        (self.delta..=self.delta_prime).contains(&a0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierClass {
    /// Complex-conjugate pair on the unit circle.
    Elliptic,
    /// Real reciprocal pair.
    Hyperbolic,
    /// Double multiplier at ±1, within tolerance.
    Parabolic,
}

/// Monodromy of one linearised non-stationary mode over one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monodromy {
    pub matrix: [[f64; 2]; 2],
    pub multipliers: [Complex64; 2],
    pub mode_eigenvalue: f64,
    pub trace: f64,
    pub det: f64,
    pub class: MultiplierClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloquetConfig {
    pub dt: f64,
    /// When false the potential `V(t)` is dropped.
    pub with_potential: bool,
}

impl Default for FloquetConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            with_potential: true,
        }
    }
}

fn pf(params: &ModelParams) -> f64 {
    f64::from(params.p)
}

/// Closed-form homoclinic solution `(h(t), h'(t))`.
pub fn homoclinic(t: f64, params: &ModelParams) -> PlanarState {
    let p = pf(params);
    let m = params.m;
    let amp = params.homoclinic_amplitude();
    let x = p * m * t;
    let ch = x.cosh();
    let a0 = amp / ch.powf(1.0 / p);
    let b0 = -m * amp * x.sinh() / ch.powf(1.0 / p + 1.0);
    PlanarState { a0, b0 }
}

fn check_eta(eta: f64, params: &ModelParams) -> Result<()> {
    let c = params.center();
    if !(eta > 0.0 && eta < c) {
        return Err(KgError::OutOfRange(format!(
            "η must lie in (0, m^(1/p)) = (0, {c}), got {eta}"
        )));
    }
    Ok(())
}

/// `G(α) = (f(η) - f(α)) / (α² - η²)`, a polynomial that vanishes at `η'`.
fn reduced_gap(alpha: f64, eta: f64, params: &ModelParams) -> f64 {
    let p = params.p as i32;
    let (a2, e2) = (alpha * alpha, eta * eta);
    let sum: f64 = (0..=p).map(|j| a2.powi(j) * e2.powi(p - j)).sum();
    params.m * params.m - sum / (pf(params) + 1.0)
}

/// `G(α)/s²` for `α = η' - s²`, expanded so that no cancellation occurs near `η'`.
fn reduced_gap_over_s2(alpha: f64, eta: f64, eta_prime: f64, params: &ModelParams) -> f64 {
    let p = params.p as i32;
    let (a2, e2, t2) = (alpha * alpha, eta * eta, eta_prime * eta_prime);
    let mut sum = 0.0;
    for j in 1..=p {
        let inner: f64 = (0..j).map(|i| a2.powi(i) * t2.powi(j - 1 - i)).sum();
        sum += e2.powi(p - j) * inner;
    }
    (alpha + eta_prime) * sum / (pf(params) + 1.0)
}

fn bisect<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64) -> f64 {
    let g_lo = g(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if gm.signum() == g_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Right turning point `η'` with `f(η') = f(η)`.
pub fn turning_point(eta: f64, params: &ModelParams) -> Result<f64> {
    check_eta(eta, params)?;
    let root = bisect(
        |a| reduced_gap(a, eta, params),
        params.center(),
        params.homoclinic_amplitude(),
    );
    // One Newton polish on f(α) - f(η).
    let fp = params.f_prime(root);
    let polished = root - (params.f(root) - params.f(eta)) / fp;
    let better = (params.f(polished) - params.f(eta)).abs() < (params.f(root) - params.f(eta)).abs();
    Ok(if better && polished > params.center() { polished } else { root })
}

/// `δ'` for a given `δ`.
pub fn delta_band(delta: f64, params: &ModelParams) -> Result<DeltaBand> {
    let delta_prime = turning_point(delta, params)?;
    Ok(DeltaBand { delta, delta_prime })
}

/// The band with `δ = m^{1/p}/2`.
pub fn default_band(params: &ModelParams) -> DeltaBand {
    delta_band(0.5 * params.center(), params).expect("midpoint lies inside (0, m^(1/p))")
}

/// Period `T(η) = 2∫_η^{η'} dα / √(f(η) - f(α))`.
///
/// The left end is handled by `α = η cosh θ` and the right end by
/// `α = η' - s²`; both turn the integrand smooth.
pub fn period(eta: f64, params: &ModelParams) -> Result<f64> {
    check_eta(eta, params)?;
    let eta_prime = turning_point(eta, params)?;
    let split = params.center();
    let tol = 1e-13;

    let theta_max = (split / eta).acosh();
    let left = quadrature::integrate(
        |theta| 1.0 / reduced_gap(eta * theta.cosh(), eta, params).sqrt(),
        0.0,
        theta_max,
        tol,
    );
    let s_max = (eta_prime - split).sqrt();
    let right = quadrature::integrate(
        |s| {
            let alpha = eta_prime - s * s;
            let root = ((alpha - eta) * (alpha + eta)).sqrt();
            2.0 / (root * reduced_gap_over_s2(alpha, eta, eta_prime, params).sqrt())
        },
        0.0,
        s_max,
        tol,
    );
    Ok(2.0 * (left.value + right.value))
}

fn planar_rhs(params: &ModelParams, s: PlanarState) -> PlanarState {
    PlanarState {
        a0: s.b0,
        b0: params.force(s.a0),
    }
}

/// One RK4 step of the planar system.
pub fn planar_rk4_step(params: &ModelParams, s: PlanarState, dt: f64) -> PlanarState {
    let at = |s: PlanarState, k: PlanarState, h: f64| PlanarState {
        a0: s.a0 + h * k.a0,
        b0: s.b0 + h * k.b0,
    };
    let k1 = planar_rhs(params, s);
    let k2 = planar_rhs(params, at(s, k1, 0.5 * dt));
    let k3 = planar_rhs(params, at(s, k2, 0.5 * dt));
    let k4 = planar_rhs(params, at(s, k3, dt));
    PlanarState {
        a0: s.a0 + dt / 6.0 * (k1.a0 + 2.0 * k2.a0 + 2.0 * k3.a0 + k4.a0),
        b0: s.b0 + dt / 6.0 * (k1.b0 + 2.0 * k2.b0 + 2.0 * k3.b0 + k4.b0),
    }
}

/// Integrates the planar system over `duration` with steps no longer than `max_dt`.
pub fn planar_flow(params: &ModelParams, s: PlanarState, duration: f64, max_dt: f64) -> PlanarState {
    if duration == 0.0 {
        return s;
    }
    let n = (duration.abs() / max_dt).ceil().max(1.0) as usize;
    let h = duration / n as f64;
    (0..n).fold(s, |acc, _| planar_rk4_step(params, acc, h))
}

const ORBIT_DT: f64 = 5e-4;

/// Samples `K_η` at `n_samples` equal times over one period, starting at `(η, 0)`.
pub fn sample_orbit(eta: f64, n_samples: usize, params: &ModelParams) -> Result<PeriodicOrbit> {
    if n_samples < 16 {
        return Err(KgError::InvalidParameter(format!(
            "need at least 16 orbit samples, got {n_samples}"
        )));
    }
    let period = period(eta, params)?;
    let eta_prime = turning_point(eta, params)?;
    let h = period / n_samples as f64;
    let mut samples = Vec::with_capacity(n_samples);
    let mut s = PlanarState::new(eta, 0.0);
    for j in 0..n_samples {
        samples.push((j as f64 * h, s));
        s = planar_flow(params, s, h, ORBIT_DT);
    }
    Ok(PeriodicOrbit {
        eta,
        eta_prime,
        period,
        samples,
        energy_level: params.f(eta),
    })
}

impl PeriodicOrbit {
    /// Planar state at time `t ∈ [0, T)`, integrated from the preceding sample.
    pub fn point_at(&self, t: f64, params: &ModelParams) -> PlanarState {
        let t = t.rem_euclid(self.period);
        let h = self.period / self.samples.len() as f64;
        let j = ((t / h).floor() as usize).min(self.samples.len() - 1);
        let (tj, sj) = self.samples[j];
        planar_flow(params, sj, t - tj, ORBIT_DT)
    }
}

/// Inverse of `f` on one monotone branch: left is `(0, m^{1/p})`, right is `(m^{1/p}, ∞)`.
pub fn f_inverse(value: f64, left_branch: bool, params: &ModelParams) -> Option<f64> {
    let c = params.center();
    let f_min = params.f(c);
    if !(value.is_finite() && value >= f_min) {
        return None;
    }
    if left_branch {
        if value > 0.0 {
            return None;
        }
        Some(bisect(|x| params.f(x) - value, 0.0, c))
    } else {
        let mut hi = 2.0 * params.homoclinic_amplitude();
        while params.f(hi) < value {
            hi *= 2.0;
        }
        Some(bisect(|x| params.f(x) - value, c, hi))
    }
}

/// Point of `K_η` associated with a planar state.
///
/// Inside `[δ, δ']` the abscissa is kept and `b₀` adjusted; outside, `b₀` is
/// kept and `a₀` moved along the monotone branch of `f` that contains it.
pub fn project_to_k(s: PlanarState, eta: f64, band: &DeltaBand, params: &ModelParams) -> Result<PlanarState> {
    check_eta(eta, params)?;
    let level = params.f(eta);
    if band.contains(s.a0) {
        let gap = level - params.f(s.a0);
        if gap < 0.0 {
            return Err(KgError::ProjectionUndefined(format!(
                "a₀ = {} lies outside the level set of η = {eta}",
                s.a0
            )));
        }
        let sign = if s.b0 >= 0.0 { 1.0 } else { -1.0 };
        Ok(PlanarState::new(s.a0, sign * gap.sqrt()))
    } else {
        let left = s.a0 < band.delta;
        let target = level - s.b0 * s.b0;
        match f_inverse(target, left, params) {
            Some(a0) => Ok(PlanarState::new(a0, s.b0)),
            None => Err(KgError::ProjectionUndefined(format!(
                "f(η) - b₀² = {target} is not attained on the branch of a₀ = {}",
                s.a0
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistancePath {
    Projection,
    BruteForce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceToK {
    pub distance: f64,
    pub path: DistancePath,
}

fn dist_to_planar_point(model: &Model, s: &State, target: PlanarState) -> f64 {
    let (h1, l2) = model.off_plane_sq_parts(s);
    let da = s.a[0] - target.a0;
    let db = s.b[0] - target.b0;
    (h1 + da * da).sqrt() + (l2 + db * db).sqrt()
}

/// Minimum X-distance from `s` to the orbit, searched over its samples and
/// refined by golden section along the flow.
pub fn brute_force_dist_to_k(model: &Model, s: &State, orbit: &PeriodicOrbit) -> f64 {
    let params = model.params();
    let (best_j, _) = orbit
        .samples
        .iter()
        .enumerate()
        .map(|(j, (_, p))| (j, dist_to_planar_point(model, s, *p)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("orbit has samples");
    let h = orbit.period / orbit.samples.len() as f64;
    let t_best = orbit.samples[best_j].0;
    let eval = |t: f64| dist_to_planar_point(model, s, orbit.point_at(t, params));
    let (mut lo, mut hi) = (t_best - h, t_best + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    for _ in 0..80 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = eval(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = eval(x2);
        }
    }
    f1.min(f2).min(eval(t_best))
}

/// X-distance from `s` to `K_η`, by projection when defined and brute force otherwise.
pub fn dist_to_k(model: &Model, s: &State, orbit: &PeriodicOrbit, band: &DeltaBand) -> Result<DistanceToK> {
    model.check_state(s)?;
    let planar = PlanarState::new(s.a[0], s.b[0]);
    match project_to_k(planar, orbit.eta, band, model.params()) {
        Ok(target) => Ok(DistanceToK {
            distance: dist_to_planar_point(model, s, target),
            path: DistancePath::Projection,
        }),
        Err(KgError::ProjectionUndefined(_)) => Ok(DistanceToK {
            distance: brute_force_dist_to_k(model, s, orbit),
            path: DistancePath::BruteForce,
        }),
        Err(e) => Err(e),
    }
}

/// Tolerance on `|trace| - 2` below which multipliers count as parabolic.
const PARABOLIC_TOL: f64 = 1e-9;

/// Monodromy of `ȧ = b, ḃ = -(λₙ² - m²)a - V(t)a` with `V = (2p+1)a₀^{2p}` along `K_η`.
///
/// The planar orbit is re-integrated jointly with both fundamental solutions
/// by RK4, using `⌈T/dt⌉` equal steps over exactly one period.
pub fn floquet(orbit: &PeriodicOrbit, lambda_n: f64, params: &ModelParams, cfg: &FloquetConfig) -> Result<Monodromy> {
    if lambda_n.is_nan() || lambda_n <= params.m {
        return Err(KgError::OutOfRange(format!(
            "λₙ must exceed m = {}, got {lambda_n}",
            params.m
        )));
    }
    if cfg.dt.is_nan() || cfg.dt <= 0.0 {
        return Err(KgError::InvalidParameter(format!("dt must be positive, got {}", cfg.dt)));
    }
    let w2 = lambda_n * lambda_n - params.m * params.m;
    let two_p = 2 * params.p as i32;
    let coupling = f64::from(2 * params.p + 1);
    let with_v = cfg.with_potential;
    // y = [a0, b0, x1, y1, x2, y2]
    let rhs = |y: &[f64; 6]| -> [f64; 6] {
        let v = if with_v { coupling * y[0].powi(two_p) } else { 0.0 };
        [
            y[1],
            params.force(y[0]),
            y[3],
            -(w2 + v) * y[2],
            y[5],
            -(w2 + v) * y[4],
        ]
    };
    let n = (orbit.period / cfg.dt).ceil().max(1.0) as usize;
    let h = orbit.period / n as f64;
    let mut y = [orbit.eta, 0.0, 1.0, 0.0, 0.0, 1.0];
    let add = |y: &[f64; 6], k: &[f64; 6], s: f64| -> [f64; 6] {
        std::array::from_fn(|i| y[i] + s * k[i])
    };
    for _ in 0..n {
        let k1 = rhs(&y);
        let k2 = rhs(&add(&y, &k1, 0.5 * h));
        let k3 = rhs(&add(&y, &k2, 0.5 * h));
        let k4 = rhs(&add(&y, &k3, h));
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    let matrix = [[y[2], y[4]], [y[3], y[5]]];
    Ok(monodromy_from(matrix, lambda_n))
}

fn monodromy_from(matrix: [[f64; 2]; 2], lambda_n: f64) -> Monodromy {
    let trace = matrix[0][0] + matrix[1][1];
    let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
    let half = 0.5 * trace;
    let disc = half * half - det;
    let multipliers = if disc < 0.0 {
        let im = (-disc).sqrt();
        [Complex64::new(half, im), Complex64::new(half, -im)]
    } else {
        let re = disc.sqrt();
        [Complex64::new(half + re, 0.0), Complex64::new(half - re, 0.0)]
    };
    let class = if (trace.abs() - 2.0).abs() <= PARABOLIC_TOL {
        MultiplierClass::Parabolic
    } else if trace.abs() < 2.0 {
        MultiplierClass::Elliptic
    } else {
        MultiplierClass::Hyperbolic
    };
    Monodromy {
        matrix,
        multipliers,
        mode_eigenvalue: lambda_n,
        trace,
        det,
        class,
    }
}
