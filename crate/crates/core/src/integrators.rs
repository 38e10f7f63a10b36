//! Fixed-step time integration of the mode system.
//!
//! `Split2` is the Strang composition `kick(dt/2) ∘ linear(dt) ∘ kick(dt/2)`:
//! the linear part `ȧₙ = bₙ, ḃₙ = -(λₙ² - m²)aₙ` is advanced exactly (a rotation
//! for `n ≥ 1`, a cosh/sinh map for the hyperbolic constant mode) and the kick
//! applies only the projected nonlinearity. `Rk4` is the classical four-stage
//! method, kept as a cross-check.
//!
//! Section crossings are refined by re-integrating from the bracketing state
//! with a single substep of adjustable length, so the refined point lies on
//! the numerical flow.

use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::hamiltonian::{EnergyBreakdown, Model, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Split2,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    A0Equals,
    B0Equals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConstraint {
    B0Positive,
    B0Negative,
    A0LeftOfCenter,
    A0RightOfCenter,
}

/// A Poincaré section in the `(a₀, b₀)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub kind: SectionKind,
    pub level: f64,
    pub sign_constraint: SignConstraint,
}

/// Residual below which a refined crossing is accepted.
pub const CROSSING_TOLERANCE: f64 = 1e-10;

impl SectionSpec {
    pub fn residual(&self, s: &State) -> f64 {
        match self.kind {
            SectionKind::A0Equals => s.a[0] - self.level,
            SectionKind::B0Equals => s.b[0] - self.level,
        }
    }

    /// Whether the orientation condition holds at `s`; `center` is `m^{1/p}`.
    pub fn admits(&self, s: &State, center: f64) -> bool {
        match self.sign_constraint {
            SignConstraint::B0Positive => s.b[0] > 0.0,
            SignConstraint::B0Negative => s.b[0] < 0.0,
            SignConstraint::A0LeftOfCenter => s.a[0] < center,
            SignConstraint::A0RightOfCenter => s.a[0] > center,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub max_time: f64,
    pub sample_stride: usize,
    pub section: Option<SectionSpec>,
}

impl StepperConfig {
    pub fn new(dt: f64, max_time: f64) -> Self {
        Self {
            dt,
            scheme: Scheme::Split2,
            max_time,
            sample_stride: 1,
            section: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(KgError::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.max_time.is_finite() && self.max_time >= 0.0) {
            return Err(KgError::InvalidParameter(format!(
                "max_time must be non-negative, got {}",
                self.max_time
            )));
        }
        if self.sample_stride == 0 {
            return Err(KgError::InvalidParameter("sample_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of fixed steps needed to reach `max_time`.
    pub fn step_count(&self) -> u64 {
        ((self.max_time / self.dt) * (1.0 - 1e-12)).ceil() as u64
    }
}

/// A refined section crossing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub time: f64,
    pub state: State,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub events: Vec<Crossing>,
    pub energy_series: Vec<EnergyBreakdown>,
}

/// Exact flow of `ẋ = y, ẏ = -w x` over time `dt`, as a 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearBlock {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl LinearBlock {
    pub fn new(stiffness: f64, dt: f64) -> Self {
        if stiffness > 0.0 {
            let w = stiffness.sqrt();
            let (s, c) = (w * dt).sin_cos();
            Self {
                m11: c,
                m12: s / w,
                m21: -w * s,
                m22: c,
            }
        } else if stiffness < 0.0 {
            let k = (-stiffness).sqrt();
            let (sh, ch) = ((k * dt).sinh(), (k * dt).cosh());
            Self {
                m11: ch,
                m12: sh / k,
                m21: k * sh,
                m22: ch,
            }
        } else {
            Self {
                m11: 1.0,
                m12: dt,
                m21: 0.0,
                m22: 1.0,
            }
        }
    }

    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    #[inline]
    fn apply(&self, a: f64, b: f64) -> (f64, f64) {
        (self.m11 * a + self.m12 * b, self.m21 * a + self.m22 * b)
    }
}

fn linear_blocks(model: &Model, dt: f64) -> Vec<LinearBlock> {
    model.stiffness().iter().map(|w| LinearBlock::new(*w, dt)).collect()
}

fn apply_linear(blocks: &[LinearBlock], s: &mut State) {
    for (blk, (a, b)) in blocks.iter().zip(s.a.iter_mut().zip(s.b.iter_mut())) {
        let (na, nb) = blk.apply(*a, *b);
        *a = na;
        *b = nb;
    }
}

fn kick(s: &mut State, nl: &[f64], half: f64) {
    for (b, n) in s.b.iter_mut().zip(nl) {
        *b -= half * n;
    }
}

/// Exact linear flow over `dt` with the nonlinearity switched off.
pub fn linear_flow(model: &Model, s: &State, dt: f64) -> Result<State> {
    model.check_state(s)?;
    let mut out = s.clone();
    apply_linear(&linear_blocks(model, dt), &mut out);
    out.t += dt;
    Ok(out)
}

fn split2_with(model: &Model, s: &State, dt: f64, blocks: &[LinearBlock], nl_in: Option<&[f64]>) -> Result<(State, Vec<f64>)> {
    let mut out = s.clone();
    let half = 0.5 * dt;
    match nl_in {
        Some(nl) => kick(&mut out, nl, half),
        None => {
            let nl = model.nonlinear_projection(&out.a)?;
            kick(&mut out, &nl, half);
        }
    }
    apply_linear(blocks, &mut out);
    let nl = model.nonlinear_projection(&out.a)?;
    kick(&mut out, &nl, half);
    out.t = s.t + dt;
    Ok((out, nl))
}

/// One Strang splitting step.
pub fn split2_step(model: &Model, s: &State, dt: f64) -> Result<State> {
    model.check_state(s)?;
    let blocks = linear_blocks(model, dt);
    Ok(split2_with(model, s, dt, &blocks, None)?.0)
}

fn axpy(base: &State, k: &State, h: f64) -> State {
    State {
        a: base.a.iter().zip(&k.a).map(|(x, d)| x + h * d).collect(),
        b: base.b.iter().zip(&k.b).map(|(x, d)| x + h * d).collect(),
        t: base.t + h,
    }
}

/// One classical Runge–Kutta step.
pub fn rk4_step(model: &Model, s: &State, dt: f64) -> Result<State> {
    let k1 = model.rhs(s)?;
    let k2 = model.rhs(&axpy(s, &k1, 0.5 * dt))?;
    let k3 = model.rhs(&axpy(s, &k2, 0.5 * dt))?;
    let k4 = model.rhs(&axpy(s, &k3, dt))?;
    let w = dt / 6.0;
    let mut out = s.clone();
    for n in 0..s.len() {
        out.a[n] += w * (k1.a[n] + 2.0 * k2.a[n] + 2.0 * k3.a[n] + k4.a[n]);
        out.b[n] += w * (k1.b[n] + 2.0 * k2.b[n] + 2.0 * k3.b[n] + k4.b[n]);
    }
    out.t = s.t + dt;
    Ok(out)
}

/// One step of the chosen scheme.
pub fn step(model: &Model, s: &State, dt: f64, scheme: Scheme) -> Result<State> {
    match scheme {
        Scheme::Split2 => split2_step(model, s, dt),
        Scheme::Rk4 => rk4_step(model, s, dt),
    }
}

/// Locates the section crossing between two consecutive states.
///
/// `dt` and `scheme` must be the ones that produced `after` from `before`.
pub fn refine_crossing(
    model: &Model,
    before: &State,
    after: &State,
    section: &SectionSpec,
    dt: f64,
    scheme: Scheme,
) -> Result<Crossing> {
    let r0 = section.residual(before);
    let r1 = section.residual(after);
    let brackets = r0 != 0.0 && (r1 == 0.0 || r0.signum() != r1.signum());
    let center = model.params().center();
    if !brackets || !section.admits(after, center) {
        return Err(KgError::NoCrossing);
    }
    if r1 == 0.0 {
        return Ok(Crossing {
            time: after.t,
            state: after.clone(),
        });
    }

    // Illinois variant of regula falsi on the substep length.
    let (mut lo, mut hi) = (0.0, dt);
    let (mut f_lo, mut f_hi) = (r0, r1);
    let mut best = Crossing {
        time: after.t,
        state: after.clone(),
    };
    let mut best_res = r1.abs();
    let mut side = 0i8;
    for _ in 0..200 {
        let tau = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let tau = if tau > lo && tau < hi { tau } else { 0.5 * (lo + hi) };
        let trial = step(model, before, tau, scheme)?;
        let f = section.residual(&trial);
        if f.abs() < best_res {
            best_res = f.abs();
            best = Crossing {
                time: before.t + tau,
                state: trial,
            };
        }
        if f.abs() <= 0.01 * CROSSING_TOLERANCE || hi - lo <= 4.0 * f64::EPSILON * dt {
            break;
        }
        if f.signum() == f_lo.signum() {
            lo = tau;
            f_lo = f;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = tau;
            f_hi = f;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    if best_res > CROSSING_TOLERANCE || !section.admits(&best.state, center) {
        return Err(KgError::NoCrossing);
    }
    Ok(best)
}

/// Stateful fixed-step driver with optional section detection.
pub struct Propagator<'m> {
    model: &'m Model,
    scheme: Scheme,
    dt: f64,
    state: State,
    t0: f64,
    steps: u64,
    blocks: Vec<LinearBlock>,
    cached_nl: Option<Vec<f64>>,
    section: Option<SectionSpec>,
}

impl<'m> Propagator<'m> {
    pub fn new(model: &'m Model, s0: State, scheme: Scheme, dt: f64, section: Option<SectionSpec>) -> Result<Self> {
        model.check_state(&s0)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(KgError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let blocks = match scheme {
            Scheme::Split2 => linear_blocks(model, dt),
            Scheme::Rk4 => Vec::new(),
        };
        Ok(Self {
            model,
            scheme,
            dt,
            t0: s0.t,
            state: s0,
            steps: 0,
            blocks,
            cached_nl: None,
            section,
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn into_state(self) -> State {
        self.state
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Advances one step; returns the refined crossing if the step crossed the section.
    pub fn step(&mut self) -> Result<Option<Crossing>> {
        let before = self.section.map(|_| self.state.clone());
        let mut next = match self.scheme {
            Scheme::Split2 => {
                let (next, nl) =
                    split2_with(self.model, &self.state, self.dt, &self.blocks, self.cached_nl.as_deref())?;
                self.cached_nl = Some(nl);
                next
            }
            Scheme::Rk4 => rk4_step(self.model, &self.state, self.dt)?,
        };
        self.steps += 1;
        next.t = self.t0 + self.steps as f64 * self.dt;
        if !next.is_finite() {
            return Err(KgError::NonFiniteState { time: next.t });
        }
        self.state = next;

        let (Some(section), Some(before)) = (self.section, before) else {
            return Ok(None);
        };
        let r0 = section.residual(&before);
        let r1 = section.residual(&self.state);
        let crossed = r0 != 0.0 && (r1 == 0.0 || r0.signum() != r1.signum());
        if !crossed || !section.admits(&self.state, self.model.params().center()) {
            return Ok(None);
        }
        match refine_crossing(self.model, &before, &self.state, &section, self.dt, self.scheme) {
            Ok(c) => Ok(Some(c)),
            Err(KgError::NoCrossing) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Integrates to `cfg.max_time`, sampling every `cfg.sample_stride` steps.
pub fn evolve(model: &Model, s0: &State, cfg: &StepperConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut prop = Propagator::new(model, s0.clone(), cfg.scheme, cfg.dt, cfg.section)?;
    let mut traj = Trajectory::default();
    let record = |s: &State, traj: &mut Trajectory| -> Result<()> {
        traj.times.push(s.t);
        traj.energy_series.push(model.energy_breakdown(s)?);
        traj.states.push(s.clone());
        Ok(())
    };
    record(prop.state(), &mut traj)?;
    let n = cfg.step_count();
    for k in 1..=n {
        if let Some(c) = prop.step()? {
            traj.events.push(c);
        }
        if k % cfg.sample_stride as u64 == 0 || k == n {
            record(prop.state(), &mut traj)?;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::ModelParams;

    fn model(k: usize) -> Model {
        Model::new(ModelParams::circle(0.5, 1, k)).unwrap()
    }

    #[test]
    fn zero_is_fixed() {
        let m = model(3);
        let z = State::zeros(m.mode_count());
        let s = split2_step(&m, &z, 1e-2).unwrap();
        assert!(s.a.iter().chain(&s.b).all(|v| *v == 0.0));
        let s = rk4_step(&m, &z, 1e-2).unwrap();
        assert!(s.a.iter().chain(&s.b).all(|v| *v == 0.0));
    }

    #[test]
    fn blocks_are_symplectic() {
        for w in [-0.25, 0.0, 1.0, 39.2, 1.5e3] {
            for dt in [1e-3, 0.1, 1.7] {
                let blk = LinearBlock::new(w, dt);
                assert!((blk.det() - 1.0).abs() < 1e-12, "w={w} dt={dt}");
            }
        }
    }

    #[test]
    fn linear_flow_conserves_oscillator_energy() {
        let m = model(4);
        let mut s = State::zeros(m.mode_count());
        s.a[3] = 0.3;
        s.b[3] = -0.2;
        let w2 = m.stiffness()[3];
        let e0 = w2 * s.a[3].powi(2) + s.b[3].powi(2);
        let out = linear_flow(&m, &s, 0.37).unwrap();
        let e1 = w2 * out.a[3].powi(2) + out.b[3].powi(2);
        assert!((e1 - e0).abs() < 1e-15 * e0.max(1.0) * 10.0);
    }

    #[test]
    fn section_orientation() {
        let spec = SectionSpec {
            kind: SectionKind::B0Equals,
            level: 0.0,
            sign_constraint: SignConstraint::A0LeftOfCenter,
        };
        let left = State::planar(3, 0.1, 0.0);
        let right = State::planar(3, 0.7, 0.0);
        assert!(spec.admits(&left, 0.5));
        assert!(!spec.admits(&right, 0.5));
    }

    #[test]
    fn refine_rejects_bad_brackets() {
        let m = model(2);
        let spec = SectionSpec {
            kind: SectionKind::A0Equals,
            level: 0.3,
            sign_constraint: SignConstraint::B0Positive,
        };
        let s0 = State::planar(m.mode_count(), 0.2, 0.1);
        let s1 = State::planar(m.mode_count(), 0.25, 0.1);
        assert_eq!(
            refine_crossing(&m, &s0, &s1, &spec, 1e-3, Scheme::Split2),
            Err(KgError::NoCrossing)
        );
    }

    #[test]
    fn sampling_layout() {
        let m = model(2);
        let mut cfg = StepperConfig::new(0.01, 1.0);
        cfg.sample_stride = 10;
        let traj = evolve(&m, &State::planar(m.mode_count(), 0.1, 0.0), &cfg).unwrap();
        assert_eq!(traj.times.len(), 11);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert!((traj.times[10] - 1.0).abs() < 1e-12);
        assert_eq!(traj.states.len(), traj.energy_series.len());
    }

    #[test]
    fn blow_up_is_reported() {
        let m = model(2);
        let cfg = StepperConfig::new(5.0, 500.0);
        let s = State::planar(m.mode_count(), 3.0, 0.0);
        assert!(matches!(
            evolve(&m, &s, &cfg),
            Err(KgError::NonFiniteState { .. })
        ));
    }
}
