//! Mode-space vector field and energy functionals.
//!
//! `u = Σ aₙ eₙ`, `v = ∂ₜu = Σ bₙ eₙ`, and `U = u - a₀` collects the
//! non-stationary modes. The energy splits as
//! `H = ½b₀² + ½f(a₀) + J + r = ½b₀² + ½f(a₀) + I + r̂`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, KgError, Result};
use crate::spectra::{build_spectrum, ModelParams, SpectrumTable};

/// Mode coefficients of `(u, ∂ₜu)` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn zeros(modes: usize) -> Self {
        Self {
            a: vec![0.0; modes],
            b: vec![0.0; modes],
            t: 0.0,
        }
    }

    /// A point of the space-stationary plane: only `(a₀, b₀)` nonzero.
    pub fn planar(modes: usize, a0: f64, b0: f64) -> Self {
        let mut s = Self::zeros(modes);
        s.a[0] = a0;
        s.b[0] = b0;
        s
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(&self.b).all(|v| v.is_finite()) && self.t.is_finite()
    }

    /// `Σ_{k≥1} (aₖ² + bₖ²)`, zero exactly on the invariant plane.
    pub fn off_plane_norm_sq(&self) -> f64 {
        self.a[1..]
            .iter()
            .chain(&self.b[1..])
            .map(|v| v * v)
            .sum()
    }

    pub fn is_planar(&self) -> bool {
        self.a[1..].iter().chain(&self.b[1..]).all(|v| *v == 0.0)
    }
}

/// Every energy functional evaluated at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub h: f64,
    pub j: f64,
    pub i: f64,
    pub r: f64,
    pub r_hat: f64,
    /// `‖(qₖ)_{k≥1}‖_{ℓ²}`.
    pub q_norm: f64,
    pub q0: f64,
    pub f_a0: f64,
}

/// A validated model: parameters plus the eigenbasis built from them.
#[derive(Debug, Clone)]
pub struct Model {
    params: ModelParams,
    table: SpectrumTable,
    /// `λₙ² - m²` per mode.
    stiffness: Vec<f64>,
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        let table = build_spectrum(&params)?;
        let m2 = params.m * params.m;
        let stiffness = table.modes().iter().map(|md| md.eigenvalue_sq - m2).collect();
        Ok(Self {
            params,
            table,
            stiffness,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn table(&self) -> &SpectrumTable {
        &self.table
    }

    pub fn mode_count(&self) -> usize {
        self.table.mode_count()
    }

    /// `λₙ² - m²` for every mode; negative only for `n = 0`.
    pub fn stiffness(&self) -> &[f64] {
        &self.stiffness
    }

    fn nonlinear_exponent(&self) -> u32 {
        2 * self.params.p + 1
    }

    pub fn check_state(&self, s: &State) -> Result<()> {
        check_len(self.mode_count(), s.a.len())?;
        check_len(self.mode_count(), s.b.len())?;
        if !s.is_finite() {
            return Err(KgError::NonFiniteState { time: s.t });
        }
        Ok(())
    }

    /// `⟨u^{2p+1}, eₙ⟩` for every mode.
    pub fn nonlinear_projection(&self, a: &[f64]) -> Result<Vec<f64>> {
        self.table.project_power(a, self.nonlinear_exponent())
    }

    /// Total energy.
    pub fn hamiltonian(&self, s: &State) -> Result<f64> {
        self.check_state(s)?;
        let quad: f64 = self
            .stiffness
            .iter()
            .zip(s.a.iter().zip(&s.b))
            .map(|(w, (a, b))| w * a * a + b * b)
            .sum();
        let e = 2 * self.params.p + 2;
        let potential = self.table.integrate_power(&s.a, e)? / f64::from(e);
        Ok(0.5 * quad + potential)
    }

    /// `J`, the quadratic energy of the non-stationary modes. Needs no transform.
    pub fn j_energy(&self, s: &State) -> f64 {
        0.5 * self.stiffness[1..]
            .iter()
            .zip(s.a[1..].iter().zip(&s.b[1..]))
            .map(|(w, (a, b))| w * a * a + b * b)
            .sum::<f64>()
    }

    /// Time derivative of the state.
    pub fn rhs(&self, s: &State) -> Result<State> {
        self.check_state(s)?;
        let nl = self.nonlinear_projection(&s.a)?;
        let db = self
            .stiffness
            .iter()
            .zip(&s.a)
            .zip(&nl)
            .map(|((w, a), n)| -w * a - n)
            .collect();
        Ok(State {
            a: s.b.clone(),
            b: db,
            t: 1.0,
        })
    }

    /// Binomial tail `Σ_{j ∈ powers} C(n,j) a₀^{n-j} U^j` at every grid node.
    fn binomial_tail(&self, a0: f64, u_hat: &[f64], n: u32, skip: &[u32], from: u32) -> Vec<f64> {
        let coeffs: Vec<(i32, f64)> = (from..=n)
            .filter(|j| !skip.contains(j))
            .map(|j| (j as i32, binomial(n, j) * a0.powi((n - j) as i32)))
            .collect();
        u_hat
            .iter()
            .map(|&u| coeffs.iter().map(|(j, c)| c * u.powi(*j)).sum())
            .collect()
    }

    fn high_grid(&self, s: &State) -> Result<Vec<f64>> {
        let mut high = s.a.clone();
        high[0] = 0.0;
        self.table.to_grid(&high)
    }

    /// `qₖ = ⟨(a₀+U)^{2p+1} - a₀^{2p+1} - (2p+1)a₀^{2p}U, eₖ⟩` for all `k ≥ 0`.
    pub fn q_vector(&self, s: &State) -> Result<Vec<f64>> {
        self.check_state(s)?;
        if s.a[1..].iter().all(|v| *v == 0.0) {
            return Ok(vec![0.0; s.len()]);
        }
        let u_hat = self.high_grid(s)?;
        let tail = self.binomial_tail(s.a[0], &u_hat, self.nonlinear_exponent(), &[], 2);
        self.table.to_modes(&tail)
    }

    pub fn energy_breakdown(&self, s: &State) -> Result<EnergyBreakdown> {
        let h = self.hamiltonian(s)?;
        let p = self.params.p;
        let a0 = s.a[0];
        let j = self.j_energy(s);
        let high_sq: f64 = s.a[1..].iter().map(|v| v * v).sum();
        let i = j + 0.5 * f64::from(2 * p + 1) * a0.powi(2 * p as i32) * high_sq;
        let f_a0 = self.params.f(a0);

        let (r, r_hat, q) = if s.a[1..].iter().all(|v| *v == 0.0) {
            (0.0, 0.0, vec![0.0; s.len()])
        } else {
            let u_hat = self.high_grid(s)?;
            let e = 2 * p + 2;
            let norm = 1.0 / f64::from(e);
            let r_grid = self.binomial_tail(a0, &u_hat, e, &[], 1);
            let r_hat_grid = self.binomial_tail(a0, &u_hat, e, &[2], 1);
            let r = norm * self.table.mean(r_grid.into_iter());
            let r_hat = norm * self.table.mean(r_hat_grid.into_iter());
            (r, r_hat, self.q_vector(s)?)
        };
        let q_norm = q[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(EnergyBreakdown {
            h,
            j,
            i,
            r,
            r_hat,
            q_norm,
            q0: q[0],
            f_a0,
        })
    }

    /// `‖u‖_{h¹} + ‖v‖_{ℓ²}` with `‖u‖²_{h¹} = Σ(1+λₙ²)aₙ²`.
    pub fn xnorm(&self, s: &State) -> Result<f64> {
        check_len(self.mode_count(), s.a.len())?;
        check_len(self.mode_count(), s.b.len())?;
        Ok(self.xnorm_parts(&s.a, &s.b))
    }

    fn xnorm_parts(&self, a: &[f64], b: &[f64]) -> f64 {
        let h1: f64 = self
            .table
            .modes()
            .iter()
            .zip(a)
            .map(|(m, x)| (1.0 + m.eigenvalue_sq) * x * x)
            .sum();
        let l2: f64 = b.iter().map(|x| x * x).sum();
        h1.sqrt() + l2.sqrt()
    }

    pub fn dist_x(&self, s1: &State, s2: &State) -> Result<f64> {
        self.xnorm(s1)?;
        self.xnorm(s2)?;
        let da: Vec<f64> = s1.a.iter().zip(&s2.a).map(|(x, y)| x - y).collect();
        let db: Vec<f64> = s1.b.iter().zip(&s2.b).map(|(x, y)| x - y).collect();
        Ok(self.xnorm_parts(&da, &db))
    }

    /// Squared h¹ weight and squared ℓ² weight of everything but mode 0.
    pub(crate) fn off_plane_sq_parts(&self, s: &State) -> (f64, f64) {
        let h1 = self.table.modes()[1..]
            .iter()
            .zip(&s.a[1..])
            .map(|(m, x)| (1.0 + m.eigenvalue_sq) * x * x)
            .sum();
        let l2 = s.b[1..].iter().map(|x| x * x).sum();
        (h1, l2)
    }

    /// `φ(t)` from `η⁵φ = -2(J - J(0)) - 2(r - r(0))`.
    pub fn phi_diagnostic(&self, s: &State, initial: &EnergyBreakdown, eta: f64) -> Result<f64> {
        if eta.is_nan() || eta <= 0.0 {
            return Err(KgError::OutOfRange(format!("η must be positive, got {eta}")));
        }
        let now = self.energy_breakdown(s)?;
        Ok(phi_from(&now, initial, eta))
    }
}

pub(crate) fn phi_from(now: &EnergyBreakdown, initial: &EnergyBreakdown, eta: f64) -> f64 {
    (-2.0 * (now.j - initial.j) - 2.0 * (now.r - initial.r)) / eta.powi(5)
}
