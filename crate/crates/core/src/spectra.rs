//! Explicit eigenbasis of the Laplacian on flat tori.
//!
//! The basis is the real tensor-product Fourier basis: along each axis a
//! function is either the constant `1`, `√2 cos(2πkx/L)` or `√2 sin(2πkx/L)`.
//! With unit volume every product is L²-normalised. Modes are sorted by
//! eigenvalue, ties broken by wave-vector and then by trig kind.
//!
//! Grid transforms are direct separable summations on an equispaced grid of
//! `(2p+2)K + 1` nodes per axis. That grid integrates every product of up to
//! `2p+2` basis functions exactly, so the projection of `u^{2p+1}` carries no
//! aliasing error.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, KgError, Result};

/// Physical and discretisation parameters of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mass parameter `m`.
    pub m: f64,
    /// Nonlinearity exponent: the equation carries `u^{2p+1}`.
    pub p: u32,
    /// Manifold dimension (1, 2 or 3).
    pub dim: usize,
    /// Largest Fourier index kept per axis.
    pub cutoff: usize,
    /// Torus side lengths; their product must be 1.
    pub periods: Vec<f64>,
}

impl ModelParams {
    /// Unit circle with the given mass, exponent and cutoff.
    pub fn circle(m: f64, p: u32, cutoff: usize) -> Self {
        Self {
            m,
            p,
            dim: 1,
            cutoff,
            periods: vec![1.0],
        }
    }

    fn pf(&self) -> f64 {
        f64::from(self.p)
    }

    /// The elliptic equilibrium `m^{1/p}` of the planar system.
    pub fn center(&self) -> f64 {
        self.m.powf(1.0 / self.pf())
    }

    /// Peak amplitude of the homoclinic orbit, `(p+1)^{1/(2p)} m^{1/p}`.
    pub fn homoclinic_amplitude(&self) -> f64 {
        (self.pf() + 1.0).powf(0.5 / self.pf()) * self.center()
    }

    /// Energy-level function `f(x) = -m²x² + x^{2p+2}/(p+1)`.
    pub fn f(&self, x: f64) -> f64 {
        let p = self.p as i32;
        -self.m * self.m * x * x + x.powi(2 * p + 2) / (self.pf() + 1.0)
    }

    /// Exact derivative of [`ModelParams::f`], equal to `-2 force(x)`.
    pub fn f_prime(&self, x: f64) -> f64 {
        -2.0 * self.force(x)
    }

    /// Planar force `m²x - x^{2p+1}`, so that `ḃ₀ = force(a₀)` on the invariant plane.
    pub fn force(&self, x: f64) -> f64 {
        self.m * self.m * x - x.powi(2 * self.p as i32 + 1)
    }

    pub fn force_prime(&self, x: f64) -> f64 {
        let p = self.p as i32;
        self.m * self.m - f64::from(2 * p + 1) * x.powi(2 * p)
    }

    /// Volume of the torus.
    pub fn volume(&self) -> f64 {
        self.periods.iter().product()
    }
}

/// Per-axis factor of a tensor-product basis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrigKind {
    Constant,
    Cosine,
    Sine,
}

/// One real eigenfunction of `-Δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub index: usize,
    /// Non-negative Fourier index per axis.
    pub wavevector: Vec<u32>,
    pub kinds: Vec<TrigKind>,
    /// `λₙ`, the square root of the `-Δ` eigenvalue.
    pub eigenvalue: f64,
    /// `λₙ²`.
    pub eigenvalue_sq: f64,
    #[serde(skip)]
    tensor_slot: usize,
}

impl Mode {
    /// Sign picked up under the reflection `x ↦ -x`.
    pub fn parity(&self) -> f64 {
        let sines = self.kinds.iter().filter(|k| **k == TrigKind::Sine).count();
        if sines % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn is_constant(&self) -> bool {
        self.kinds.iter().all(|k| *k == TrigKind::Constant)
    }
}

/// Eigenbasis together with the dealiased quadrature grid.
#[derive(Debug, Clone)]
pub struct SpectrumTable {
    modes: Vec<Mode>,
    dim: usize,
    cutoff: usize,
    nodes: usize,
    periods: Vec<f64>,
    /// Synthesis matrices, `nodes × (2K+1)` row-major, one per axis.
    synthesis: Vec<Vec<f64>>,
    /// Analysis matrices, `(2K+1) × nodes` row-major, quadrature weights folded in.
    analysis: Vec<Vec<f64>>,
}

/// Nodes per axis needed for exact quadrature of products with total
/// degree up to `(2p+2)K`.
pub fn dealiased_nodes(p: u32, cutoff: usize) -> usize {
    (2 * p as usize + 2) * cutoff + 1
}

fn validate(params: &ModelParams) -> Result<f64> {
    if !(params.m.is_finite() && params.m > 0.0) {
        return Err(KgError::AssumptionViolated(format!(
            "the mass must satisfy 0 < m < λ₁, got m = {}",
            params.m
        )));
    }
    if params.p == 0 {
        return Err(KgError::InvalidParameter("p must be a positive integer".into()));
    }
    if !(1..=3).contains(&params.dim) {
        return Err(KgError::InvalidParameter(format!(
            "dimension must be 1, 2 or 3, got {}",
            params.dim
        )));
    }
    if params.periods.len() != params.dim {
        return Err(KgError::InvalidParameter(format!(
            "expected {} periods, got {}",
            params.dim,
            params.periods.len()
        )));
    }
    if params.periods.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(KgError::InvalidParameter("periods must be positive".into()));
    }
    if params.cutoff == 0 {
        return Err(KgError::InvalidParameter("cutoff must be at least 1".into()));
    }
    let volume = params.volume();
    if (volume - 1.0).abs() > 1e-12 {
        return Err(KgError::AssumptionViolated(format!(
            "the manifold is rescaled to Vol M = 1, got volume {volume}"
        )));
    }
    if params.dim == 3 && params.p != 1 {
        return Err(KgError::AssumptionViolated(format!(
            "in dimension 3 only p = 1 is admissible, got p = {}",
            params.p
        )));
    }
    let lambda1 = params
        .periods
        .iter()
        .map(|l| 2.0 * PI / l)
        .fold(f64::INFINITY, f64::min);
    if params.m >= lambda1 {
        return Err(KgError::AssumptionViolated(format!(
            "the mass must satisfy 0 < m < λ₁ = {lambda1}, got m = {}",
            params.m
        )));
    }
    Ok(lambda1)
}

/// 1D basis slot `ι`: 0 is the constant, `2k-1` is cos k, `2k` is sin k.
fn slot_kind(slot: usize) -> (u32, TrigKind) {
    if slot == 0 {
        (0, TrigKind::Constant)
    } else if slot % 2 == 1 {
        (slot.div_ceil(2) as u32, TrigKind::Cosine)
    } else {
        ((slot / 2) as u32, TrigKind::Sine)
    }
}

fn basis_value(slot: usize, x: f64, period: f64) -> f64 {
    let (k, kind) = slot_kind(slot);
    let theta = 2.0 * PI * f64::from(k) * x / period;
    match kind {
        TrigKind::Constant => 1.0,
        TrigKind::Cosine => 2f64.sqrt() * theta.cos(),
        TrigKind::Sine => 2f64.sqrt() * theta.sin(),
    }
}

fn cmp_modes(a: &Mode, b: &Mode) -> Ordering {
    let scale = a.eigenvalue_sq.abs().max(b.eigenvalue_sq.abs()).max(1.0);
    if (a.eigenvalue_sq - b.eigenvalue_sq).abs() > 1e-12 * scale {
        return a.eigenvalue_sq.total_cmp(&b.eigenvalue_sq);
    }
    a.wavevector
        .cmp(&b.wavevector)
        .then_with(|| a.kinds.cmp(&b.kinds))
}

/// Builds the eigenbasis and quadrature grid, enforcing the model assumptions.
pub fn build_spectrum(params: &ModelParams) -> Result<SpectrumTable> {
    validate(params)?;
    let dim = params.dim;
    let slots = 2 * params.cutoff + 1;
    let nodes = dealiased_nodes(params.p, params.cutoff);

    let total = slots.pow(dim as u32);
    let mut modes = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut idx = vec![0usize; dim];
        for axis in (0..dim).rev() {
            idx[axis] = rem % slots;
            rem /= slots;
        }
        let mut wavevector = Vec::with_capacity(dim);
        let mut kinds = Vec::with_capacity(dim);
        let mut lam2 = 0.0;
        for (axis, &slot) in idx.iter().enumerate() {
            let (k, kind) = slot_kind(slot);
            wavevector.push(k);
            kinds.push(kind);
            let w = 2.0 * PI * f64::from(k) / params.periods[axis];
            lam2 += w * w;
        }
        modes.push(Mode {
            index: 0,
            wavevector,
            kinds,
            eigenvalue: lam2.sqrt(),
            eigenvalue_sq: lam2,
            tensor_slot: flat,
        });
    }
    modes.sort_by(cmp_modes);
    for (i, mode) in modes.iter_mut().enumerate() {
        mode.index = i;
    }

    let mut synthesis = Vec::with_capacity(dim);
    let mut analysis = Vec::with_capacity(dim);
    for &period in &params.periods {
        let mut syn = vec![0.0; nodes * slots];
        let mut ana = vec![0.0; slots * nodes];
        let weight = period / nodes as f64;
        for j in 0..nodes {
            let x = period * j as f64 / nodes as f64;
            for slot in 0..slots {
                let v = basis_value(slot, x, period);
                syn[j * slots + slot] = v;
                ana[slot * nodes + j] = weight * v;
            }
        }
        synthesis.push(syn);
        analysis.push(ana);
    }

    Ok(SpectrumTable {
        modes,
        dim,
        cutoff: params.cutoff,
        nodes,
        periods: params.periods.clone(),
        synthesis,
        analysis,
    })
}

/// Contracts `input` (row-major, `shape`) along `axis` with a `rows × cols` matrix.
fn contract(input: &[f64], shape: &[usize], axis: usize, matrix: &[f64], rows: usize) -> Vec<f64> {
    let cols = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * rows * inner];
    if inner == 1 {
        for o in 0..outer {
            let src = &input[o * cols..(o + 1) * cols];
            let dst = &mut out[o * rows..(o + 1) * rows];
            for (r, d) in dst.iter_mut().enumerate() {
                let row = &matrix[r * cols..(r + 1) * cols];
                *d = row.iter().zip(src).map(|(m, x)| m * x).sum();
            }
        }
        return out;
    }
    for o in 0..outer {
        for r in 0..rows {
            let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
            for c in 0..cols {
                let w = matrix[r * cols + c];
                if w == 0.0 {
                    continue;
                }
                let src = &input[(o * cols + c) * inner..(o * cols + c + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    out
}

impl SpectrumTable {
    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Quadrature nodes per axis.
    pub fn nodes_per_axis(&self) -> usize {
        self.nodes
    }

    pub fn grid_shape(&self) -> Vec<usize> {
        vec![self.nodes; self.dim]
    }

    pub fn grid_len(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    /// Node coordinates along one axis.
    pub fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        let period = self.periods[axis];
        (0..self.nodes)
            .map(|j| period * j as f64 / self.nodes as f64)
            .collect()
    }

    /// `λₙ` for every mode.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.eigenvalue).collect()
    }

    /// Smallest nonzero `λ`.
    pub fn lambda1(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.eigenvalue)
            .filter(|l| *l > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Evaluates a basis function at a point (used by brute-force checks).
    pub fn basis_at(&self, mode: usize, x: &[f64]) -> f64 {
        let slots = 2 * self.cutoff + 1;
        let mut rem = self.modes[mode].tensor_slot;
        let mut value = 1.0;
        for axis in (0..self.dim).rev() {
            value *= basis_value(rem % slots, x[axis], self.periods[axis]);
            rem /= slots;
        }
        value
    }

    /// Evaluates `Σ aₙ eₙ` at every grid node.
    pub fn to_grid(&self, a: &[f64]) -> Result<Vec<f64>> {
        check_len(self.mode_count(), a.len())?;
        let slots = 2 * self.cutoff + 1;
        let mut shape = vec![slots; self.dim];
        let mut tensor = vec![0.0; slots.pow(self.dim as u32)];
        for (mode, &c) in self.modes.iter().zip(a) {
            tensor[mode.tensor_slot] = c;
        }
        for axis in 0..self.dim {
            tensor = contract(&tensor, &shape, axis, &self.synthesis[axis], self.nodes);
            shape[axis] = self.nodes;
        }
        Ok(tensor)
    }

    /// Coefficients `⟨g, eₙ⟩` by the rectangle rule on the grid.
    pub fn to_modes(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.grid_len(), g.len())?;
        let slots = 2 * self.cutoff + 1;
        let mut shape = vec![self.nodes; self.dim];
        let mut tensor = g.to_vec();
        for axis in 0..self.dim {
            tensor = contract(&tensor, &shape, axis, &self.analysis[axis], slots);
            shape[axis] = slots;
        }
        Ok(self.modes.iter().map(|m| tensor[m.tensor_slot]).collect())
    }

    fn check_exact(&self, degree: u32) -> Result<()> {
        if degree as usize * self.cutoff >= self.nodes {
            return Err(KgError::InvalidParameter(format!(
                "degree {degree} exceeds the exactness of a {}-node grid at cutoff {}",
                self.nodes, self.cutoff
            )));
        }
        Ok(())
    }

    fn is_constant_field(&self, a: &[f64]) -> bool {
        // Mode 0 is the constant; all others must vanish exactly.
        a[1..].iter().all(|c| *c == 0.0)
    }

    /// Mode coefficients of the L² projection of `u^exponent`, `u = Σ aₙ eₙ`.
    pub fn project_power(&self, a: &[f64], exponent: u32) -> Result<Vec<f64>> {
        check_len(self.mode_count(), a.len())?;
        self.check_exact(exponent + 1)?;
        if self.is_constant_field(a) {
            let mut out = vec![0.0; a.len()];
            out[0] = a[0].powi(exponent as i32);
            return Ok(out);
        }
        let mut grid = self.to_grid(a)?;
        for v in grid.iter_mut() {
            *v = v.powi(exponent as i32);
        }
        self.to_modes(&grid)
    }

    /// Exact `∫ u^exponent dx`.
    pub fn integrate_power(&self, a: &[f64], exponent: u32) -> Result<f64> {
        check_len(self.mode_count(), a.len())?;
        self.check_exact(exponent)?;
        if self.is_constant_field(a) {
            return Ok(a[0].powi(exponent as i32));
        }
        let grid = self.to_grid(a)?;
        Ok(self.mean(grid.iter().map(|v| v.powi(exponent as i32))))
    }

    /// Integral over the unit-volume torus of a field given by its grid values.
    pub fn mean(&self, values: impl Iterator<Item = f64>) -> f64 {
        values.sum::<f64>() / self.grid_len() as f64
    }
}
