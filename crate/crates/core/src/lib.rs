//! Pseudospectral simulation of the nonlinear Klein–Gordon equation
//! `∂ₜ²u - Δu - m²u + u^{2p+1} = 0` on flat tori, with tools to study the
//! space-stationary periodic orbits inside the homoclinic loop.

pub mod error;
pub mod experiments;
pub mod fit;
pub mod hamiltonian;
pub mod integrators;
mod quadrature;
pub mod spectra;
pub mod stationary;

pub use error::{KgError, Result};
pub use hamiltonian::{EnergyBreakdown, Model, State};
pub use integrators::{
    evolve, refine_crossing, rk4_step, split2_step, Crossing, Propagator, Scheme, SectionKind,
    SectionSpec, SignConstraint, StepperConfig, Trajectory,
};
pub use spectra::{build_spectrum, Mode, ModelParams, SpectrumTable, TrigKind};
pub use experiments::{
    perturb_near_k, run_first_return, run_many_loops, Distribution, FirstReturn, LoopOptions,
    PerturbationSpec, StabilityReport,
};
pub use fit::{linear_fit, power_law_fit, LinearFit};
pub use stationary::{
    dist_to_k, floquet, period, sample_orbit, turning_point, DeltaBand, FloquetConfig, Monodromy,
    MultiplierClass, PeriodicOrbit, PlanarState,
};
