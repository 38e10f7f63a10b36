//! Shared fixtures for the benchmarks.

use kgorbit_core::{perturb_near_k, Model, ModelParams, PerturbationSpec, PlanarState, State};

pub const CUTOFFS: [usize; 3] = [8, 16, 64];

pub fn circle_model(cutoff: usize) -> Model {
    Model::new(ModelParams::circle(0.5, 1, cutoff)).expect("valid model")
}

/// A point `η³`-close to the orbit through `(η, 0)`.
pub fn perturbed_state(model: &Model, eta: f64) -> State {
    perturb_near_k(model, eta, PlanarState::new(eta, 0.0), &PerturbationSpec::standard(eta, 1))
        .expect("valid perturbation")
}
