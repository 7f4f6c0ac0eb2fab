//! Naive mean field, TAP/AMP and state evolution for the Gaussian-topic LDA
//! model `X = sqrt(beta)/d W Hᵀ + Z`, together with the Z2 synchronization
//! warm-up, threshold computations, diagnostics and an experiment harness.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod meanfield;
pub mod model;
pub mod priors;
pub mod quadrature;
pub mod rng;
pub mod state_evolution;
pub mod tap_amp;
pub mod z2sync;

pub use error::{Error, Result};
pub use model::{Dataset, ModelParams, Z2Instance};
pub use quadrature::QuadratureSpec;
