//! Frozen Gaussian sampling for the semiclassical Schrödinger equation.

pub mod comparison;
pub mod error;
pub mod experiment;
pub mod field_io;
pub mod grid;
pub mod initial;
pub mod metrics;
pub mod potential;
pub mod observables;
pub mod propagator;
pub mod reconstruction;
pub mod reference;
pub mod rng;
pub mod sampler;

pub use error::{FgsError, Result};
pub use grid::{GridSpec, PhasePoint, WaveField};
pub use potential::Potential;
pub use rng::StreamKey;
