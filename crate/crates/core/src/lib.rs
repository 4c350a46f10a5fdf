pub mod controller;
pub mod error;
pub mod lindblad_model;
pub mod lyapunov_verifier;
pub mod quantum_core;
pub mod sensor;
pub mod sim;
pub mod tolerances;

pub use error::{Error, Result};
