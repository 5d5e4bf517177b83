//! Simulation and analysis of indirect continuous measurement on decohering
//! finite-dimensional quantum systems.

pub mod decoherence;
pub mod decoupling;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod probe;
pub mod protocol;
pub mod states;
pub mod tomography;

pub use error::{Error, Result};
