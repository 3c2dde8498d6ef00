//! Simulation lab for classical proofs of quantum knowledge.

pub mod aap;
pub mod bits;
pub mod cloning;
pub mod error;
pub mod experiment;
pub mod extractor;
pub mod gf2;
pub mod itm;
pub mod provers;
pub mod qsim;
pub mod stats;
pub mod subspace;
pub mod wiesner;

pub use bits::BitString;
pub use error::{Error, Result};
pub use qsim::StateVector;

/// Attempts of `getId` before honest input generation gives up.
pub const GET_ID_RETRIES: usize = 16;
