//! Pair, triplet and quadruplet coincidence analysis for four-channel photon
//! time-tag streams, with accidental correction, rate inference, an analytic
//! Gaussian-field oracle and a cluster-process source simulator.

pub mod error;
pub mod gaussian_oracle;
pub mod accidentals;
pub mod coincidence;
pub mod rates;
pub mod simulator;
pub mod tagstream;

pub use error::{Error, Result};
