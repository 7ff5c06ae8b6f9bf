//! Spectral statistics of operators induced by finite sofic approximations of
//! group actions, with exact and floating-point back ends.

pub mod eigen;
pub mod error;
pub mod experiment;
pub mod group;
pub mod measure;
pub mod monotone;
pub mod operator;
pub mod par;
pub mod rng;
pub mod scalar;
pub mod sofic;
pub mod spectral;

pub use error::{Error, Result};
pub use par::Execution;
