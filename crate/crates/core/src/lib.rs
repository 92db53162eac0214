pub mod bbm_sim;
pub mod cpp;
pub mod error;
pub mod fkpp;
pub mod harness;
pub mod kspine;
pub mod parallel;
pub mod potential;
pub mod prufer;
pub mod quadrature;
pub mod rng;
pub mod sampling;
pub mod semigroup;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use potential::Potential;
pub use spectral::{Regime, SpectralData, SpectralOptions};
