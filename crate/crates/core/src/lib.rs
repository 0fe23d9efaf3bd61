//! Random walks on finite rooted environments: exact laws, entropy,
//! harmonic fields and heat-kernel estimates.

pub mod check;
pub mod entropy;
pub mod environment;
pub mod rng;
pub mod stats;
pub mod harmonic;
pub mod heatkernel;
pub mod walk;
