//! Two-stage reconstruction of a particle distribution from the signal of
//! a field-free-line scanner: a regularized fit of the core response
//! followed by a deconvolution of its trace.

pub mod cg;
pub mod config;
pub mod conv;
pub mod core_stage;
pub mod deconv_stage;
pub mod error;
pub mod field;
pub mod forward;
pub mod kernels;
pub mod metrics;
pub mod pgm;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod spectral;
pub mod theory_checks;
pub mod trajectory;

pub use error::{Error, Result};
pub use field::{MatrixField, ScalarField};
pub use forward::ScanSeries;
pub use kernels::KernelParams;
pub use spectral::CoeffTensor;
pub use trajectory::{LissajousSpec, ScanGeometry};
