//! Task-driven compressed-sensing MRI pipeline: jointly learned k-space
//! subsampling, unrolled reconstruction, and task heads, with a two-stage
//! training schedule and analysis utilities.

pub mod data;
pub mod error;
pub mod fourier;
pub mod io_util;
pub mod metrics;
pub mod psf;
pub mod sampler;
pub mod signal;
pub mod tensor;

pub use error::{CsError, Result};
