//! Minimal reverse-mode autodiff over `ndarray`, sized for desk-scale
//! experiments: dense f64 tensors, tape-per-forward-pass, analytic adjoints
//! for the Fourier and network layers used by the pipeline.

pub mod complex;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod param;
pub mod tape;

pub use param::{Adam, GraphCtx, ParamId, ParamStore};
pub use tape::{Arr, Gradients, Tape, Var};
