//! Minimal dense numerical core.
//!
//! Row-major tensors generic over `f32`/`f64`, a tape-based reverse-mode
//! differentiator covering the kernels a patch transformer needs, an Adam
//! optimizer, and a central finite-difference gradient checker.

pub mod adam;
pub mod checks;
pub mod error;
pub mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{NumError, Result};
pub use gradcheck::{grad_check, CoordSelection, GradCheckReport, RESOLUTION_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tensor::Tensor;
