//! Minimal deterministic tensor engine: dense tensors, tape-based reverse-mode
//! gradients, Adam, and a finite-difference gradient checker.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod par;
pub mod param;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{NumError, Result};
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport, ParamCheck};
pub use graph::{CustomBackward, Graph, Var};
pub use kernels::resample_taps;
pub use par::Execution;
pub use param::{init, Gradients, ParamId, ParamStore, ParamValues, Parameter};
pub use rng::SeedStream;
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Output length of a valid convolution: `floor((t - k) / stride) + 1`.
pub fn conv_output_len(t: usize, kernel: usize, stride: usize) -> Option<usize> {
    (t >= kernel && stride > 0 && kernel > 0).then(|| (t - kernel) / stride + 1)
}
