//! Dense `f64` tensors, a reverse-mode tape, the layers the model needs,
//! Adam, and a finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod rng;
pub mod tensor;

pub use adam::{AdamConfig, ParamGroup};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use layers::{Activation, LayerMode, RunningStats};
pub use rng::{RngState, Stream};
pub use tensor::Tensor;
