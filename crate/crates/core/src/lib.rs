//! Trainable-visualization networks for image classification: a Teacher
//! classifier, a Decoder that reconstructs its input as a visualization, and
//! a Student that must classify from that visualization alone. Everything is
//! dense f64 on the CPU and deterministic for a fixed seed.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod mask;
pub mod model;
pub mod perturb;
pub mod pnm;
pub mod tensor;
pub mod trainer;
pub mod viz;

pub use autodiff::{AutodiffError, Backward, Gradients, Graph, NodeId, Parameter};
pub use tensor::{Padding, ShapeError, Tensor};
