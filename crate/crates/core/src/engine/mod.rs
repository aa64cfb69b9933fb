//! Dense tensors and tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records operations as they are evaluated. Model weights live
//! in a [`ParamStore`] and enter a graph through [`Graph::param`]; after
//! [`Graph::backward`], [`ParamStore::accumulate_grads`] moves the parameter
//! gradients back into the store where optimizers read them.
//!
//! Everything is generic over [`Scalar`] so the exact same forward code runs
//! in `f32` for training and in `f64` for [`gradient_check`].

mod gradcheck;
mod graph;
mod kernels;
mod layers;
mod params;
mod scalar;
mod tensor;
pub mod weights;

pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Init, Linear, Mode};
pub use params::{ParamId, ParamKind, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;
