//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records operations performed on [`Var`] handles and replays
//! them backwards to produce gradients. The op set is small and aimed at
//! 1-D convolutional and Transformer models: broadcasting arithmetic,
//! matrix products, strided (transposed) convolutions, layer norm, softmax,
//! and a handful of numerically careful elementwise functions.

pub mod gradcheck;
pub mod nn;
mod ops;
pub mod optim;
pub mod params;
pub mod special;
mod tape;

pub use nn::Conv1dSpec;
pub use optim::Adam;
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

/// Dense dynamic-rank array of `f64`.
pub type Tensor = ndarray::ArrayD<f64>;
