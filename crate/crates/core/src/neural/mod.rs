//! Minimal differentiable-computation substrate: tensors, dense and
//! convolutional layers, GRU cell, Gaussian reparameterization, Adam, a
//! finite-difference gradient checker and a checkpoint format.
//!
//! Everything is generic over the scalar so gradient checks can run the
//! exact same code paths in f64.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod layers;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, Entry};
pub use gru::{GruCache, GruCell, GruGrads};
pub use layers::{
    elu, elu_backward, gaussian_sample, gaussian_sample_backward, sigmoid, Conv2d, ConvGrads,
    Dense, DenseGrads, TransposeConv2d,
};
pub use tensor::Tensor;
