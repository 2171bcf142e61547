//! ELDER: image reconstruction with an explicit learned regularizer.
//!
//! Reconstructions minimize `f(x) = g(x) + tau * h(x)`: a quadratic (or
//! indicator) data term `g` tied to a linear measurement model, plus a
//! regularizer `h` parameterized by a small convolutional network. The
//! minimizer is found by proximal gradient descent with a backtracking line
//! search; because each iteration is the same map applied over and over, the
//! reconstruction is a fixed point, and the network is trained end-to-end
//! through that fixed point (deep equilibrium) with either Jacobian-free or
//! exact implicit gradients.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod forward_model;
pub mod gradcheck;
pub mod io;
pub mod linalg;
pub mod network;
pub mod regularizer;
pub mod solver;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
