//! Dense linear algebra, activations, seeded randomness, reverse-mode
//! differentiation and a finite-difference oracle.

pub mod finite_diff;
pub mod functions;
pub mod linalg;
pub mod rng;
pub mod tape;

pub use finite_diff::{finite_difference_grad, max_relative_error, relative_error};
pub use functions::{
    gaussian_log_density, gaussian_log_normalizer, log_softmax, log_sum_exp, sigmoid, sigmoid_scalar, softmax,
};
pub use linalg::Mat;
pub use rng::{standard_normal_vector, RngState};
pub use tape::{Gradients, Tape, Var};
