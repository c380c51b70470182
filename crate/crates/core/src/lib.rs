//! Unsupervised domain adaptation by calibrating predictive uncertainty on
//! the target domain.
//!
//! A small multilayer perceptron with hand-written reverse-mode gradients
//! and forward-over-reverse Hessian-vector products, Rényi entropies, a
//! Gaussian-logit Bayesian output head, entropy-penalized and self-training
//! adaptation objectives, and gradient-variance regularization.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod data;
pub mod entropy;
pub mod error;
pub mod gvr;
pub mod harness;
pub mod model;
pub mod nn;
pub mod objective;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod uda;

pub use entropy::{ProbVector, RenyiOrder};
pub use error::{Error, Result};
pub use model::{Classifier, Head};
pub use nn::MlpModel;
pub use rng::SeededRng;
pub use tensor::Tensor;
