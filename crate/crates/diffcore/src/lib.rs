//! Minimal reverse-mode differentiation for dense `f64` arrays.
//!
//! The crate offers exactly what a small causal transformer autoencoder
//! needs: matrix products, elementwise arithmetic, GELU/tanh, layer
//! normalisation, masked softmax, fused multi-head attention, per-sequence
//! Gram matrices and squared-norm reductions, plus Adam and a
//! finite-difference gradient checker.
//!
//! ```
//! use diffcore::{Graph, ParameterSet, Tensor};
//!
//! let mut params = ParameterSet::new();
//! params.insert("x", Tensor::new(vec![2], vec![1.0, -3.0]).unwrap()).unwrap();
//! let mut g = Graph::new();
//! let x = g.param(&params, "x").unwrap();
//! let loss = g.sum_squares(x).unwrap();
//! let grads = g.backward(loss, &params).unwrap();
//! assert_eq!(grads.get(0).data(), &[2.0, -6.0]);
//! ```

mod adam;
mod error;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use error::{DiffError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use params::{Gradients, ParameterSet};
pub use tensor::Tensor;
