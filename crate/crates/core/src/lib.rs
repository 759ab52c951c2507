//! Coupled causal transformer autoencoders that split the activity of
//! simultaneously recorded regions into shared and private latent blocks.

pub mod container;
pub mod datasets;
pub mod error;
pub mod evalkit;
pub mod objectives;
pub mod seqmodel;
pub mod trainer;

pub use error::{CtaeError, Result};
