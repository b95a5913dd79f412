//! Core library for blockchain-assisted decentralized federated learning
//! experiments: data handling, local training, the block ledger, the
//! round-by-round simulator, and the convergence-bound analyzer.
//!
//! Numeric kernels are generic over the scalar type through [`Float`];
//! the shipped pipeline instantiates everything at `f64` via the [`Real`]
//! alias so results are bit-reproducible across runs on the same machine.

pub mod bound;
pub mod chain;
pub mod data;
pub mod error;
pub mod fl;
pub mod rng;
pub mod sim;
pub mod util;

mod scalar;

pub use error::{Error, Result};
pub use scalar::Float;

/// Scalar type used by the concrete pipeline.
pub type Real = f64;

/// Model parameters at the pipeline scalar type.
pub type Model = fl::ModelParams<Real>;

/// Dataset at the pipeline scalar type.
pub type Dataset = data::Dataset<Real>;
