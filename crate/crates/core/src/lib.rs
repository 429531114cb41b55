//! Learning one-dimensional chaotic maps with autoencoders whose latent
//! space runs the exact tent/logistic conjugacy.
//!
//! The crate is generic over the floating point type (see [`Scalar`]);
//! the `*64` aliases at the crate root fix it to `f64`, which is what the
//! CLI and the tolerances in the test suite assume.

pub mod data;
pub mod error;
pub mod maps;
pub mod models;
pub mod nn;
pub mod num;
pub mod pool;
pub mod report;
pub mod train;
pub mod uq;

pub use error::{Error, Result};
pub use num::Scalar;

pub type MapSpec64 = maps::MapSpec<f64>;
pub type DenseNet64 = nn::DenseNet<f64>;
pub type ModelConfig64 = models::ModelConfig<f64>;
pub type ModelState64 = models::ModelState<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type Samples64 = data::Samples<f64>;
