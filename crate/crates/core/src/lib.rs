//! Federated traffic synthesis and automatic classification.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithm of the
//! pipeline: sample ingestion and partitioning, a small dense/convolutional
//! network engine, two federated GAN protocols with byte-accounted in-process
//! transport, deep embedded clustering with BIC model selection, the service
//! classifier and the unknown-service update loop.
//!
//! File formats, reports and the command line live in the `fogsynth` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod assignment;
pub mod centralized;
pub mod classifier;
pub mod data;
pub mod dec;
mod error;
pub mod evaluation;
pub mod exec;
pub mod federation;
pub mod fgan1;
pub mod fgan2;
pub mod gan;
pub mod kmeans;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod update;

pub use error::{Error, Result};
pub use nn::{Activation, Architecture, LayerSpec, ModelParams, Network, Role, Shape};
pub use tensor::Matrix;
