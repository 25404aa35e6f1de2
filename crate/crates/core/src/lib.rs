//! Joint VAE meta-modelling of two differently parameterized electrical
//! machine technologies, with NSGA-II optimization in the shared latent space
//! and a per-technology direct DNN baseline.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod direct;
pub mod error;
pub mod machine_models;
pub mod metrics;
pub mod moo;
pub mod nn;
pub mod training;
pub mod vae;

pub use error::{Error, Result};
