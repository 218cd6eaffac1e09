//! Optical-flow based out-of-distribution detection for driving video.
//!
//! The pipeline turns frame sequences into stacked Horn–Schunck flow volumes,
//! encodes each flow direction with a variational autoencoder and scores
//! samples by latent divergence from a prior.

pub mod error;
pub mod eval;
pub mod flow;
pub mod nn;
pub mod quant;
pub mod scoring;
pub mod vae;
pub mod videoio;

pub use error::{Error, Result};
