//! Background suppression diffusion model (BSDM) for hyperspectral anomaly detection.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. File formats, checkpoints and the command line live in the
//! companion `bsdm` crate.
//!
//! The pipeline, in order of use:
//! - [`cube`], [`bands`], [`scene`]: cube values, band alignment and a synthetic scene generator.
//! - [`diffusion`]: the pseudo-background-noise schedule, forward diffusion and its inverse.
//! - [`denoiser`]: the conditioned residual network with analytic gradients.
//! - [`train`]: fixed-noise full-batch training with Adam and a cosine learning rate.
//! - [`suppress`]: repeated background removal at inference.
//! - [`detect`], [`metrics`]: RX and autoencoder detectors, ROC and box-plot statistics.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bands;
pub mod cube;
pub mod denoiser;
pub mod detect;
pub mod diffusion;
mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod scene;
pub mod suppress;
pub mod train;

pub use error::{Error, Result};
