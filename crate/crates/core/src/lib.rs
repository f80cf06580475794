//! Core algorithms for time-frequency speech enhancement.
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! STFT analysis/synthesis and log-power-spectrum features, the ESTOI
//! intelligibility metric, a reverse-mode differentiation engine for dense
//! `f64` tensors, the gated convolutional autoencoder built on it, the
//! differentiable intelligibility loss used to train it, and the optimizer
//! step. File formats, WAV I/O and the command line live in the companion
//! `gse-cli` crate, which keeps this crate `no_std` (with `alloc`) and
//! usable from embedded inference targets.
//!
//! All floating point math goes through [`math`], which delegates to `libm`,
//! so results are bit-identical across platforms and independent of the host
//! libm.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod dsp;
pub mod error;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
