//! Core computation for volumetric MR contrast classification.
//!
//! Everything here is deterministic and allocation-only: the crate is
//! `no_std` + `alloc`, keeps all floating point work in explicitly ordered
//! loops, and leaves file formats, threading and the CLI to the companion
//! crate. The main pieces:
//!
//! * [`tape`]: reverse-mode autodiff over a flat operation tape.
//! * [`ops`]: the tensor operations the tape records (3D convolution,
//!   pooling, batch norm, losses, ...).
//! * [`arch`]: the three-branch classification network and the single-path
//!   residual comparator, built from shared layer specs.
//! * [`train`]: SGD with momentum, LR scheduling, early stopping, and
//!   resumable epoch bookkeeping.
//! * [`volume`]: scalar volume container plus the preprocessing chain
//!   (foreground cropping, resampling, intensity scaling, padding).
//! * [`phantom`]: synthetic brain-like test volumes with ground truth masks.
//! * [`baseline`]: template correlation classifier.
//! * [`stats`]: accuracy bookkeeping and the paired McNemar test.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod arch;
pub mod baseline;
pub mod error;
pub mod ops;
pub mod phantom;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::CoreError;
