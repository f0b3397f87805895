//! Forward and backward kernels, tape-free.
//!
//! Each operation lives in its own file as a pair of pure functions; the tape
//! in [`crate::tape`] records which kernel produced a node and replays the
//! matching backward rule. Heavy reductions accumulate in f64 regardless of
//! the tensor element type so that f32 results stay within testing tolerance
//! of the f64 reference oracles.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod merge;
pub mod norm;
pub mod pool;

pub use conv::ConvSpec;
