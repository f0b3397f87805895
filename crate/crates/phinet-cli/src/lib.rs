//! File formats, run configuration, and command drivers behind the
//! `phinet` binary. Split out as a library so the format contracts are
//! testable without spawning the executable.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod fail;
pub mod nifti;
pub mod report;
