//! Command line and local HTTP service over the `kfdp` library.

pub mod cli;
pub mod ops;
pub mod service;
