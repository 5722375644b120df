//! Dynamic mode decomposition over compressed snapshot series and streamed
//! image frames.
//!
//! The modules build on each other: [`linalg`] and [`svd`] provide the
//! decompositions, [`codec`] and [`store`] the on-disk snapshot series,
//! [`dmd`] the batch and streaming fits, [`imageio`] the frame branch,
//! [`metrics`] the error measures and [`synth`] test data with known dynamics.
//! [`cli`] wires them into the `dmdkit` binary.

pub mod cli;
pub mod codec;
pub mod dmd;
pub mod error;
pub mod imageio;
pub mod linalg;
pub mod metrics;
pub mod store;
pub mod svd;
pub mod synth;

pub use error::{Error, Result};
