//! Deterministic, single-process simulator of prototype-based
//! federated learning.
//!
//! Clients train private feed-forward networks and exchange only
//! per-class mean activations (prototypes). The server either keeps the
//! classic sample-count-weighted aggregation (`fedproto` mode) or
//! applies simple averaging followed by hyperspherical alignment and
//! upscaling of the global prototypes (`protonorm` mode). Everything is
//! seeded and reproduces bit-for-bit.
//!
//! Modules:
//! - [`data`]: synthetic spiral dataset, client partitioning, splits
//! - [`nn`]: dense network with manual backpropagation
//! - [`proto`]: prototype computation, aggregation, classification
//! - [`align`]: hyperspherical energy minimization of global prototypes
//! - [`sim`]: the federation round loop
//! - [`config`] / [`report`]: key=value configs and CSV artifacts

pub mod align;
pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod proto;
pub mod report;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
