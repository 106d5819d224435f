//! Neural inverse transform sampling.
//!
//! Densities on a bounded box built from monotone networks: each coordinate's
//! conditional cdf is a PNN normalized exactly by differencing its output at
//! the bounds, sampling inverts that cdf by bisection, and a causally masked
//! weight model supplies per-coordinate parameters for autoregressive
//! composition. Training is plain maximum likelihood.

pub mod cli;
pub mod data;
pub mod error;
pub mod grad;
pub mod model;
pub mod oracle;
pub mod pnn;
pub mod sampler;
pub mod train;
pub mod verify;

pub use error::{NitsError, Result};
pub use model::{Masking, NitsModel, QuantGrid, WeightModelConfig};
pub use pnn::{Bounds, Pnn, PnnParams, PnnSpec};
