//! Streaming variational inference for truncated Dirichlet process Gaussian
//! mixtures on non-stationary data streams.
//!
//! * [`expfam`]: Gaussian-mean and Gamma-precision factors, mixing and KL.
//! * [`dpm`]: collapsed coordinate-ascent updates, objective and predictive density.
//! * [`forgetting`]: SVB, PP, HPP, MHPP, SVI, batch VI and the privileged baseline.
//! * [`stream`]: drifting synthetic streams and CSV ingestion.
//! * [`eval`]: clustering metrics and parameter tracking.
//! * [`cli`]: the experiment runner behind the `dpm-stream` binary.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dpm;
pub mod error;
pub mod eval;
pub mod expfam;
pub mod forgetting;
pub mod special;
pub mod stream;

pub use dpm::{InitStrategy, MixtureState, ModelConfig, Responsibilities};
pub use error::{Error, Result};
pub use expfam::ComponentPosterior;
pub use forgetting::{fit_batch, fit_stream, AlgorithmSpec, ForgettingState};
pub use stream::{generate_stream, GroundTruth, StreamBatch, StreamConfig};
