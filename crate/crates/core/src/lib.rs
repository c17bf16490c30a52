//! Synthetic multipath channel generation and fingerprint localization.
//!
//! The crate covers the full pipeline used by the `mmloc` tool:
//!
//! - [`scene`]: 2D scenes (base stations, rectangular-obstacle streets, UE
//!   grids) and image-method path tracing with specular reflections.
//! - [`channel`]: per-path channel parameters (RSS / TOA / AOA / phase) and
//!   the frequency-domain array response over an OFDM grid.
//! - [`features`]: normalized feature and label matrices for the regressor,
//!   either from the strongest multipath components or from the flattened
//!   absolute channel response.
//! - [`neuralnet`]: a small from-scratch two-hidden-layer MLP trained by
//!   full-batch gradient descent on a mean-squared-error objective.
//! - [`hyperopt`]: Gaussian-process Bayesian optimization over node counts,
//!   learning rate and activation function.
//! - [`eval`]: localization error statistics, empirical CDFs and the exact
//!   range-bearing fix used as a geometric oracle.
//!
//! Everything is deterministic given a seed; all randomness flows through
//! [`seeding::derive_seed`] sub-streams.

pub mod channel;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod hyperopt;
pub mod matrix;
pub mod neuralnet;
pub mod scene;
pub mod seeding;

pub use error::{Error, Result};
