//! Multi-user spatial path index modulation (SPIM) with hybrid
//! beamforming: channel synthesis, manifold-optimized analog/digital
//! beamformer design, spectral-efficiency evaluation against baselines, and
//! federated training of a CNN that predicts the beamformers.
//!
//! The `examples/` directory shows each capability end to end; the `spim`
//! binary wraps the same pipeline in [`commands`].

// NaN must fail the positivity and ordering checks, so those stay negated.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod federated;
pub mod linalg;
pub mod manifold;
pub mod metrics;
pub mod neural;
pub mod rng;
pub mod spim;

pub use error::{Error, Result};
