//! Deterministic federated-learning simulation engine.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`datasets`]: IDX ingestion and synthetic data (isotropic linear
//!   regression, Gaussian-mixture classification).
//! - [`partition`]: non-i.i.d. partition schemes (label, quality, quantity,
//!   and hybrid skew).
//! - [`models`]: losses, exact gradients, and the inexact proximal solver.
//! - [`engine`]: the ADMM orchestration — client updates with dual
//!   variables, server aggregation, client sampling, tolerance schedules,
//!   mode degenerations, and the random-subspace variant.
//! - [`baselines`]: independent pFedMe/Ditto implementations and multi-Krum.
//! - [`attacks`]: Byzantine message corruption and label poisoning.
//! - [`metrics`]: per-round evaluation, fairness variance, and the descent /
//!   relative-error / rate diagnostics.
//! - [`oracle`]: closed-form federated linear-regression analytics that the
//!   simulator is validated against.
//!
//! Every run is a pure function of its configuration and seed: all
//! randomness flows through [`rng::stream`], so trajectories are identical
//! across thread counts and checkpoint boundaries.

pub mod attacks;
pub mod baselines;
pub mod datasets;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod partition;
pub mod rng;
pub mod vecmath;

pub use error::{Error, Result};
pub use vecmath::{Matrix, ParamVector};
