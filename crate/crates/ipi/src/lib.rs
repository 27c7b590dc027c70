//! Incremental policy iteration: model-free optimal control built from two
//! coupled recursions — online identification of a local incremental linear
//! model, and discounted policy iteration on a quadratic value kernel fitted
//! against that model's predictions.
//!
//! The crate splits along that seam:
//!
//! - [`sysmodels`]: benchmark plants, excitation signals, counter-based
//!   noise, and the deterministic rollout engine.
//! - [`config`]: the flat key=value experiment document, with environment
//!   overrides and a canonical hash.
//! - [`rls`]: recursive least squares with forgetting, and the batch
//!   least-squares path.
//! - [`valuefn`]: quadratic value kernels, the feature map, Bellman targets,
//!   and batch/recursive kernel fitting.
//! - [`policy`]: the incremental policy-improvement step and the controller
//!   built on it.
//! - [`train`]: excitation collection and the offline training loop.
//! - [`online`]: the per-step adaptation state machine, with resumable
//!   snapshots.
//! - [`diag`]: probe-grid diagnostics, model-error estimates, and the
//!   iteration-count bound calculator.
//! - [`plot`]: dependency-free SVG rendering of trajectories and training
//!   curves.
//! - [`runner`]: experiment orchestration — artifact bundles, verification
//!   reports, and parallel sweeps.
//! - [`oracle`]: independent Riccati/Lyapunov solvers and brute-force
//!   minimizers used only to verify the learner.
//! - [`error`]: the error taxonomy, with stable CLI exit codes.

pub mod config;
pub mod diag;
pub mod error;
pub mod online;
pub mod oracle;
pub mod plot;
pub mod policy;
pub mod rls;
pub mod runner;
pub mod sysmodels;
pub mod train;
pub mod valuefn;

pub use error::{Error, Result};
