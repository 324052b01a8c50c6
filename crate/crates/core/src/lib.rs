//! Matrix-parameter stochastic optimizers (SGDM, Muon, MiMuon, MuSGD) and the
//! experiment harness used to measure their stability and convergence on
//! synthetic problems.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense matrices, one-sided Jacobi SVD, Newton–Schulz
//!   orthogonalization, singular gaps.
//! - [`optim`]: single-step update rules over one matrix parameter.
//! - [`problems`]: synthetic objectives, datasets and the deterministic PRNG.
//! - [`experiments`]: training runs, paired stability runs, bound recursions,
//!   perturbation probes and convergence-rate fits.
//! - [`acceptance`]: the built-in acceptance checks.

pub mod acceptance;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod optim;
pub mod problems;

pub use error::{Error, Result};
pub use linalg::{Matrix, SvdResult};
pub use optim::{
    Branch, HyperParams, OptimizerKind, OptimizerState, OrthoMode, StepOutcome, SwitchMode,
};
