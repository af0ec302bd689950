//! Finite-alphabet toolkit for decision-making from noisy observational data.
//!
//! A latent sample `ξ ~ P` on an alphabet `Ξ` is observed through a known
//! row-stochastic channel `O` as `ξ' ~ O_ξ` on an alphabet `Ξ'`. This crate
//! provides the pieces needed to reason about the empirical measure of such
//! noisy draws and to act on it:
//!
//! - [`measures`]: probability vectors, KL divergence, total variation,
//!   seeded sampling;
//! - [`channels`]: observation channels, their convolution `O⋆P` and the
//!   joint law of `(ξ, ξ')`;
//! - [`transport`]: entropic optimal transport via log-domain Sinkhorn
//!   scaling;
//! - [`rate`]: the large-deviation rate function of the noisy empirical
//!   measure, its transport-form evaluation and its TV-smoothed variant;
//! - [`inference`]: rate-function hypothesis tests and exact/Monte Carlo
//!   error-exponent estimation;
//! - [`decisions`]: robust and plug-in decision formulations together with
//!   out-of-sample disappointment estimation.
//!
//! Everything is deterministic given explicit 64-bit seeds ([`rng`]), and the
//! crate builds without `std` (enable the `libm` feature instead).

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("enable either the `std` feature or the `libm` feature");

extern crate alloc;

pub mod channels;
pub mod decisions;
pub mod inference;
pub mod matrix;
pub mod measures;
pub mod rate;
pub mod rng;
pub mod transport;

mod math;

pub use channels::{Channel, JointMeasure};
pub use matrix::Matrix;
pub use measures::{BaseWeights, ProbMeasure, SampleRecord};

/// Errors shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Two objects that must share a support length do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A sample index points outside the declared support.
    #[error("index {index} out of range for support of size {size}")]
    IndexOutOfRange { index: u32, size: usize },

    /// Invalid argument for the mathematical definition at hand.
    #[error("domain error: {0}")]
    Domain(&'static str),

    /// Probability weights whose sum is too far from one to repair.
    #[error("weights sum to {sum}, outside the normalization tolerance")]
    NotNormalized { sum: f64 },

    /// A weight that must be nonnegative (or positive) is not.
    #[error("invalid weight {value} at index {index}")]
    InvalidWeight { index: usize, value: f64 },

    /// A channel row does not integrate to one.
    #[error("channel row {row} has kernel mass {sum}, expected 1")]
    InvalidChannel { row: usize, sum: f64 },

    /// The transport polytope restricted to the kernel support is empty.
    #[error("no feasible transport plan for the given marginals and cost")]
    NoFeasiblePlan,

    /// The ambiguity set of a robust formulation is empty.
    #[error("infeasible formulation: the ambiguity set is empty")]
    InfeasibleFormulation,
}

/// Convenience alias used across the crate.
pub type Result<T> = core::result::Result<T, Error>;
