//! Error and diagnostic types shared across the crate.
//!
//! Fatal conditions are [`Error`] values; recoverable findings that should
//! reach the user without aborting a computation are [`Diagnostic`] values
//! and travel inside results.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Fatal failures raised by smoothing, feature construction, estimation,
/// simulation, or the baseline tests.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An interval that must have positive width collapsed to a point.
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    /// Too few observations to fit the requested basis.
    #[error("need at least {needed} observations, got {got}")]
    InsufficientObservations { needed: usize, got: usize },

    /// The least-squares normal matrix is singular and no ridge was configured.
    #[error("singular design matrix in least-squares fit")]
    SingularDesign,

    /// No usable terms: every outcome time was dropped during assembly.
    #[error("no usable outcome times survived assembly")]
    EmptySystem,

    /// Every assembled term shares one action, so one block has no data.
    #[error("all assembled terms share action {action}; both treatment arms are required")]
    SingleActionSystem { action: u8 },

    /// An estimating-equation block could not be solved.
    #[error("singular estimating-equation block for action {action} (condition {condition:.3e})")]
    SingularSigma { action: u8, condition: f64 },

    /// The sandwich variance collapsed; the statistic is undefined.
    #[error("variance estimate {value:.3e} is not positive; residuals are degenerate")]
    NonPositiveVariance { value: f64 },

    /// A reference measure needed state samples but none were supplied.
    #[error("reference measure needs state samples but none were provided")]
    NoSamples,

    /// A two-group comparison found one group empty.
    #[error("no outcome observations under action {action}")]
    EmptyGroup { action: u8 },

    /// A nuisance regression could not be solved.
    #[error("nuisance regression is singular")]
    SingularNuisance,

    /// A sampling interval does not sit on the simulated time grid.
    #[error("sampling interval {interval} is not a positive multiple of the path step {dt}")]
    GridMismatch { interval: f64, dt: f64 },

    /// The dataset violates its structural invariants; see the diagnostics.
    #[error("dataset failed validation ({} finding(s))", .0.len())]
    InvalidDataset(Vec<Diagnostic>),
}

/// Observation channel names used in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    State,
    Outcome,
    Action,
}

impl core::fmt::Display for Channel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Channel::State => f.write_str("state"),
            Channel::Outcome => f.write_str("outcome"),
            Channel::Action => f.write_str("action"),
        }
    }
}

/// Non-fatal findings attached to validation reports and test results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// The dataset holds no trajectories.
    EmptyDataset,
    /// An observation list is not strictly increasing in time.
    NonMonotoneTimes { subject: String, channel: Channel },
    /// A trajectory has no action change point at time zero.
    MissingInitialAction { subject: String },
    /// A trajectory's state vectors disagree with the dataset dimension.
    DimensionMismatch { subject: String },
    /// Every outcome observation resolves to the same action.
    SingleActionData,
    /// Outcome times outside a subject's fitted domain were skipped.
    DroppedTerms { count: usize },
    /// An ill-conditioned block was re-solved with Tikhonov regularization.
    RidgeFallback { action: u8, condition: f64 },
    /// A group had zero within-group variance, so the comparison degenerated.
    ZeroVariance,
}
