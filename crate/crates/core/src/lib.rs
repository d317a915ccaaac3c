//! Testing cumulative treatment effects from multi-resolution longitudinal
//! observations.
//!
//! The input is a set of subject trajectories whose states, outcomes, and
//! treatment assignments live on separate, possibly irregular time grids.
//! The pipeline smooths each subject's states into a differentiable path
//! ([`splines`]), expands states through a feature basis ([`features`]),
//! averages one temporal-difference term per outcome observation into a
//! per-action linear system whose solution approximates the long-run value
//! of each always-act policy ([`estimator`]), and studentizes the resulting
//! value contrast into a normal test statistic. [`simulate`] generates
//! controlled diffusions for calibration studies and [`baselines`] holds the
//! comparison methods.
//!
//! The crate is `no_std` (with `alloc`); anything touching files or threads
//! lives in the companion CLI crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod data;
pub mod error;
pub mod estimator;
pub mod features;
mod linalg;
pub mod simulate;
pub mod splines;
pub mod stats;

pub use baselines::{
    discrete_time_value_test, dml_test, welch_from_groups, welch_t_test, BaselineResult,
};
pub use data::{
    validate_dataset, Alternative, AteTestResult, Dataset, EstimatorConfig, MultiResTrajectory,
    ReferenceMeasure, TIME_TOL,
};
pub use error::{Channel, Diagnostic, Error};
pub use estimator::{
    assemble, estimate_tau, estimate_variance, run_test, run_test_with_models, solve_beta,
    AssembledSystem, BetaSolution, TdTerm, VarianceEstimate,
};
pub use features::{build_feature_map, integrate_psi, FeatureKind, FeatureMap, FeatureSpec};
pub use simulate::{
    child_seed, euler_maruyama, sample_multiresolution, scenario_sim0, scenario_sim1,
    scenario_sim2, scenario_sim3, splitmix64, DensePath, SamplingPlan, Scenario, Schedule,
};
pub use splines::{
    eval_basis, fit_trajectory, make_knot_vector, KnotPlacement, KnotVector, PathModel,
    SmoothingSpec, SplineModel,
};
pub use stats::{normal_cdf, students_t_cdf};
