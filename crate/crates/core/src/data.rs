//! Observation containers, test configuration, and dataset validation.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Channel, Diagnostic};
use crate::features::FeatureSpec;
use crate::splines::SmoothingSpec;

/// Time comparison tolerance shared by grid matching, action resolution, and
/// schedule boundaries. Two instants closer than this are the same instant.
pub const TIME_TOL: f64 = 1e-9;

/// One subject's observations: states, outcomes, and treatment change points,
/// each on its own (possibly irregular) time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiResTrajectory {
    pub subject_id: String,
    /// `(time, state vector)` readings of the latent path, possibly noisy.
    pub state_obs: Vec<(f64, Vec<f64>)>,
    /// `(time, outcome)` readings.
    pub outcome_obs: Vec<(f64, f64)>,
    /// `(time, action)` change points. The assignment is piecewise constant
    /// and right-continuous; a well-formed trajectory has an entry at time 0.
    pub action_obs: Vec<(f64, u8)>,
}

impl MultiResTrajectory {
    /// State dimension, taken from the first state observation.
    pub fn dim(&self) -> usize {
        self.state_obs.first().map(|(_, v)| v.len()).unwrap_or(0)
    }

    /// Action in force at time `t`: the latest change point at or before `t`
    /// (within [`TIME_TOL`]). `None` before the first change point.
    pub fn action_at(&self, t: f64) -> Option<u8> {
        let cutoff = t + TIME_TOL;
        let idx = self.action_obs.partition_point(|&(ct, _)| ct <= cutoff);
        if idx == 0 {
            None
        } else {
            Some(self.action_obs[idx - 1].1)
        }
    }

    /// Exact state observation at time `t`, if one exists within [`TIME_TOL`].
    pub fn state_at(&self, t: f64) -> Option<&[f64]> {
        let idx = self.state_obs.partition_point(|&(st, _)| st < t - TIME_TOL);
        match self.state_obs.get(idx) {
            Some((st, v)) if (st - t).abs() <= TIME_TOL => Some(v.as_slice()),
            _ => None,
        }
    }

    /// Action over the half-open interval `[t0, t1)` when it is constant
    /// there; `None` if any interior change point flips it.
    pub fn action_constant_on(&self, t0: f64, t1: f64) -> Option<u8> {
        let a = self.action_at(t0)?;
        for &(ct, cv) in &self.action_obs {
            if ct > t0 + TIME_TOL && ct < t1 - TIME_TOL && cv != a {
                return None;
            }
        }
        Some(a)
    }
}

/// A collection of trajectories sharing one state dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<MultiResTrajectory>,
    /// State dimension shared by every trajectory.
    pub d: usize,
}

impl Dataset {
    /// Builds a dataset, inferring the dimension from the first trajectory.
    /// Structural problems are reported by [`validate_dataset`], not here.
    pub fn new(trajectories: Vec<MultiResTrajectory>) -> Self {
        let d = trajectories.first().map(MultiResTrajectory::dim).unwrap_or(0);
        Self { trajectories, d }
    }

    /// Every state vector in the dataset, pooled across subjects and times.
    pub fn pooled_states(&self) -> Vec<Vec<f64>> {
        self.trajectories
            .iter()
            .flat_map(|tr| tr.state_obs.iter().map(|(_, v)| v.clone()))
            .collect()
    }

    /// First observed state of each trajectory.
    pub fn initial_states(&self) -> Vec<Vec<f64>> {
        self.trajectories
            .iter()
            .filter_map(|tr| tr.state_obs.first().map(|(_, v)| v.clone()))
            .collect()
    }
}

/// Distribution over initial states that the treatment-effect contrast is
/// averaged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceMeasure {
    /// Empirical distribution of the first observed state of each subject.
    EmpiricalInitialStates,
    /// Unit mass at one state.
    PointMass { point: Vec<f64> },
    /// Average over an inclusive uniform grid, `n_grid` points per dimension.
    UniformGrid {
        lo: Vec<f64>,
        hi: Vec<f64>,
        n_grid: usize,
    },
}

/// Direction of the alternative hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Treated-minus-control effect is positive.
    OneSidedGreater,
    /// Effect is nonzero.
    TwoSided,
}

/// Everything the test needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Discount rate in (0, 1) weighting immediate against future outcomes.
    pub gamma: f64,
    /// Value-function basis.
    pub basis_spec: FeatureSpec,
    /// Trajectory smoother settings.
    pub smoothing_spec: SmoothingSpec,
    pub reference_measure: ReferenceMeasure,
    /// Relative Tikhonov weight applied when an estimating-equation block is
    /// ill-conditioned (scaled by the block's mean squared singular value).
    pub ridge: f64,
    pub alternative: Alternative,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            basis_spec: FeatureSpec::default(),
            smoothing_spec: SmoothingSpec::default(),
            reference_measure: ReferenceMeasure::EmpiricalInitialStates,
            ridge: 1e-8,
            alternative: Alternative::OneSidedGreater,
        }
    }
}

/// Output of the cumulative-effect test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteTestResult {
    /// Estimated cumulative effect: treated-minus-control value averaged over
    /// the reference measure.
    pub tau_hat: f64,
    /// Sandwich standard deviation of √n·τ̂.
    pub sigma_hat: f64,
    /// Studentized statistic √n_eff · τ̂ / σ̂.
    pub z: f64,
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    /// Value-function coefficients under control.
    pub beta0: Vec<f64>,
    /// Value-function coefficients under treatment.
    pub beta1: Vec<f64>,
    /// Number of temporal-difference terms the statistic is built from.
    pub n_eff: usize,
    /// 2-norm condition estimate of the block-diagonal estimating matrix.
    pub cond_sigma: f64,
    /// Discount rate the test ran with.
    pub gamma: f64,
    pub diagnostics: Vec<Diagnostic>,
}

impl AteTestResult {
    /// The p-value matching the requested alternative.
    pub fn p_value(&self, alternative: Alternative) -> f64 {
        match alternative {
            Alternative::OneSidedGreater => self.p_one_sided,
            Alternative::TwoSided => self.p_two_sided,
        }
    }
}

fn strictly_increasing(mut times: impl Iterator<Item = f64>) -> bool {
    let mut prev = match times.next() {
        Some(t) => t,
        None => return true,
    };
    for t in times {
        if t <= prev {
            return false;
        }
        prev = t;
    }
    true
}

/// Checks every structural invariant and returns one diagnostic per
/// violation. An empty result means the dataset is well-formed. Pure and
/// idempotent.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if dataset.trajectories.is_empty() {
        out.push(Diagnostic::EmptyDataset);
        return out;
    }
    let mut seen = [false; 2];
    for tr in &dataset.trajectories {
        let channels = [
            (Channel::State, !strictly_increasing(tr.state_obs.iter().map(|o| o.0))),
            (
                Channel::Outcome,
                !strictly_increasing(tr.outcome_obs.iter().map(|o| o.0)),
            ),
            (
                Channel::Action,
                !strictly_increasing(tr.action_obs.iter().map(|o| o.0)),
            ),
        ];
        for (channel, bad) in channels {
            if bad {
                out.push(Diagnostic::NonMonotoneTimes {
                    subject: tr.subject_id.clone(),
                    channel,
                });
            }
        }
        if tr.state_obs.iter().any(|(_, v)| v.len() != dataset.d) {
            out.push(Diagnostic::DimensionMismatch {
                subject: tr.subject_id.clone(),
            });
        }
        match tr.action_obs.first() {
            Some(&(t0, _)) if t0.abs() <= TIME_TOL => {}
            _ => out.push(Diagnostic::MissingInitialAction {
                subject: tr.subject_id.clone(),
            }),
        }
        for &(t, _) in &tr.outcome_obs {
            if let Some(a) = tr.action_at(t) {
                seen[usize::from(a.min(1))] = true;
            }
        }
    }
    if !(seen[0] && seen[1]) {
        out.push(Diagnostic::SingleActionData);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::borrow::ToOwned;
    use alloc::vec;

    fn well_formed() -> MultiResTrajectory {
        MultiResTrajectory {
            subject_id: "s0".to_owned(),
            state_obs: vec![(0.0, vec![0.0]), (0.1, vec![0.5]), (0.2, vec![0.9])],
            outcome_obs: vec![(0.2, 0.9)],
            action_obs: vec![(0.0, 1), (0.15, 0)],
        }
    }

    #[test]
    fn well_formed_dataset_passes() {
        let mut other = well_formed();
        other.subject_id = "s1".to_owned();
        other.action_obs = vec![(0.0, 1)];
        let ds = Dataset::new(vec![well_formed(), other]);
        assert!(validate_dataset(&ds).is_empty());
    }

    #[test]
    fn missing_initial_action_is_flagged() {
        let mut tr = well_formed();
        tr.action_obs = vec![(0.05, 1)];
        let ds = Dataset::new(vec![tr]);
        let diags = validate_dataset(&ds);
        assert!(diags
            .iter()
            .any(|d| matches!(d, Diagnostic::MissingInitialAction { .. })));
    }

    #[test]
    fn single_action_data_is_flagged() {
        let mut tr = well_formed();
        tr.action_obs = vec![(0.0, 1)];
        let ds = Dataset::new(vec![tr]);
        let diags = validate_dataset(&ds);
        assert_eq!(diags, vec![Diagnostic::SingleActionData]);
    }

    #[test]
    fn non_monotone_and_ragged_dimensions_are_flagged() {
        let mut tr = well_formed();
        tr.state_obs = vec![(0.1, vec![0.0]), (0.1, vec![0.0, 1.0])];
        let ds = Dataset {
            trajectories: vec![tr],
            d: 1,
        };
        let diags = validate_dataset(&ds);
        assert!(diags.iter().any(|d| matches!(
            d,
            Diagnostic::NonMonotoneTimes {
                channel: Channel::State,
                ..
            }
        )));
        assert!(diags
            .iter()
            .any(|d| matches!(d, Diagnostic::DimensionMismatch { .. })));
    }

    #[test]
    fn empty_dataset_is_flagged() {
        let ds = Dataset::new(vec![]);
        assert_eq!(validate_dataset(&ds), vec![Diagnostic::EmptyDataset]);
    }

    #[test]
    fn action_resolution_is_right_continuous() {
        let tr = well_formed();
        assert_eq!(tr.action_at(0.0), Some(1));
        assert_eq!(tr.action_at(0.1499999), Some(1));
        // At the change point the new value holds, including from just below
        // within tolerance.
        assert_eq!(tr.action_at(0.15), Some(0));
        assert_eq!(tr.action_at(0.15 - 5e-10), Some(0));
        assert_eq!(tr.action_at(0.15 - 1e-5), Some(1));
        assert_eq!(tr.action_at(9.0), Some(0));
        assert_eq!(tr.action_at(-1.0), None);
    }

    #[test]
    fn state_lookup_uses_time_tolerance() {
        let tr = well_formed();
        assert_eq!(tr.state_at(0.1), Some(&[0.5][..]));
        assert_eq!(tr.state_at(0.1 + 5e-10), Some(&[0.5][..]));
        assert_eq!(tr.state_at(0.105), None);
    }

    #[test]
    fn action_constant_on_detects_interior_flips() {
        let tr = well_formed();
        assert_eq!(tr.action_constant_on(0.0, 0.1), Some(1));
        assert_eq!(tr.action_constant_on(0.1, 0.2), None);
        // A change point exactly at either endpoint does not count as interior.
        assert_eq!(tr.action_constant_on(0.15, 0.2), Some(0));
        assert_eq!(tr.action_constant_on(0.05, 0.15), Some(1));
    }

    proptest::proptest! {
        #[test]
        fn resolve_matches_naive_scan(
            times in proptest::collection::vec(0.0f64..10.0, 1..8),
            query in 0.0f64..10.0,
        ) {
            let mut times = times;
            times.sort_by(f64::total_cmp);
            times.dedup();
            let action_obs: alloc::vec::Vec<(f64, u8)> =
                times.iter().enumerate().map(|(i, &t)| (t, (i % 2) as u8)).collect();
            let tr = MultiResTrajectory {
                subject_id: "p".to_owned(),
                state_obs: vec![],
                outcome_obs: vec![],
                action_obs: action_obs.clone(),
            };
            let naive = action_obs
                .iter()
                .filter(|(t, _)| *t <= query + TIME_TOL)
                .last()
                .map(|&(_, a)| a);
            proptest::prop_assert_eq!(tr.action_at(query), naive);
        }
    }
}
