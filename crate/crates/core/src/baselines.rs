//! Reference methods the main test is compared against: a two-sample t
//! test on pooled outcomes, a discrete-time version of the value-function
//! test, and a cross-fitted partially linear regression.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
// Provides f64 math in no_std builds; whenever std is linked (tests, the
// CLI) the inherent methods shadow it and the import looks unused.
#[allow(unused_imports)]
use num_traits::Float;

use crate::data::{validate_dataset, Alternative, Dataset, EstimatorConfig, TIME_TOL};
use crate::error::{Diagnostic, Error};
use crate::estimator::{finalize_test, AssembledSystem, TdTerm};
use crate::features::{build_feature_map, FeatureMap};
use crate::linalg::ridge_normal_solve;
use crate::stats::{normal_cdf, students_t_cdf};

/// Outcome of a baseline method, reduced to the pieces the study harness
/// needs.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub method: &'static str,
    pub statistic: f64,
    pub estimate: f64,
    pub p: f64,
    pub diagnostics: Vec<Diagnostic>,
}

fn normal_p(z: f64, alternative: Alternative) -> f64 {
    match alternative {
        Alternative::OneSidedGreater => 1.0 - normal_cdf(z),
        Alternative::TwoSided => 2.0 * (1.0 - normal_cdf(z.abs())),
    }
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Unequal-variance two-sample t test on raw outcome groups.
pub fn welch_from_groups(
    treated: &[f64],
    control: &[f64],
    alternative: Alternative,
) -> Result<BaselineResult, Error> {
    if treated.is_empty() {
        return Err(Error::EmptyGroup { action: 1 });
    }
    if control.is_empty() {
        return Err(Error::EmptyGroup { action: 0 });
    }
    let (m1, v1) = mean_and_var(treated);
    let (m0, v0) = mean_and_var(control);
    let n1 = treated.len() as f64;
    let n0 = control.len() as f64;
    let estimate = m1 - m0;
    let se_sq = v1 / n1 + v0 / n0;
    if se_sq <= 0.0 {
        // Degenerate groups: report certainty about whatever gap there is.
        let (statistic, p) = if estimate == 0.0 {
            (
                0.0,
                match alternative {
                    Alternative::OneSidedGreater => 0.5,
                    Alternative::TwoSided => 1.0,
                },
            )
        } else {
            let sign = estimate.signum();
            (
                sign * f64::INFINITY,
                match alternative {
                    Alternative::OneSidedGreater if sign > 0.0 => 0.0,
                    Alternative::OneSidedGreater => 1.0,
                    Alternative::TwoSided => 0.0,
                },
            )
        };
        return Ok(BaselineResult {
            method: "t-test",
            statistic,
            estimate,
            p,
            diagnostics: alloc::vec![Diagnostic::ZeroVariance],
        });
    }
    let statistic = estimate / se_sq.sqrt();
    // Satterthwaite's degrees of freedom; single-observation groups
    // contribute zero variance and drop out of the correction.
    let mut denom = 0.0;
    if treated.len() > 1 {
        denom += (v1 / n1) * (v1 / n1) / (n1 - 1.0);
    }
    if control.len() > 1 {
        denom += (v0 / n0) * (v0 / n0) / (n0 - 1.0);
    }
    let df = se_sq * se_sq / denom;
    let p = match alternative {
        Alternative::OneSidedGreater => 1.0 - students_t_cdf(statistic, df),
        Alternative::TwoSided => 2.0 * (1.0 - students_t_cdf(statistic.abs(), df)),
    };
    Ok(BaselineResult {
        method: "t-test",
        statistic,
        estimate,
        p,
        diagnostics: Vec::new(),
    })
}

/// Pools every outcome observation by the action in force at its time and
/// runs the unequal-variance t test between the two pools.
pub fn welch_t_test(dataset: &Dataset, alternative: Alternative) -> Result<BaselineResult, Error> {
    let findings = validate_dataset(dataset);
    if !findings.is_empty() {
        return Err(Error::InvalidDataset(findings));
    }
    let mut groups = [Vec::new(), Vec::new()];
    for traj in &dataset.trajectories {
        for &(t, y) in &traj.outcome_obs {
            if let Some(a) = traj.action_at(t) {
                groups[usize::from(a.min(1))].push(y);
            }
        }
    }
    welch_from_groups(&groups[1], &groups[0], alternative)
}

/// Builds the discrete-time analogue of the estimating-equation system from
/// consecutive co-observed points. A pair (t, t + Δ) is usable when both
/// times carry a state and an outcome observation, both endpoints are
/// governed by the same action, and the action does not switch strictly
/// inside the window; its row is [Ψ(S_t) − γ^Δ Ψ(S_{t+Δ})] / Δ against the
/// outcome at the left endpoint. Transitions straddling a treatment switch
/// carry a mixture of both regimes and would bias whichever block absorbed
/// them, so they are counted as dropped instead.
pub(crate) fn discrete_time_system(
    dataset: &Dataset,
    config: &EstimatorConfig,
    fm: &FeatureMap,
) -> Result<AssembledSystem, Error> {
    let mut terms = Vec::new();
    let mut dropped = 0usize;
    for traj in &dataset.trajectories {
        let co: Vec<(f64, &[f64], f64)> = traj
            .outcome_obs
            .iter()
            .filter_map(|&(t, y)| traj.state_at(t).map(|s| (t, s, y)))
            .collect();
        for pair in co.windows(2) {
            let (t0, s0, y0) = pair[0];
            let (t1, s1, _) = pair[1];
            if t1 - t0 <= TIME_TOL {
                dropped += 1;
                continue;
            }
            let Some(action) = traj
                .action_constant_on(t0, t1)
                .filter(|&a| traj.action_at(t1) == Some(a))
            else {
                dropped += 1;
                continue;
            };
            let delta = t1 - t0;
            let psi0 = fm.psi(s0);
            let psi1 = fm.psi(s1);
            let row = (&psi0 - config.gamma.powf(delta) * psi1) / delta;
            terms.push(TdTerm {
                subject: traj.subject_id.clone(),
                time: t0,
                action,
                psi_vec: psi0,
                row_vec: row,
                outcome: y0,
                drift: DVector::zeros(dataset.d),
            });
        }
    }
    AssembledSystem::from_terms(terms, fm.m(), dropped)
}

/// The value-contrast test computed purely from co-observed discrete
/// transitions, without any path smoothing. Converges to the main test's
/// target as the co-observation spacing shrinks; at coarse spacing it pays
/// for the windows it must discard around treatment switches.
pub fn discrete_time_value_test(
    dataset: &Dataset,
    config: &EstimatorConfig,
) -> Result<BaselineResult, Error> {
    let findings = validate_dataset(dataset);
    if !findings.is_empty() {
        return Err(Error::InvalidDataset(findings));
    }
    let fm = build_feature_map(&config.basis_spec, &dataset.pooled_states())?;
    let system = discrete_time_system(dataset, config, &fm)?;
    let result = finalize_test(&system, config, &fm, &dataset.initial_states())?;
    Ok(BaselineResult {
        method: "dtvalue",
        statistic: result.z,
        estimate: result.tau_hat,
        p: result.p_value(config.alternative),
        diagnostics: result.diagnostics,
    })
}

/// Cross-fitted partially linear regression on co-observed points.
///
/// Outcome and action are each regressed on the state features (ridge
/// stabilized), fold by fold with subjects assigned round-robin, and the
/// treatment coefficient is the ratio of residual cross-moments. When the
/// pooled states span no usable domain the features degrade to an intercept
/// and the method reduces to a residualized difference in means. Ignores
/// carryover by construction, which is exactly the blind spot the main test
/// addresses.
pub fn dml_test(
    dataset: &Dataset,
    config: &EstimatorConfig,
    folds: usize,
) -> Result<BaselineResult, Error> {
    let findings = validate_dataset(dataset);
    if !findings.is_empty() {
        return Err(Error::InvalidDataset(findings));
    }
    struct Row {
        subject: usize,
        state: Vec<f64>,
        y: f64,
        a: f64,
    }
    let mut rows = Vec::new();
    for (subject, traj) in dataset.trajectories.iter().enumerate() {
        for &(t, y) in &traj.outcome_obs {
            let (Some(s), Some(a)) = (traj.state_at(t), traj.action_at(t)) else {
                continue;
            };
            rows.push(Row {
                subject,
                state: s.to_vec(),
                y,
                a: f64::from(a),
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptySystem);
    }
    let pooled: Vec<Vec<f64>> = rows.iter().map(|r| r.state.clone()).collect();
    let fm = match build_feature_map(&config.basis_spec, &pooled) {
        Ok(fm) => Some(fm),
        Err(Error::DegenerateDomain(_)) => None,
        Err(e) => return Err(e),
    };
    let m = fm.as_ref().map_or(1, FeatureMap::m);
    let feat = |state: &[f64]| -> DVector<f64> {
        fm.as_ref()
            .map_or_else(|| DVector::from_element(1, 1.0), |fm| fm.psi(state))
    };

    let folds_eff = folds.clamp(1, dataset.trajectories.len());
    let mut resids: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
    for k in 0..folds_eff {
        let in_test = |r: &Row| folds_eff == 1 || r.subject % folds_eff == k;
        let train: Vec<&Row> = rows
            .iter()
            .filter(|r| folds_eff == 1 || !in_test(r))
            .collect();
        let test: Vec<&Row> = rows.iter().filter(|r| in_test(r)).collect();
        if test.is_empty() || train.is_empty() {
            continue;
        }
        let x = DMatrix::from_fn(train.len(), m, |i, j| feat(&train[i].state)[j]);
        let lambda = config.ridge.max(1e-10) * x.norm_squared() / m as f64;
        let y_vec = DVector::from_iterator(train.len(), train.iter().map(|r| r.y));
        let a_vec = DVector::from_iterator(train.len(), train.iter().map(|r| r.a));
        let cy = ridge_normal_solve(&x, &y_vec, lambda).ok_or(Error::SingularNuisance)?;
        let ca = ridge_normal_solve(&x, &a_vec, lambda).ok_or(Error::SingularNuisance)?;
        for r in test {
            let f = feat(&r.state);
            resids.push((r.a - f.dot(&ca), r.y - f.dot(&cy)));
        }
        if folds_eff == 1 {
            break;
        }
    }
    let n = resids.len() as f64;
    let j = resids.iter().map(|(a, _)| a * a).sum::<f64>() / n;
    if !(j > 1e-12) {
        return Err(Error::SingularNuisance);
    }
    let theta = resids.iter().map(|(a, y)| a * y).sum::<f64>() / n / j;
    let score_sq = resids
        .iter()
        .map(|(a, y)| {
            let s = a * (y - theta * a);
            s * s
        })
        .sum::<f64>()
        / n;
    let se = (score_sq / (j * j) / n).sqrt();
    if !(se > 0.0) {
        let p = match (theta == 0.0, config.alternative) {
            (true, Alternative::OneSidedGreater) => 0.5,
            (true, Alternative::TwoSided) => 1.0,
            (false, Alternative::OneSidedGreater) if theta > 0.0 => 0.0,
            (false, Alternative::OneSidedGreater) => 1.0,
            (false, Alternative::TwoSided) => 0.0,
        };
        return Ok(BaselineResult {
            method: "dml-lite",
            statistic: if theta == 0.0 {
                0.0
            } else {
                theta.signum() * f64::INFINITY
            },
            estimate: theta,
            p,
            diagnostics: alloc::vec![Diagnostic::ZeroVariance],
        });
    }
    let statistic = theta / se;
    Ok(BaselineResult {
        method: "dml-lite",
        statistic,
        estimate: theta,
        p: normal_p(statistic, config.alternative),
        diagnostics: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MultiResTrajectory;
    use crate::estimator::solve_beta;
    use crate::features::{FeatureKind, FeatureSpec};
    use alloc::borrow::ToOwned;
    use alloc::format;
    use alloc::vec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn poly1_config() -> EstimatorConfig {
        EstimatorConfig {
            basis_spec: FeatureSpec {
                kind: FeatureKind::PolynomialTensor,
                max_degree: 1,
                ..FeatureSpec::default()
            },
            ..EstimatorConfig::default()
        }
    }

    #[test]
    fn welch_statistic_matches_the_reference_values() {
        let r = welch_from_groups(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], Alternative::TwoSided)
            .unwrap();
        assert_relative_eq!(r.statistic, -1.224744871391589, max_relative = 1e-12);
        assert_relative_eq!(r.p, 0.2878641347266908, max_relative = 1e-10);
        assert_relative_eq!(r.estimate, -1.0, max_relative = 1e-15);
        let one =
            welch_from_groups(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], Alternative::OneSidedGreater)
                .unwrap();
        assert_relative_eq!(one.p, 1.0 - 0.2878641347266908 / 2.0, max_relative = 1e-10);
    }

    #[test]
    fn welch_on_identical_groups_is_centered() {
        let r = welch_from_groups(&[1.0, 2.0], &[1.0, 2.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_relative_eq!(r.p, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn welch_zero_variance_groups_degenerate_cleanly() {
        let r = welch_from_groups(&[2.0, 2.0], &[1.0, 1.0], Alternative::OneSidedGreater).unwrap();
        assert_eq!(r.statistic, f64::INFINITY);
        assert_eq!(r.p, 0.0);
        assert!(r.diagnostics.contains(&Diagnostic::ZeroVariance));
        let tied = welch_from_groups(&[1.0, 1.0], &[1.0, 1.0], Alternative::TwoSided).unwrap();
        assert_eq!(tied.statistic, 0.0);
        assert_eq!(tied.p, 1.0);
        assert!(matches!(
            welch_from_groups(&[], &[1.0], Alternative::TwoSided),
            Err(Error::EmptyGroup { action: 1 })
        ));
    }

    #[test]
    fn welch_handles_singleton_groups() {
        let r = welch_from_groups(&[5.0], &[1.0, 2.0, 3.0], Alternative::TwoSided).unwrap();
        assert!(r.statistic.is_finite());
        assert!(r.p > 0.0 && r.p < 1.0);
    }

    #[test]
    fn welch_pools_outcomes_by_the_action_in_force() {
        let traj = MultiResTrajectory {
            subject_id: "a".to_owned(),
            state_obs: vec![(0.0, vec![0.0]), (1.0, vec![1.0])],
            outcome_obs: vec![(0.2, 1.0), (0.4, 2.0), (0.6, 3.0), (0.8, 4.0)],
            action_obs: vec![(0.0, 1), (0.5, 0)],
        };
        let r = welch_t_test(&Dataset::new(vec![traj]), Alternative::TwoSided).unwrap();
        // Treated pool {1, 2}, control pool {3, 4}.
        assert_relative_eq!(r.estimate, -2.0, max_relative = 1e-15);
    }

    fn co_observed_subject(id: &str, states: &[f64], actions: &[u8], ys: &[f64]) -> MultiResTrajectory {
        let times: Vec<f64> = (0..states.len()).map(|k| 0.2 * (k + 1) as f64).collect();
        let mut action_obs = vec![(0.0, actions[0])];
        for (k, &a) in actions.iter().enumerate().skip(1) {
            if a != actions[k - 1] {
                action_obs.push((times[k] - 0.1, a));
            }
        }
        MultiResTrajectory {
            subject_id: id.to_owned(),
            state_obs: times.iter().zip(states).map(|(&t, &s)| (t, vec![s])).collect(),
            outcome_obs: times.iter().zip(ys).map(|(&t, &y)| (t, y)).collect(),
            action_obs,
        }
    }

    #[test]
    fn constant_outcomes_recover_the_geometric_series_value() {
        // With unit spacing, γ = 0.9 and constant outcome c the fitted value
        // is c/(1−γ) with zero slope, for both actions.
        let c = 2.0;
        let mk = |id: &str, a: u8, shift: f64| MultiResTrajectory {
            subject_id: id.to_owned(),
            state_obs: (0..6).map(|k| (k as f64, vec![shift + 0.3 * k as f64])).collect(),
            outcome_obs: (0..6).map(|k| (k as f64, c)).collect(),
            action_obs: vec![(0.0, a)],
        };
        let dataset = Dataset::new(vec![mk("t", 1, 0.0), mk("c", 0, 0.15)]);
        let config = poly1_config();
        let fm = build_feature_map(&config.basis_spec, &dataset.pooled_states()).unwrap();
        let system = discrete_time_system(&dataset, &config, &fm).unwrap();
        assert_eq!(system.n_eff, 10);
        let beta = solve_beta(&system, config.ridge).unwrap();
        assert_relative_eq!(beta.beta1[0], c / (1.0 - 0.9), max_relative = 1e-8);
        assert!(beta.beta1[1].abs() < 1e-8);
        assert_relative_eq!(beta.beta0[0], c / (1.0 - 0.9), max_relative = 1e-8);
    }

    #[test]
    fn windows_spanning_action_switches_are_discarded() {
        let traj = MultiResTrajectory {
            subject_id: "a".to_owned(),
            state_obs: (0..5).map(|k| (0.2 * k as f64, vec![k as f64])).collect(),
            outcome_obs: (0..5).map(|k| (0.2 * k as f64, 1.0)).collect(),
            // Interior switch at 0.5 poisons the (0.4, 0.6) window only.
            action_obs: vec![(0.0, 1), (0.5, 0)],
        };
        let ctrl = MultiResTrajectory {
            subject_id: "b".to_owned(),
            state_obs: (0..5).map(|k| (0.2 * k as f64, vec![0.5 + k as f64])).collect(),
            outcome_obs: (0..5).map(|k| (0.2 * k as f64, 1.0)).collect(),
            action_obs: vec![(0.0, 0)],
        };
        let dataset = Dataset::new(vec![traj, ctrl]);
        let config = poly1_config();
        let fm = build_feature_map(&config.basis_spec, &dataset.pooled_states()).unwrap();
        let system = discrete_time_system(&dataset, &config, &fm).unwrap();
        // First subject keeps 3 of its 4 windows, second keeps all 4.
        assert_eq!(system.n_eff, 7);
        assert_eq!(system.dropped, 1);
        // A switch exactly at a window endpoint poisons the window ending
        // there: its endpoints no longer share an action.
        let mut at_edge = dataset.clone();
        at_edge.trajectories[0].action_obs = vec![(0.0, 1), (0.4, 0)];
        let system = discrete_time_system(&at_edge, &config, &fm).unwrap();
        assert_eq!(system.n_eff, 7);
        assert_eq!(system.dropped, 1);
    }

    #[test]
    fn partially_linear_fit_recovers_a_planted_coefficient() {
        // y = 0.5·a + s with actions balanced within every state level, so
        // the cross-fitted nuisances are exact up to ridge shrinkage.
        let states = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let actions = [0u8, 1, 0, 1, 0, 1];
        let subjects: Vec<MultiResTrajectory> = (0..4)
            .map(|i| {
                let ys: Vec<f64> = states
                    .iter()
                    .zip(&actions)
                    .map(|(&s, &a)| 0.5 * f64::from(a) + s)
                    .collect();
                co_observed_subject(&format!("s{i}"), &states, &actions, &ys)
            })
            .collect();
        let dataset = Dataset::new(subjects);
        let r = dml_test(&dataset, &poly1_config(), 2).unwrap();
        assert_eq!(r.method, "dml-lite");
        assert_relative_eq!(r.estimate, 0.5, max_relative = 1e-4);
        assert!(r.statistic > 10.0 || r.diagnostics.contains(&Diagnostic::ZeroVariance));
    }

    #[test]
    fn constant_states_reduce_to_a_difference_in_means() {
        let states = [2.0; 6];
        let actions = [0u8, 1, 0, 1, 0, 1];
        let ys = [1.0, 2.0, 1.5, 2.5, 0.5, 1.5];
        let subjects: Vec<MultiResTrajectory> = (0..2)
            .map(|i| co_observed_subject(&format!("s{i}"), &states, &actions, &ys))
            .collect();
        let dataset = Dataset::new(subjects);
        let r = dml_test(&dataset, &poly1_config(), 2).unwrap();
        // Balanced design: the residualized slope is the group mean gap.
        assert_relative_eq!(r.estimate, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn partially_linear_null_rejections_stay_near_level() {
        let mut rejections = 0u32;
        let reps = 200u32;
        for rep in 0..reps {
            let mut rng = ChaCha12Rng::seed_from_u64(900 + u64::from(rep));
            let subjects: Vec<MultiResTrajectory> = (0..6)
                .map(|i| {
                    let states: Vec<f64> =
                        (0..10).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let ys: Vec<f64> =
                        (0..10).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let actions: Vec<u8> =
                        (0..10).map(|k| u8::from((k + i) % 2 == 0)).collect();
                    co_observed_subject(&format!("s{i}"), &states, &actions, &ys)
                })
                .collect();
            let config = EstimatorConfig {
                alternative: Alternative::TwoSided,
                ..poly1_config()
            };
            let r = dml_test(&Dataset::new(subjects), &config, 2).unwrap();
            if r.p < 0.05 {
                rejections += 1;
            }
        }
        let rate = f64::from(rejections) / f64::from(reps);
        assert!(
            (0.01..=0.12).contains(&rate),
            "null rejection rate {rate} outside band"
        );
    }

    #[test]
    fn perfectly_confounded_actions_error_out() {
        // Action is an exact linear function of the state, so the residual
        // action variance collapses and no slope is identified.
        let states = [-1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
        let actions = [0u8, 1, 0, 1, 0, 1];
        let ys = [0.3, 0.9, 0.1, 0.7, 0.2, 0.8];
        let subjects: Vec<MultiResTrajectory> = (0..2)
            .map(|i| co_observed_subject(&format!("s{i}"), &states, &actions, &ys))
            .collect();
        let err = dml_test(&Dataset::new(subjects), &poly1_config(), 2);
        assert!(matches!(err, Err(Error::SingularNuisance)));
    }
}
