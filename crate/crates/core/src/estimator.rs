//! Assembles the estimating-equation system, solves for the value-function
//! coefficients, and forms the cumulative-effect statistic.
//!
//! Each usable outcome observation contributes one temporal-difference term.
//! Writing β_a for the value coefficients under action a, the population
//! moment E[ψ·(y − rowᵀβ_a) | A = a] = 0 with
//!
//! ```text
//! row = −log γ · Ψ(S(t)) − ∇Ψ(S(t))ᵀ D(t)
//! ```
//!
//! identifies β_a, so the estimator solves the per-action linear system
//! Σ̂_a β_a = η̂_a built by averaging ψ·rowᵀ and ψ·y. The treated-minus-control
//! value contrast integrated against a reference measure is the effect
//! estimate τ̂, studentized by a sandwich variance into a normal Z statistic.

use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
// Provides f64 math in no_std builds; whenever std is linked (tests, the
// CLI) the inherent methods shadow it and the import looks unused.
#[allow(unused_imports)]
use num_traits::Float;

use crate::data::{
    validate_dataset, AteTestResult, Dataset, EstimatorConfig, ReferenceMeasure, TIME_TOL,
};
use crate::error::{Diagnostic, Error};
use crate::features::{build_feature_map, integrate_psi, FeatureMap};
use crate::linalg;
use crate::splines::{fit_trajectory, PathModel, SplineModel};
use crate::stats::normal_cdf;

/// Condition threshold beyond which a block solve falls back to ridge-
/// stabilized normal equations.
const CONDITION_LIMIT: f64 = 1e10;

/// One temporal-difference term: everything one outcome observation
/// contributes to the estimating equations.
#[derive(Debug, Clone, PartialEq)]
pub struct TdTerm {
    pub subject: String,
    pub time: f64,
    pub action: u8,
    /// Ψ evaluated at the state used for this term.
    pub psi_vec: DVector<f64>,
    /// The row this term contributes against β_action.
    pub row_vec: DVector<f64>,
    pub outcome: f64,
    /// Drift estimate at `time`.
    pub drift: DVector<f64>,
}

/// The averaged block system Σ̂ β = η̂, kept as per-action blocks (the full
/// matrix is block-diagonal because each term touches only its own action).
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSystem {
    pub sigma0: DMatrix<f64>,
    pub sigma1: DMatrix<f64>,
    pub eta0: DVector<f64>,
    pub eta1: DVector<f64>,
    pub terms: Vec<TdTerm>,
    /// Number of terms; the √n in the statistic.
    pub n_eff: usize,
    /// Outcome observations skipped during assembly.
    pub dropped: usize,
    /// Feature count M.
    pub m: usize,
}

impl AssembledSystem {
    /// Averages a list of terms into the block system.
    pub fn from_terms(terms: Vec<TdTerm>, m: usize, dropped: usize) -> Result<Self, Error> {
        if terms.is_empty() {
            return Err(Error::EmptySystem);
        }
        let n_eff = terms.len();
        let mut sigma0 = DMatrix::zeros(m, m);
        let mut sigma1 = DMatrix::zeros(m, m);
        let mut eta0 = DVector::zeros(m);
        let mut eta1 = DVector::zeros(m);
        let mut counts = [0usize; 2];
        for term in &terms {
            let (sigma, eta) = if term.action == 0 {
                (&mut sigma0, &mut eta0)
            } else {
                (&mut sigma1, &mut eta1)
            };
            sigma.ger(1.0, &term.psi_vec, &term.row_vec, 1.0);
            eta.axpy(term.outcome, &term.psi_vec, 1.0);
            counts[usize::from(term.action.min(1))] += 1;
        }
        if counts[0] == 0 || counts[1] == 0 {
            return Err(Error::SingleActionSystem {
                action: if counts[0] == 0 { 1 } else { 0 },
            });
        }
        let scale = 1.0 / n_eff as f64;
        sigma0.scale_mut(scale);
        sigma1.scale_mut(scale);
        eta0.scale_mut(scale);
        eta1.scale_mut(scale);
        Ok(Self {
            sigma0,
            sigma1,
            eta0,
            eta1,
            terms,
            n_eff,
            dropped,
            m,
        })
    }
}

/// Builds one temporal-difference term per usable outcome observation.
///
/// The state at an outcome time is the exact observation when one exists
/// within [`TIME_TOL`], otherwise the path model's smoothed state; the drift
/// always comes from the model. Outcome times outside a subject's model
/// domain are skipped and counted in `dropped`.
pub fn assemble<P: PathModel>(
    dataset: &Dataset,
    config: &EstimatorConfig,
    models: &[P],
    fm: &FeatureMap,
) -> Result<AssembledSystem, Error> {
    assert_eq!(
        models.len(),
        dataset.trajectories.len(),
        "one path model per trajectory"
    );
    let neg_log_gamma = -config.gamma.ln();
    let mut terms = Vec::new();
    let mut dropped = 0usize;
    for (traj, model) in dataset.trajectories.iter().zip(models) {
        let (lo, hi) = model.domain();
        for &(t, y) in &traj.outcome_obs {
            if t < lo - TIME_TOL || t > hi + TIME_TOL {
                dropped += 1;
                continue;
            }
            let Some(action) = traj.action_at(t) else {
                dropped += 1;
                continue;
            };
            let state = match traj.state_at(t) {
                Some(obs) => obs.to_vec(),
                None => model.state(t),
            };
            let drift = DVector::from_vec(model.drift(t));
            let psi = fm.psi(&state);
            let row = &psi * neg_log_gamma - fm.grad_psi(&state).tr_mul(&drift);
            terms.push(TdTerm {
                subject: traj.subject_id.clone(),
                time: t,
                action,
                psi_vec: psi,
                row_vec: row,
                outcome: y,
                drift,
            });
        }
    }
    AssembledSystem::from_terms(terms, fm.m(), dropped)
}

/// Solved value-function coefficients plus conditioning report.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSolution {
    pub beta0: DVector<f64>,
    pub beta1: DVector<f64>,
    /// 2-norm condition estimate of the full block-diagonal matrix.
    pub cond_sigma: f64,
    pub diagnostics: Vec<Diagnostic>,
}

/// Solves each action block independently. Blocks whose condition estimate
/// exceeds 1e10 are re-solved through ridge-stabilized normal equations with
/// weight `ridge · ‖Σ‖²_F / M`, recording a diagnostic.
pub fn solve_beta(system: &AssembledSystem, ridge: f64) -> Result<BetaSolution, Error> {
    let (lo0, hi0) = linalg::singular_extrema(&system.sigma0);
    let (lo1, hi1) = linalg::singular_extrema(&system.sigma1);
    let cond_sigma = linalg::condition_from_extrema(lo0.min(lo1), hi0.max(hi1));
    let mut diagnostics = Vec::new();
    let mut solve_block = |sigma: &DMatrix<f64>,
                           eta: &DVector<f64>,
                           cond: f64,
                           action: u8|
     -> Result<DVector<f64>, Error> {
        if cond <= CONDITION_LIMIT {
            if let Some(beta) = linalg::lu_solve(sigma, eta) {
                return Ok(beta);
            }
        }
        if ridge > 0.0 {
            let lambda = ridge * sigma.norm_squared() / system.m as f64;
            if let Some(beta) = linalg::ridge_normal_solve(sigma, eta, lambda) {
                diagnostics.push(Diagnostic::RidgeFallback {
                    action,
                    condition: cond,
                });
                return Ok(beta);
            }
        }
        Err(Error::SingularSigma {
            action,
            condition: cond,
        })
    };
    let beta0 = solve_block(
        &system.sigma0,
        &system.eta0,
        linalg::condition_from_extrema(lo0, hi0),
        0,
    )?;
    let beta1 = solve_block(
        &system.sigma1,
        &system.eta1,
        linalg::condition_from_extrema(lo1, hi1),
        1,
    )?;
    Ok(BetaSolution {
        beta0,
        beta1,
        cond_sigma,
        diagnostics,
    })
}

/// Plug-in effect estimate: ∫ Ψᵀ(β̂₁ − β̂₀) d𝔾.
pub fn estimate_tau(
    beta: &BetaSolution,
    fm: &FeatureMap,
    measure: &ReferenceMeasure,
    init_states: &[Vec<f64>],
) -> Result<f64, Error> {
    let v = integrate_psi(fm, measure, init_states)?;
    Ok(v.dot(&(&beta.beta1 - &beta.beta0)))
}

/// Sandwich variance pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    /// σ̂², the variance of √n_eff · τ̂.
    pub sigma_sq: f64,
    /// Score outer-product block for action 0.
    pub omega0: DMatrix<f64>,
    /// Score outer-product block for action 1.
    pub omega1: DMatrix<f64>,
}

/// Sandwich variance of the effect estimate.
///
/// With residual ε̂ = y − rowᵀβ̂_a per term and v = ∫Ψ d𝔾, the statistic's
/// influence per term is ±ε̂·ψᵀ(Σ̂_a⁻ᵀv) (minus for control, plus for
/// treated); σ̂² is the mean of its squares. Errors with
/// [`Error::NonPositiveVariance`] when the residuals are numerically
/// degenerate, e.g. on noise-free data whose value function the basis
/// reproduces exactly.
pub fn estimate_variance(
    system: &AssembledSystem,
    beta: &BetaSolution,
    fm: &FeatureMap,
    measure: &ReferenceMeasure,
    init_states: &[Vec<f64>],
) -> Result<VarianceEstimate, Error> {
    let v = integrate_psi(fm, measure, init_states)?;
    variance_given_v(system, beta, &v)
}

pub(crate) fn variance_given_v(
    system: &AssembledSystem,
    beta: &BetaSolution,
    v: &DVector<f64>,
) -> Result<VarianceEstimate, Error> {
    let solve_t = |sigma: &DMatrix<f64>, action: u8| {
        linalg::lu_solve_transpose(sigma, v).ok_or_else(|| {
            let (lo, hi) = linalg::singular_extrema(sigma);
            Error::SingularSigma {
                action,
                condition: linalg::condition_from_extrema(lo, hi),
            }
        })
    };
    let x0 = solve_t(&system.sigma0, 0)?;
    let x1 = solve_t(&system.sigma1, 1)?;

    let n = system.n_eff as f64;
    let mut omega0 = DMatrix::zeros(system.m, system.m);
    let mut omega1 = DMatrix::zeros(system.m, system.m);
    let mut acc = 0.0;
    let mut outcome_scale = 0.0;
    for term in &system.terms {
        let (beta_a, x, omega) = if term.action == 0 {
            (&beta.beta0, &x0, &mut omega0)
        } else {
            (&beta.beta1, &x1, &mut omega1)
        };
        let eps = term.outcome - term.row_vec.dot(beta_a);
        let infl = eps * term.psi_vec.dot(x);
        acc += infl * infl;
        omega.ger(eps * eps / n, &term.psi_vec, &term.psi_vec, 1.0);
        outcome_scale += term.outcome * term.outcome;
    }
    let sigma_sq = acc / n;
    // Relative floor: residuals at the level of float noise mean the basis
    // reproduced the outcomes exactly and the statistic is undefined.
    if sigma_sq <= 0.0 || sigma_sq <= 1e-20 * (outcome_scale / n) {
        return Err(Error::NonPositiveVariance { value: sigma_sq });
    }
    Ok(VarianceEstimate {
        sigma_sq,
        omega0,
        omega1,
    })
}

/// Solves an assembled system through to the final test result.
pub(crate) fn finalize_test(
    system: &AssembledSystem,
    config: &EstimatorConfig,
    fm: &FeatureMap,
    init_states: &[Vec<f64>],
) -> Result<AteTestResult, Error> {
    let beta = solve_beta(system, config.ridge)?;
    let v = integrate_psi(fm, &config.reference_measure, init_states)?;
    let tau_hat = v.dot(&(&beta.beta1 - &beta.beta0));
    let variance = variance_given_v(system, &beta, &v)?;
    let sigma_hat = variance.sigma_sq.sqrt();
    let z = (system.n_eff as f64).sqrt() * tau_hat / sigma_hat;
    let mut diagnostics = beta.diagnostics.clone();
    if system.dropped > 0 {
        diagnostics.push(Diagnostic::DroppedTerms {
            count: system.dropped,
        });
    }
    Ok(AteTestResult {
        tau_hat,
        sigma_hat,
        z,
        p_one_sided: 1.0 - normal_cdf(z),
        p_two_sided: 2.0 * (1.0 - normal_cdf(z.abs())),
        beta0: beta.beta0.as_slice().to_vec(),
        beta1: beta.beta1.as_slice().to_vec(),
        n_eff: system.n_eff,
        cond_sigma: beta.cond_sigma,
        gamma: config.gamma,
        diagnostics,
    })
}

/// Runs the full test with caller-supplied path models instead of spline
/// fits. This is how exact dynamics are injected in verification settings;
/// [`run_test`] is the production entry point.
pub fn run_test_with_models<P: PathModel>(
    dataset: &Dataset,
    config: &EstimatorConfig,
    models: &[P],
) -> Result<AteTestResult, Error> {
    let findings = validate_dataset(dataset);
    if !findings.is_empty() {
        return Err(Error::InvalidDataset(findings));
    }
    let fm = build_feature_map(&config.basis_spec, &dataset.pooled_states())?;
    let system = assemble(dataset, config, models, &fm)?;
    finalize_test(&system, config, &fm, &dataset.initial_states())
}

/// Full pipeline: smooth every trajectory, build the feature map from pooled
/// states, assemble, solve, and studentize. Pure in its inputs.
pub fn run_test(dataset: &Dataset, config: &EstimatorConfig) -> Result<AteTestResult, Error> {
    let findings = validate_dataset(dataset);
    if !findings.is_empty() {
        return Err(Error::InvalidDataset(findings));
    }
    let models: Vec<SplineModel> = dataset
        .trajectories
        .iter()
        .map(|tr| fit_trajectory(&tr.state_obs, &config.smoothing_spec))
        .collect::<Result<_, _>>()?;
    run_test_with_models(dataset, config, &models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Alternative, MultiResTrajectory};
    use crate::features::{FeatureKind, FeatureSpec};
    use alloc::borrow::ToOwned;
    use alloc::boxed::Box;
    use alloc::vec;
    use approx::assert_relative_eq;

    /// Analytic path for injection: state and drift given by closures.
    struct FnPath {
        dim: usize,
        state: Box<dyn Fn(f64) -> Vec<f64>>,
        drift: Box<dyn Fn(f64) -> Vec<f64>>,
        domain: (f64, f64),
    }

    impl PathModel for FnPath {
        fn dim(&self) -> usize {
            self.dim
        }
        fn state(&self, t: f64) -> Vec<f64> {
            (self.state)(t)
        }
        fn drift(&self, t: f64) -> Vec<f64> {
            (self.drift)(t)
        }
        fn domain(&self) -> (f64, f64) {
            self.domain
        }
    }

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

    fn term(action: u8, psi: &[f64], row: &[f64], y: f64) -> TdTerm {
        TdTerm {
            subject: "s".to_owned(),
            time: 0.0,
            action,
            psi_vec: DVector::from_row_slice(psi),
            row_vec: DVector::from_row_slice(row),
            outcome: y,
            drift: DVector::zeros(1),
        }
    }

    #[test]
    fn row_vector_matches_hand_arithmetic() {
        // γ = 0.9, Ψ = (1, s) at s = 2, drift 0.5:
        // row = 0.105360516·(1, 2) − (0, 1)·0.5 = (0.105360516, −0.289278968).
        let traj = MultiResTrajectory {
            subject_id: "a".to_owned(),
            state_obs: vec![(0.2, vec![2.0])],
            outcome_obs: vec![(0.2, 1.0)],
            action_obs: vec![(0.0, 1)],
        };
        let ctrl = MultiResTrajectory {
            subject_id: "b".to_owned(),
            state_obs: vec![(0.2, vec![1.0])],
            outcome_obs: vec![(0.2, 0.5)],
            action_obs: vec![(0.0, 0)],
        };
        let dataset = Dataset::new(vec![traj, ctrl]);
        let config = poly1_config();
        let fm = build_feature_map(&config.basis_spec, &dataset.pooled_states()).unwrap();
        let models: Vec<FnPath> = (0..2)
            .map(|_| FnPath {
                dim: 1,
                state: Box::new(|_| vec![0.0]),
                drift: Box::new(|_| vec![0.5]),
                domain: (0.0, 1.0),
            })
            .collect();
        let system = assemble(&dataset, &config, &models, &fm).unwrap();
        let treated = system.terms.iter().find(|t| t.action == 1).unwrap();
        assert_relative_eq!(treated.row_vec[0], 0.105360516, max_relative = 1e-8);
        assert_relative_eq!(treated.row_vec[1], -0.289278968, max_relative = 1e-8);
        // The treated block is ψ·rowᵀ averaged over both terms.
        let outer = &treated.psi_vec * treated.row_vec.transpose();
        assert_relative_eq!(system.sigma1[(1, 1)], outer[(1, 1)] / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn observed_states_win_over_imputed_ones() {
        let traj = MultiResTrajectory {
            subject_id: "a".to_owned(),
            state_obs: vec![(0.1, vec![2.0]), (0.2, vec![2.0]), (0.3, vec![2.0]), (0.4, vec![2.0])],
            outcome_obs: vec![(0.2, 1.0), (0.25, 1.0), (0.4, 1.0)],
            action_obs: vec![(0.0, 1), (0.35, 0)],
        };
        let dataset = Dataset::new(vec![traj]);
        let config = poly1_config();
        let fm = build_feature_map(&config.basis_spec, &dataset.pooled_states()).unwrap();
        let models = vec![FnPath {
            dim: 1,
            state: Box::new(|_| vec![100.0]),
            drift: Box::new(|_| vec![0.0]),
            domain: (0.0, 1.0),
        }];
        let system = assemble(&dataset, &config, &models, &fm).unwrap();
        // Outcomes at 0.2 and 0.4 match observed states exactly; 0.25 does
        // not and must use the model's (deliberately outlandish) value.
        let by_time = |t: f64| {
            system
                .terms
                .iter()
                .find(|term| (term.time - t).abs() < 1e-12)
                .unwrap()
        };
        assert_eq!(by_time(0.2).psi_vec[1], 2.0);
        assert_eq!(by_time(0.4).psi_vec[1], 2.0);
        assert_eq!(by_time(0.25).psi_vec[1], 100.0);
    }

    #[test]
    fn out_of_domain_outcomes_are_dropped_and_counted() {
        let traj = MultiResTrajectory {
            subject_id: "a".to_owned(),
            state_obs: vec![(0.0, vec![1.0]), (1.0, vec![2.0])],
            outcome_obs: vec![(0.5, 1.0), (5.0, 9.9)],
            action_obs: vec![(0.0, 1), (0.6, 0)],
        };
        let mut ctrl = traj.clone();
        ctrl.subject_id = "b".to_owned();
        ctrl.action_obs = vec![(0.0, 0)];
        let dataset = Dataset::new(vec![traj, ctrl]);
        let config = poly1_config();
        let fm = build_feature_map(&config.basis_spec, &dataset.pooled_states()).unwrap();
        let models: Vec<FnPath> = (0..2)
            .map(|_| FnPath {
                dim: 1,
                state: Box::new(|t| vec![t]),
                drift: Box::new(|_| vec![1.0]),
                domain: (0.0, 1.0),
            })
            .collect();
        let system = assemble(&dataset, &config, &models, &fm).unwrap();
        assert_eq!(system.n_eff, 2);
        assert_eq!(system.dropped, 2);
    }

    #[test]
    fn single_action_terms_are_rejected() {
        let terms = vec![term(1, &[1.0], &[0.5], 1.0), term(1, &[1.0], &[0.4], 2.0)];
        let err = AssembledSystem::from_terms(terms, 1, 0);
        assert!(matches!(err, Err(Error::SingleActionSystem { action: 1 })));
        assert!(matches!(
            AssembledSystem::from_terms(vec![], 1, 0),
            Err(Error::EmptySystem)
        ));
    }

    #[test]
    fn scalar_blocks_solve_as_ratios() {
        let terms = vec![
            term(0, &[1.0], &[0.5], 1.0),
            term(1, &[1.0], &[0.25], 2.0),
        ];
        let system = AssembledSystem::from_terms(terms, 1, 0).unwrap();
        let beta = solve_beta(&system, 0.0).unwrap();
        // Per-block ratio of averaged η over averaged Σ; the common 1/n_eff
        // cancels.
        assert_relative_eq!(beta.beta0[0], 1.0 / 0.5, max_relative = 1e-12);
        assert_relative_eq!(beta.beta1[0], 2.0 / 0.25, max_relative = 1e-12);
    }

    #[test]
    fn duplicating_every_term_leaves_beta_unchanged() {
        let base = vec![
            term(0, &[1.0, 0.3], &[0.5, 0.1], 1.0),
            term(0, &[1.0, -0.4], &[0.45, -0.2], 0.4),
            term(1, &[1.0, 0.8], &[0.25, 0.3], 2.0),
            term(1, &[1.0, 0.1], &[0.3, 0.05], 1.4),
        ];
        let mut doubled = base.clone();
        doubled.extend(base.iter().cloned());
        let a = solve_beta(&AssembledSystem::from_terms(base, 2, 0).unwrap(), 0.0).unwrap();
        let b = solve_beta(&AssembledSystem::from_terms(doubled, 2, 0).unwrap(), 0.0).unwrap();
        assert_relative_eq!(a.beta0[1], b.beta0[1], max_relative = 1e-12);
        assert_relative_eq!(a.beta1[0], b.beta1[0], max_relative = 1e-12);
    }

    #[test]
    fn singular_block_without_ridge_errors_and_with_ridge_recovers() {
        // Identical psi directions make the 2x2 block rank one.
        let terms = vec![
            term(0, &[1.0, 1.0], &[0.5, 0.5], 1.0),
            term(0, &[1.0, 1.0], &[0.5, 0.5], 1.0),
            term(1, &[1.0, 0.5], &[0.3, 0.1], 1.0),
            term(1, &[1.0, -0.5], &[0.2, 0.4], 0.5),
        ];
        let system = AssembledSystem::from_terms(terms, 2, 0).unwrap();
        assert!(matches!(
            solve_beta(&system, 0.0),
            Err(Error::SingularSigma { action: 0, .. })
        ));
        let sol = solve_beta(&system, 1e-8).unwrap();
        assert!(sol
            .diagnostics
            .iter()
            .any(|d| matches!(d, Diagnostic::RidgeFallback { action: 0, .. })));
    }

    #[test]
    fn tau_is_linear_in_the_coefficient_gap() {
        let fm = build_feature_map(
            &FeatureSpec {
                kind: FeatureKind::PolynomialTensor,
                max_degree: 1,
                ..FeatureSpec::default()
            },
            &[vec![0.0], vec![1.0]],
        )
        .unwrap();
        let beta = BetaSolution {
            beta0: DVector::from_row_slice(&[1.0, 2.0]),
            beta1: DVector::from_row_slice(&[1.0, 2.0]),
            cond_sigma: 1.0,
            diagnostics: vec![],
        };
        let measure = ReferenceMeasure::PointMass { point: vec![3.0] };
        assert_eq!(estimate_tau(&beta, &fm, &measure, &[]).unwrap(), 0.0);
        let mut wider = beta.clone();
        wider.beta1 = DVector::from_row_slice(&[2.0, 3.0]);
        let tau = estimate_tau(&wider, &fm, &measure, &[]).unwrap();
        let mut double = wider.clone();
        double.beta1 = &beta.beta1 + 2.0 * (&wider.beta1 - &beta.beta1);
        let tau2 = estimate_tau(&double, &fm, &measure, &[]).unwrap();
        assert_relative_eq!(tau2, 2.0 * tau, max_relative = 1e-12);
    }

    #[test]
    fn scalar_variance_matches_hand_expansion() {
        // One term per action, M = 1, with coefficients chosen away from the
        // least-squares solution so the residuals stay nonzero.
        let terms = vec![
            term(0, &[1.0], &[0.5], 1.0),
            term(1, &[1.0], &[0.25], 2.0),
        ];
        let system = AssembledSystem::from_terms(terms, 1, 0).unwrap();
        let beta = BetaSolution {
            beta0: DVector::from_row_slice(&[1.0]),
            beta1: DVector::from_row_slice(&[4.4]),
            cond_sigma: 1.0,
            diagnostics: vec![],
        };
        let v = DVector::from_row_slice(&[2.0]);
        let est = variance_given_v(&system, &beta, &v).unwrap();
        // Blocks: Σ̄₀ = 0.25, Σ̄₁ = 0.125 (averaged over n_eff = 2).
        let eps0: f64 = 1.0 - 0.5 * 1.0;
        let eps1: f64 = 2.0 - 0.25 * 4.4;
        let want = 0.5 * ((2.0 / 0.25 * eps0).powi(2) + (2.0 / 0.125 * eps1).powi(2));
        assert_relative_eq!(est.sigma_sq, want, max_relative = 1e-12);
        assert_relative_eq!(est.omega0[(0, 0)], eps0 * eps0 / 2.0, max_relative = 1e-12);
        assert_relative_eq!(est.omega1[(0, 0)], eps1 * eps1 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn variance_scales_quadratically_with_outcomes() {
        // Three terms per action so the blocks are overdetermined and the
        // residuals (hence the variance) are nonzero.
        let terms = vec![
            term(0, &[1.0, 0.3], &[0.5, 0.1], 1.0),
            term(0, &[1.0, -0.4], &[0.45, -0.2], 0.4),
            term(0, &[1.0, 0.9], &[0.55, 0.2], 0.7),
            term(1, &[1.0, 0.8], &[0.25, 0.3], 2.0),
            term(1, &[1.0, 0.1], &[0.3, 0.05], 1.4),
            term(1, &[1.0, -0.3], &[0.28, -0.1], 1.1),
        ];
        let scaled: Vec<TdTerm> = terms
            .iter()
            .cloned()
            .map(|mut t| {
                t.outcome *= 3.0;
                t
            })
            .collect();
        let v = DVector::from_row_slice(&[1.0, 0.2]);
        let sys = AssembledSystem::from_terms(terms, 2, 0).unwrap();
        let sys3 = AssembledSystem::from_terms(scaled, 2, 0).unwrap();
        let beta = solve_beta(&sys, 0.0).unwrap();
        let mut beta3 = solve_beta(&sys3, 0.0).unwrap();
        // β̂ is linear in y, so the scaled system's solution is 3β̂.
        assert_relative_eq!(beta3.beta1[0], 3.0 * beta.beta1[0], max_relative = 1e-10);
        beta3.beta0 = 3.0 * &beta.beta0;
        beta3.beta1 = 3.0 * &beta.beta1;
        let a = variance_given_v(&sys, &beta, &v).unwrap();
        let b = variance_given_v(&sys3, &beta3, &v).unwrap();
        assert_relative_eq!(b.sigma_sq, 9.0 * a.sigma_sq, max_relative = 1e-10);
    }

    #[test]
    fn residual_orthogonality_holds_at_the_solution() {
        let terms = vec![
            term(0, &[1.0, 0.3], &[0.5, 0.1], 1.0),
            term(0, &[1.0, -0.4], &[0.45, -0.2], 0.4),
            term(0, &[1.0, 0.9], &[0.6, 0.33], -0.2),
            term(1, &[1.0, 0.8], &[0.25, 0.3], 2.0),
            term(1, &[1.0, 0.1], &[0.3, 0.05], 1.4),
            term(1, &[1.0, -0.6], &[0.21, -0.4], 0.9),
        ];
        let system = AssembledSystem::from_terms(terms, 2, 0).unwrap();
        let beta = solve_beta(&system, 0.0).unwrap();
        let r0 = &system.eta0 - &system.sigma0 * &beta.beta0;
        let r1 = &system.eta1 - &system.sigma1 * &beta.beta1;
        assert!(r0.amax() < 1e-8);
        assert!(r1.amax() < 1e-8);
    }

    #[test]
    fn mirrored_arms_give_zero_statistic() {
        // Two subjects with identical observations but opposite labels: the
        // two blocks coincide, so τ̂ = 0 and Z = 0 exactly.
        let mk = |id: &str, a: u8| MultiResTrajectory {
            subject_id: id.to_owned(),
            state_obs: (0..20).map(|i| (0.1 * i as f64, vec![(0.3 * i as f64).sin()])).collect(),
            outcome_obs: (1..10).map(|i| (0.2 * i as f64, 0.5 * i as f64)).collect(),
            action_obs: vec![(0.0, a)],
        };
        let dataset = Dataset::new(vec![mk("a", 1), mk("b", 0)]);
        let config = poly1_config();
        let result = run_test(&dataset, &config).unwrap();
        assert_eq!(result.tau_hat, 0.0);
        assert_eq!(result.z, 0.0);
        assert_eq!(result.p_one_sided, 0.5);
        assert_eq!(result.p_value(Alternative::OneSidedGreater), 0.5);
    }

    #[test]
    fn invalid_datasets_are_refused() {
        let ds = Dataset::new(vec![]);
        assert!(matches!(
            run_test(&ds, &EstimatorConfig::default()),
            Err(Error::InvalidDataset(_))
        ));
    }
}
