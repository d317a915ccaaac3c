//! Monte Carlo power studies: simulate a cohort per replication, run every
//! requested method, and aggregate rejection rates with their standard
//! errors.
//!
//! Seeding is hierarchical. Replication `r` derives its seed from the master
//! seed, subject `i` from the replication seed, and the path integrator and
//! observation sampler each get their own child of the subject seed. The
//! aggregation is keyed by replication index, so results are bit-identical
//! for a given master seed no matter how many worker threads run.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use ctate_core::{
    child_seed, discrete_time_value_test, dml_test, euler_maruyama, run_test,
    sample_multiresolution, scenario_sim0, scenario_sim1, scenario_sim2, scenario_sim3,
    welch_t_test, Dataset, EstimatorConfig, FeatureKind, FeatureSpec, KnotPlacement,
    SamplingPlan, Scenario, Schedule, SmoothingSpec,
};

/// A study config that does not satisfy its invariants.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid study config: {0}")]
pub struct InvalidConfig(String);

/// Short-period reference schedule: on for the first fifth of every unit
/// cycle.
pub fn treatment_1() -> Schedule {
    Schedule::SquareWave {
        period: 1.0,
        duty: 0.2,
        phase: 0.0,
    }
}

/// Long-period reference schedule: on for the first half of every five-unit
/// cycle.
pub fn treatment_2() -> Schedule {
    Schedule::SquareWave {
        period: 5.0,
        duty: 0.5,
        phase: 0.0,
    }
}

/// The built-in simulation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// One mean-reverting state, outcome equals the state.
    Sim0,
    /// Two independent mean-reverting states, outcome is their mean.
    Sim1,
    /// Like sim1 with positively coupled states.
    Sim2,
    /// Like sim2 but treatment reverses the state feedback.
    Sim3,
}

impl ScenarioKind {
    /// Materializes the scenario. `eps` is the diffusion scale of `sim0`;
    /// the multivariate scenarios carry fixed per-coordinate scales.
    pub fn build(self, delta: f64, eps: f64) -> Scenario {
        match self {
            Self::Sim0 => scenario_sim0(delta, eps),
            Self::Sim1 => scenario_sim1(delta),
            Self::Sim2 => scenario_sim2(delta),
            Self::Sim3 => scenario_sim3(delta),
        }
    }
}

/// Test procedures the harness can run on a simulated cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The continuous-time value-contrast test.
    Proposed,
    /// Value contrast from co-observed discrete transitions only.
    Dtvalue,
    /// Cross-fitted partially linear regression.
    Dml,
    /// Welch's t test on pooled outcomes.
    T,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Self::Proposed => "proposed",
            Self::Dtvalue => "dtvalue",
            Self::Dml => "dml",
            Self::T => "t",
        }
    }

    /// Runs the method, reduced to (estimate, statistic, p).
    pub fn run(
        self,
        dataset: &Dataset,
        config: &StudyConfig,
    ) -> Result<(f64, f64, f64), ctate_core::Error> {
        let est = &config.estimator;
        match self {
            Self::Proposed => {
                let r = run_test(dataset, est)?;
                Ok((r.tau_hat, r.z, r.p_value(est.alternative)))
            }
            Self::Dtvalue => {
                let r = discrete_time_value_test(dataset, est)?;
                Ok((r.estimate, r.statistic, r.p))
            }
            Self::Dml => {
                let r = dml_test(dataset, est, config.dml_folds)?;
                Ok((r.estimate, r.statistic, r.p))
            }
            Self::T => {
                let r = welch_t_test(dataset, est.alternative)?;
                Ok((r.estimate, r.statistic, r.p))
            }
        }
    }
}

/// Everything one power study needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Label carried into every output row.
    pub study: String,
    pub scenario: ScenarioKind,
    /// Treatment effect size.
    pub delta: f64,
    /// Diffusion scale for `sim0`.
    pub eps: f64,
    pub schedule: Schedule,
    pub plan: SamplingPlan,
    /// Horizon of each sample path.
    pub t_end: f64,
    /// Integration step of the path simulator.
    pub dt: f64,
    /// Subjects simulated per replication.
    pub subjects: usize,
    pub replications: usize,
    /// Rejection threshold on the p-value.
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub master_seed: u64,
    /// Cross-fitting folds for the partially linear baseline.
    pub dml_folds: usize,
    pub estimator: EstimatorConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            study: "sim0".to_owned(),
            scenario: ScenarioKind::Sim0,
            delta: 0.3,
            eps: 0.1,
            schedule: treatment_2(),
            plan: SamplingPlan::default(),
            t_end: 10.0,
            dt: 0.01,
            subjects: 20,
            replications: 200,
            alpha: 0.05,
            methods: vec![Method::Proposed],
            master_seed: 0,
            dml_folds: 2,
            estimator: EstimatorConfig::default(),
        }
    }
}

fn divides(interval: f64, dt: f64) -> bool {
    let ratio = interval / dt;
    interval > 0.0 && (ratio - ratio.round()).abs() <= 1e-9 && ratio.round() >= 1.0
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), InvalidConfig> {
        let fail = |msg: &str| Err(InvalidConfig(msg.to_owned()));
        if self.replications == 0 {
            return fail("replications must be at least 1");
        }
        if self.subjects == 0 {
            return fail("subjects must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha must lie in (0, 1)");
        }
        if !(self.t_end > 0.0 && self.dt > 0.0 && self.dt <= self.t_end) {
            return fail("horizon and step must be positive with dt <= t_end");
        }
        if !divides(self.plan.state_interval, self.dt)
            || !divides(self.plan.outcome_interval, self.dt)
        {
            return fail("sampling intervals must be positive integer multiples of dt");
        }
        if self.methods.is_empty() {
            return fail("at least one method is required");
        }
        let mut labels: Vec<&str> = self.methods.iter().map(|m| m.label()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.methods.len() {
            return fail("methods must be distinct");
        }
        if !(self.delta.is_finite() && self.eps.is_finite()) {
            return fail("delta and eps must be finite");
        }
        Ok(())
    }

    /// Nominal number of state observations per subject.
    pub fn n_s(&self) -> usize {
        (self.t_end / self.plan.state_interval).round() as usize
    }

    /// Nominal number of outcome observations per subject.
    pub fn n_y(&self) -> usize {
        (self.t_end / self.plan.outcome_interval).round() as usize
    }
}

/// Simulates one cohort: `subjects` independent paths under the study's
/// scenario and schedule, thinned to multi-resolution observations.
pub fn simulate_dataset(config: &StudyConfig, seed: u64) -> Result<Dataset, ctate_core::Error> {
    let scenario = config.scenario.build(config.delta, config.eps);
    let mut trajectories = Vec::with_capacity(config.subjects);
    for i in 0..config.subjects {
        let subject_seed = child_seed(seed, i as u64);
        let mut init_rng = ChaCha12Rng::seed_from_u64(child_seed(subject_seed, 2));
        let s0 = (scenario.init)(&mut init_rng);
        let path = euler_maruyama(
            &scenario,
            &s0,
            &config.schedule,
            config.t_end,
            config.dt,
            child_seed(subject_seed, 0),
        );
        trajectories.push(sample_multiresolution(
            &path,
            &config.plan,
            &*scenario.outcome,
            &config.schedule,
            &format!("subj{i:03}"),
            child_seed(subject_seed, 1),
        )?);
    }
    Ok(Dataset::new(trajectories))
}

/// One method's outcome on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub study: String,
    pub rep: usize,
    pub seed: u64,
    pub method: String,
    pub estimate: Option<f64>,
    pub statistic: Option<f64>,
    pub p: Option<f64>,
    pub reject: bool,
    pub failure: Option<String>,
}

/// Aggregated rejection rate for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Fraction of replications with p below alpha.
    pub p_hat: f64,
    /// Binomial standard error sqrt(p_hat (1 - p_hat) / R).
    pub se: f64,
    /// Replications where the method returned an error; counted as
    /// non-rejections.
    pub failures: usize,
}

/// Result of one power study: per-method summaries plus the full
/// per-replication log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub config: StudyConfig,
    pub n_s: usize,
    pub n_y: usize,
    pub methods: Vec<MethodSummary>,
    pub log: Vec<RepRecord>,
}

/// One row of the emitted results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub study: String,
    pub delta: f64,
    pub n_s: usize,
    pub n_y: usize,
    pub method: String,
    pub p_hat: f64,
    pub se: f64,
    pub failures: usize,
}

impl PowerTable {
    /// Flattens the summaries into table rows.
    pub fn rows(&self) -> Vec<PowerRow> {
        self.methods
            .iter()
            .map(|m| PowerRow {
                study: self.config.study.clone(),
                delta: self.config.delta,
                n_s: self.n_s,
                n_y: self.n_y,
                method: m.method.clone(),
                p_hat: m.p_hat,
                se: m.se,
                failures: m.failures,
            })
            .collect()
    }

    /// The summary for one method, if it was part of the study.
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method.label())
    }
}

fn run_replication(config: &StudyConfig, rep: usize, seed: u64) -> Vec<RepRecord> {
    let dataset = simulate_dataset(config, seed);
    config
        .methods
        .iter()
        .map(|&method| {
            let record = |outcome: Result<(f64, f64, f64), ctate_core::Error>| match outcome {
                Ok((estimate, statistic, p)) => RepRecord {
                    study: config.study.clone(),
                    rep,
                    seed,
                    method: method.label().to_owned(),
                    estimate: Some(estimate),
                    statistic: Some(statistic),
                    p: Some(p),
                    reject: p < config.alpha,
                    failure: None,
                },
                Err(e) => RepRecord {
                    study: config.study.clone(),
                    rep,
                    seed,
                    method: method.label().to_owned(),
                    estimate: None,
                    statistic: None,
                    p: None,
                    reject: false,
                    failure: Some(e.to_string()),
                },
            };
            match &dataset {
                Ok(ds) => record(method.run(ds, config)),
                Err(e) => record(Err(e.clone())),
            }
        })
        .collect()
}

/// Runs the full study. Replications execute in parallel; method failures
/// are logged and counted as non-rejections, never dropped.
pub fn run_power_study(config: &StudyConfig) -> Result<PowerTable, InvalidConfig> {
    config.validate()?;
    let per_rep: Vec<Vec<RepRecord>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, rep, child_seed(config.master_seed, rep as u64)))
        .collect();
    let log: Vec<RepRecord> = per_rep.into_iter().flatten().collect();

    let reps = config.replications as f64;
    let methods = config
        .methods
        .iter()
        .map(|&method| {
            let label = method.label();
            let mut rejections = 0usize;
            let mut failures = 0usize;
            for record in log.iter().filter(|r| r.method == label) {
                rejections += usize::from(record.reject);
                failures += usize::from(record.failure.is_some());
            }
            let p_hat = rejections as f64 / reps;
            MethodSummary {
                method: label.to_owned(),
                p_hat,
                se: (p_hat * (1.0 - p_hat) / reps).sqrt(),
                failures,
            }
        })
        .collect();

    Ok(PowerTable {
        config: config.clone(),
        n_s: config.n_s(),
        n_y: config.n_y(),
        methods,
        log,
    })
}

/// A one-dimensional grid to sweep a study over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepGrid {
    /// Treatment effect sizes.
    Delta(Vec<f64>),
    /// Per-subject observation counts as (states, outcomes) pairs.
    SampleSizes(Vec<(usize, usize)>),
}

/// The sampling interval that yields `n` observations over the horizon,
/// snapped onto the integration grid.
pub fn interval_for(n: usize, t_end: f64, dt: f64) -> f64 {
    (t_end / n as f64 / dt).round() * dt
}

/// Materializes one study per grid point. Every point keeps the base
/// master seed, so all points see the same simulated noise (common random
/// numbers) and their power estimates differ only through the swept
/// parameter.
pub fn grid_configs(base: &StudyConfig, grid: &SweepGrid) -> Vec<StudyConfig> {
    match grid {
        SweepGrid::Delta(deltas) => deltas
            .iter()
            .map(|&delta| {
                let mut cfg = base.clone();
                cfg.delta = delta;
                cfg
            })
            .collect(),
        SweepGrid::SampleSizes(sizes) => sizes
            .iter()
            .map(|&(n_s, n_y)| {
                let mut cfg = base.clone();
                cfg.plan.state_interval = interval_for(n_s, base.t_end, base.dt);
                cfg.plan.outcome_interval = interval_for(n_y, base.t_end, base.dt);
                cfg
            })
            .collect(),
    }
}

/// Runs one study per grid point. An empty grid yields an empty list.
pub fn sweep(base: &StudyConfig, grid: &SweepGrid) -> Result<Vec<PowerTable>, InvalidConfig> {
    grid_configs(base, grid).iter().map(run_power_study).collect()
}

/// The bundled study grids behind the `--paper-table` flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TablePreset {
    /// Univariate scenario across both reference schedules and noise levels,
    /// with and without an effect.
    #[value(name = "1")]
    Schedules,
    /// The three multivariate scenarios at delta 0.3.
    #[value(name = "2")]
    Multivariate,
    /// Sample-size sweep on sim1.
    #[value(name = "sim2")]
    SampleSizes,
    /// Effect-size sweep on sim1.
    #[value(name = "sim3")]
    Deltas,
}

fn all_methods() -> Vec<Method> {
    vec![Method::T, Method::Dml, Method::Dtvalue, Method::Proposed]
}

/// Trajectory smoothing whose resolution follows the sampling rate: a
/// piecewise-linear fit with knot spacing twice the state-observation
/// interval (`n_s/2 + 1` basis functions over the horizon).
///
/// Local linear pieces keep the drift estimate a short forward difference,
/// which tracks square-wave treatment switches far better than a smooth
/// high-order fit, and tying the knot count to `n_s` keeps the fit solvable
/// and comparably tuned across sample-size grids.
pub fn resolution_matched_smoothing(n_s: usize) -> SmoothingSpec {
    SmoothingSpec {
        degree: 1,
        n_basis: Some(n_s / 2 + 1),
        ridge: 1e-8,
        knot_placement: KnotPlacement::TimeQuantiles,
    }
}

/// The estimator configuration behind the bundled study presets: affine
/// polynomial value features with resolution-matched linear smoothing.
///
/// Affine features span the value functions of mean-reverting dynamics
/// exactly and keep the estimating-equation system well conditioned at
/// cohort sizes of a few dozen subjects, where richer local bases go
/// quasi-singular.
pub fn preset_estimator(n_s: usize) -> EstimatorConfig {
    EstimatorConfig {
        basis_spec: FeatureSpec {
            kind: FeatureKind::PolynomialTensor,
            max_degree: 1,
            ..FeatureSpec::default()
        },
        smoothing_spec: resolution_matched_smoothing(n_s),
        ..EstimatorConfig::default()
    }
}

/// Materializes the studies (and optional sweep grid) for a preset.
///
/// All presets share one estimator family (see [`preset_estimator`]); the
/// multivariate preset alone doubles the smoothing knot spacing, trading
/// drift resolution for variance, which the nonlinear scenario needs to
/// stay ahead of the discrete-time baseline at this scale.
pub fn preset_studies(
    preset: TablePreset,
    seed: u64,
    replications: usize,
    subjects: usize,
) -> Vec<(StudyConfig, Option<SweepGrid>)> {
    let base = StudyConfig {
        replications,
        subjects,
        master_seed: seed,
        methods: all_methods(),
        ..StudyConfig::default()
    };
    let base = StudyConfig {
        estimator: preset_estimator(base.n_s()),
        ..base
    };
    match preset {
        TablePreset::Schedules => {
            let mut studies = Vec::new();
            for (name, schedule) in [("t1", treatment_1()), ("t2", treatment_2())] {
                for eps in [0.1, 0.3] {
                    for delta in [0.3, 0.0] {
                        studies.push((
                            StudyConfig {
                                study: format!("sim0-{name}-eps{eps}"),
                                scenario: ScenarioKind::Sim0,
                                delta,
                                eps,
                                schedule: schedule.clone(),
                                ..base.clone()
                            },
                            None,
                        ));
                    }
                }
            }
            studies
        }
        TablePreset::Multivariate => {
            let mut estimator = base.estimator.clone();
            estimator.smoothing_spec = resolution_matched_smoothing(base.n_s() / 2);
            [
                ("sim1", ScenarioKind::Sim1),
                ("sim2", ScenarioKind::Sim2),
                ("sim3", ScenarioKind::Sim3),
            ]
            .into_iter()
            .map(|(name, scenario)| {
                (
                    StudyConfig {
                        study: name.to_owned(),
                        scenario,
                        delta: 0.3,
                        estimator: estimator.clone(),
                        ..base.clone()
                    },
                    None,
                )
            })
            .collect()
        }
        TablePreset::SampleSizes => [(25, 12), (50, 25), (100, 50)]
            .into_iter()
            .map(|(n_s, n_y)| {
                let mut cfg = StudyConfig {
                    study: "sim1".to_owned(),
                    scenario: ScenarioKind::Sim1,
                    delta: 0.3,
                    estimator: preset_estimator(n_s),
                    ..base.clone()
                };
                cfg.plan.state_interval = interval_for(n_s, cfg.t_end, cfg.dt);
                cfg.plan.outcome_interval = interval_for(n_y, cfg.t_end, cfg.dt);
                (cfg, None)
            })
            .collect(),
        TablePreset::Deltas => vec![(
            StudyConfig {
                study: "sim1".to_owned(),
                scenario: ScenarioKind::Sim1,
                delta: 0.3,
                ..base
            },
            Some(SweepGrid::Delta(vec![0.0, 0.1, 0.2, 0.3])),
        )],
    }
}
