//! Command-line front end: simulate datasets, run tests, and drive power
//! studies and sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ctate::harness::{
    self, treatment_1, treatment_2, Method, PowerRow, PowerTable, ScenarioKind, StudyConfig,
    SweepGrid, TablePreset,
};
use ctate::io;
use ctate_core::{
    Alternative, EstimatorConfig, FeatureKind, ReferenceMeasure, Schedule,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "ctate",
    version,
    about = "Cumulative treatment-effect tests for multi-resolution longitudinal data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario into a long-format dataset CSV
    Simulate(SimulateArgs),
    /// Test a dataset CSV for a cumulative treatment effect
    Test(TestArgs),
    /// Estimate rejection rates over simulated replications
    Power(PowerArgs),
    /// Run power studies across a parameter grid
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    /// Short-period square wave: on 20% of every unit cycle
    T1,
    /// Long-period square wave: on half of every five-unit cycle
    T2,
    /// Always treated
    On,
    /// Never treated
    Off,
}

impl ScheduleArg {
    fn build(self) -> Schedule {
        match self {
            Self::T1 => treatment_1(),
            Self::T2 => treatment_2(),
            Self::On => Schedule::AlwaysOn,
            Self::Off => Schedule::AlwaysOff,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    /// Additive cubic B-splines per state dimension
    Bspline,
    /// Polynomial tensor basis
    Poly,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlternativeArg {
    /// Treated-minus-control effect is positive
    Greater,
    /// Effect is nonzero
    TwoSided,
}

impl From<AlternativeArg> for Alternative {
    fn from(a: AlternativeArg) -> Self {
        match a {
            AlternativeArg::Greater => Alternative::OneSidedGreater,
            AlternativeArg::TwoSided => Alternative::TwoSided,
        }
    }
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Simulation scenario
    #[arg(long, value_enum, default_value = "sim0")]
    scenario: ScenarioKind,
    /// Treatment effect size
    #[arg(long, default_value_t = 0.3)]
    delta: f64,
    /// Diffusion scale for sim0
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Treatment schedule
    #[arg(long, value_enum, default_value = "t2")]
    schedule: ScheduleArg,
    /// Subjects per simulated dataset
    #[arg(long, default_value_t = 20)]
    subjects: usize,
    /// Path horizon
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    /// Integration step
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Spacing of state observations
    #[arg(long, default_value_t = 0.1)]
    state_interval: f64,
    /// Spacing of outcome observations
    #[arg(long, default_value_t = 0.2)]
    outcome_interval: f64,
}

#[derive(Args, Clone)]
struct EstimatorArgs {
    /// Discount rate in (0, 1)
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Value-function basis family
    #[arg(long, value_enum, default_value = "bspline")]
    basis: BasisArg,
    /// B-spline basis functions per dimension
    #[arg(long, default_value_t = 6)]
    n_basis: usize,
    /// B-spline degree
    #[arg(long, default_value_t = 3)]
    degree: usize,
    /// Maximum total degree of the polynomial basis
    #[arg(long, default_value_t = 2)]
    max_degree: usize,
    /// Initial-state measure: "empirical", "point:<coords>", or
    /// "grid:<lo>:<hi>:<n>" with comma-separated coordinates
    #[arg(long, default_value = "empirical")]
    measure: String,
    /// Alternative hypothesis
    #[arg(long, value_enum, default_value = "greater")]
    alternative: AlternativeArg,
}

impl EstimatorArgs {
    fn build(&self) -> anyhow::Result<EstimatorConfig> {
        ensure!(
            self.gamma > 0.0 && self.gamma < 1.0,
            "--gamma must lie strictly inside (0, 1)"
        );
        let mut config = EstimatorConfig::default();
        config.gamma = self.gamma;
        config.basis_spec.kind = match self.basis {
            BasisArg::Bspline => FeatureKind::AdditiveBSpline,
            BasisArg::Poly => FeatureKind::PolynomialTensor,
        };
        config.basis_spec.n_basis = self.n_basis;
        config.basis_spec.degree = self.degree;
        config.basis_spec.max_degree = self.max_degree;
        config.reference_measure = parse_measure(&self.measure)?;
        config.alternative = self.alternative.into();
        Ok(config)
    }
}

fn parse_coords(raw: &str) -> anyhow::Result<Vec<f64>> {
    let coords = raw
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("cannot parse coordinates from {raw:?}"))?;
    ensure!(!coords.is_empty(), "coordinate list must not be empty");
    Ok(coords)
}

fn parse_measure(spec: &str) -> anyhow::Result<ReferenceMeasure> {
    if spec == "empirical" {
        return Ok(ReferenceMeasure::EmpiricalInitialStates);
    }
    if let Some(rest) = spec.strip_prefix("point:") {
        return Ok(ReferenceMeasure::PointMass {
            point: parse_coords(rest)?,
        });
    }
    if let Some(rest) = spec.strip_prefix("grid:") {
        let parts: Vec<&str> = rest.split(':').collect();
        ensure!(
            parts.len() == 3,
            "grid measure needs the form grid:<lo>:<hi>:<n>"
        );
        let lo = parse_coords(parts[0])?;
        let hi = parse_coords(parts[1])?;
        ensure!(lo.len() == hi.len(), "grid bounds must share a dimension");
        let n_grid: usize = parts[2].parse().context("bad grid point count")?;
        return Ok(ReferenceMeasure::UniformGrid { lo, hi, n_grid });
    }
    bail!("measure must be \"empirical\", \"point:<coords>\", or \"grid:<lo>:<hi>:<n>\"")
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Cohort seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Half-width of uniform jitter on observation times
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Additive noise on recorded states
    #[arg(long, default_value_t = 0.0)]
    obs_noise: f64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TestArgs {
    /// Dataset CSV to test
    #[arg(long)]
    data: PathBuf,
    /// Test procedure
    #[arg(long, value_enum, default_value = "proposed")]
    method: Method,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Cross-fitting folds for the dml baseline
    #[arg(long, default_value_t = 2)]
    folds: usize,
    /// Output JSON path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    /// Full study config as JSON; overrides the scenario and estimator flags
    #[arg(long, conflicts_with = "paper_table")]
    config: Option<PathBuf>,
    /// Bundled reproduction study grids
    #[arg(long, value_enum)]
    paper_table: Option<TablePreset>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Replications per study
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Rejection threshold on the p-value
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Method to run; repeat for several (default: proposed)
    #[arg(long = "method", value_enum)]
    methods: Vec<Method>,
    /// Cross-fitting folds for the dml baseline
    #[arg(long, default_value_t = 2)]
    folds: usize,
    /// Output stem; writes <stem>.csv, <stem>.replications.csv, and
    /// <stem>.manifest.json. Stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    power: PowerArgs,
    /// Grid to sweep: "delta=0,0.1,0.2" or "samples=25:12,50:25,100:50"
    #[arg(long)]
    over: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => run_simulate(&args),
        Command::Test(args) => run_test_command(&args),
        Command::Power(args) => run_power(&args, None),
        Command::Sweep(args) => {
            parse_grid(&args.over).and_then(|grid| run_power(&args.power, Some(grid)))
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn study_from_flags(args: &PowerArgs) -> anyhow::Result<StudyConfig> {
    let mut config = study_base(&args.scenario, &args.estimator)?;
    config.replications = args.reps;
    config.alpha = args.alpha;
    config.master_seed = args.seed;
    config.dml_folds = args.folds;
    config.methods = if args.methods.is_empty() {
        vec![Method::Proposed]
    } else {
        args.methods.clone()
    };
    Ok(config)
}

fn study_base(scenario: &ScenarioArgs, estimator: &EstimatorArgs) -> anyhow::Result<StudyConfig> {
    let mut config = StudyConfig {
        study: format!("{:?}", scenario.scenario).to_lowercase(),
        scenario: scenario.scenario,
        delta: scenario.delta,
        eps: scenario.eps,
        schedule: scenario.schedule.build(),
        t_end: scenario.t_end,
        dt: scenario.dt,
        subjects: scenario.subjects,
        estimator: estimator.build()?,
        ..StudyConfig::default()
    };
    config.plan.state_interval = scenario.state_interval;
    config.plan.outcome_interval = scenario.outcome_interval;
    Ok(config)
}

fn run_simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let mut config = study_base(&args.scenario, &EstimatorArgs::default_for_sim())?;
    config.plan.jitter = args.jitter;
    config.plan.obs_noise_sd = args.obs_noise;
    config
        .validate()
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let dataset = harness::simulate_dataset(&config, args.seed)?;
    io::write_dataset_csv(&args.out, &dataset)?;
    Ok(())
}

impl EstimatorArgs {
    /// Placeholder estimator flags for commands that never run a test.
    fn default_for_sim() -> Self {
        Self {
            gamma: 0.9,
            basis: BasisArg::Bspline,
            n_basis: 6,
            degree: 3,
            max_degree: 2,
            measure: "empirical".to_owned(),
            alternative: AlternativeArg::Greater,
        }
    }
}

fn run_test_command(args: &TestArgs) -> anyhow::Result<()> {
    let dataset = io::parse_dataset_csv(&args.data)?;
    let config = args.estimator.build()?;
    let report: serde_json::Value = match args.method {
        Method::Proposed => {
            let result = ctate_core::run_test(&dataset, &config)?;
            serde_json::to_value(io::TestReport {
                version: VERSION.to_owned(),
                method: args.method.label().to_owned(),
                config,
                result,
            })?
        }
        baseline => {
            let result = match baseline {
                Method::Dtvalue => ctate_core::discrete_time_value_test(&dataset, &config)?,
                Method::Dml => ctate_core::dml_test(&dataset, &config, args.folds)?,
                Method::T => ctate_core::welch_t_test(&dataset, config.alternative)?,
                Method::Proposed => unreachable!("handled above"),
            };
            serde_json::to_value(io::BaselineReport {
                version: VERSION.to_owned(),
                method: result.method.to_owned(),
                config,
                estimate: result.estimate,
                statistic: result.statistic,
                p: result.p,
                diagnostics: result.diagnostics,
            })?
        }
    };
    match &args.out {
        Some(path) => io::write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn run_power(args: &PowerArgs, grid: Option<SweepGrid>) -> anyhow::Result<()> {
    let studies: Vec<(StudyConfig, Option<SweepGrid>)> = if let Some(preset) = args.paper_table {
        ensure!(
            grid.is_none(),
            "--paper-table already fixes the grid; drop --over"
        );
        harness::preset_studies(preset, args.seed, args.reps, args.scenario.subjects)
    } else if let Some(path) = &args.config {
        let config: StudyConfig = io::read_json(path)?;
        vec![(config, grid)]
    } else {
        vec![(study_from_flags(args)?, grid)]
    };

    let master_seed = studies.first().map_or(args.seed, |(c, _)| c.master_seed);
    let mut tables: Vec<PowerTable> = Vec::new();
    for (config, grid) in &studies {
        match grid {
            None => tables.push(harness::run_power_study(config)?),
            Some(grid) => tables.extend(harness::sweep(config, grid)?),
        }
    }
    let rows: Vec<PowerRow> = tables.iter().flat_map(PowerTable::rows).collect();

    match &args.out {
        None => {
            let mut writer = csv::Writer::from_writer(std::io::stdout());
            for row in &rows {
                writer.serialize(row)?;
            }
            writer.flush()?;
        }
        Some(stem) => {
            let (table_csv, replication_log, manifest_json) = artifact_paths(stem);
            io::write_power_csv(&table_csv, &rows)?;
            let log: Vec<_> = tables.iter().flat_map(|t| t.log.clone()).collect();
            io::write_replication_csv(&replication_log, &log)?;
            io::write_json(
                &manifest_json,
                &io::RunManifest {
                    version: VERSION.to_owned(),
                    master_seed,
                    table_csv: table_csv.display().to_string(),
                    replication_log: replication_log.display().to_string(),
                    studies: tables.into_iter().map(|t| t.config).collect(),
                },
            )?;
        }
    }
    Ok(())
}

fn artifact_paths(stem: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let stem = if stem.extension().is_some_and(|e| e == "csv") {
        stem.with_extension("")
    } else {
        stem.to_path_buf()
    };
    let with_suffix = |suffix: &str| PathBuf::from(format!("{}{suffix}", stem.display()));
    (
        with_suffix(".csv"),
        with_suffix(".replications.csv"),
        with_suffix(".manifest.json"),
    )
}

fn parse_grid(spec: &str) -> anyhow::Result<SweepGrid> {
    if let Some(rest) = spec.strip_prefix("delta=") {
        return Ok(SweepGrid::Delta(parse_coords(rest)?));
    }
    if let Some(rest) = spec.strip_prefix("samples=") {
        let sizes = rest
            .split(',')
            .map(|pair| -> anyhow::Result<(usize, usize)> {
                let (n_s, n_y) = pair
                    .split_once(':')
                    .with_context(|| format!("bad sample-size pair {pair:?}"))?;
                Ok((n_s.trim().parse()?, n_y.trim().parse()?))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        ensure!(!sizes.is_empty(), "sample-size grid must not be empty");
        return Ok(SweepGrid::SampleSizes(sizes));
    }
    bail!("--over must look like \"delta=0,0.1,0.2\" or \"samples=25:12,50:25\"")
}
