//! File formats: the long-format dataset CSV, JSON test reports, and the
//! power-study artifacts (results table, replication log, run manifest).
//!
//! Datasets travel as a single CSV with header `subject,time,channel,value`,
//! one row per observation. Channels are `s1..sd` for state coordinates
//! (`d` is inferred as the largest index seen), `y` for outcomes, and `a`
//! for binary actions; action rows are compressed to change points on load.
//! Rows may arrive in any order. Times and values are serialized with 12
//! significant digits, which preserves the estimator's 1e-9 time-matching
//! tolerance through a round trip.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ctate_core::{AteTestResult, Dataset, Diagnostic, EstimatorConfig, MultiResTrajectory};

use crate::harness::{PowerRow, RepRecord, StudyConfig};

/// Problems reading or writing an artifact file.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("subject {subject}: state observation at t={time} does not cover s1..s{dim}")]
    MixedDimensions {
        subject: String,
        time: f64,
        dim: usize,
    },
    #[error("line {line}: action value {value:?} is neither 0 nor 1")]
    NonBinaryAction { line: usize, value: String },
    #[error("subject {subject}: duplicate {channel} observation at t={time}")]
    DuplicateTimestamp {
        subject: String,
        channel: String,
        time: f64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

const DATASET_HEADER: [&str; 4] = ["subject", "time", "channel", "value"];

#[derive(Default)]
struct RawSubject {
    /// (time, coordinate index starting at 1, value)
    states: Vec<(f64, usize, f64)>,
    outcomes: Vec<(f64, f64)>,
    actions: Vec<(f64, u8)>,
}

fn parse_field<T: core::str::FromStr>(
    raw: &str,
    line: usize,
    what: &str,
) -> Result<T, IoError> {
    raw.parse().map_err(|_| IoError::Parse {
        line,
        reason: format!("cannot parse {what} from {raw:?}"),
    })
}

/// Reads a long-format dataset CSV.
///
/// The result preserves subject order of first appearance and sorts each
/// channel by time. Structural problems beyond the file format itself
/// (missing initial actions, single-action data) are left to
/// [`ctate_core::validate_dataset`].
pub fn parse_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let header: Vec<&str> = reader.headers()?.iter().collect();
    if header != DATASET_HEADER {
        return Err(IoError::Parse {
            line: 1,
            reason: format!("header must be {:?}, got {header:?}", DATASET_HEADER.join(",")),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut subjects: std::collections::HashMap<String, RawSubject> =
        std::collections::HashMap::new();
    let mut dim = 0usize;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 4 {
            return Err(IoError::Parse {
                line,
                reason: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let subject = &record[0];
        let time: f64 = parse_field(&record[1], line, "time")?;
        if !time.is_finite() {
            return Err(IoError::Parse {
                line,
                reason: format!("time {time} is not finite"),
            });
        }
        if !subjects.contains_key(subject) {
            order.push(subject.to_owned());
            subjects.insert(subject.to_owned(), RawSubject::default());
        }
        let raw = subjects.get_mut(subject).expect("inserted above");
        let channel = &record[2];
        match channel {
            "y" => {
                let value: f64 = parse_field(&record[3], line, "value")?;
                raw.outcomes.push((time, value));
            }
            "a" => {
                let action = match &record[3] {
                    "0" | "0.0" => 0,
                    "1" | "1.0" => 1,
                    other => {
                        return Err(IoError::NonBinaryAction {
                            line,
                            value: other.to_owned(),
                        })
                    }
                };
                raw.actions.push((time, action));
            }
            _ => {
                let index = channel
                    .strip_prefix('s')
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| IoError::Parse {
                        line,
                        reason: format!("unknown channel {channel:?}"),
                    })?;
                let value: f64 = parse_field(&record[3], line, "value")?;
                dim = dim.max(index);
                raw.states.push((time, index, value));
            }
        }
    }

    let mut trajectories = Vec::with_capacity(order.len());
    for subject_id in order {
        let raw = subjects.remove(&subject_id).expect("collected above");
        trajectories.push(assemble_subject(subject_id, raw, dim)?);
    }
    Ok(Dataset::new(trajectories))
}

fn assemble_subject(
    subject_id: String,
    mut raw: RawSubject,
    dim: usize,
) -> Result<MultiResTrajectory, IoError> {
    let dup = |channel: &str, time: f64| IoError::DuplicateTimestamp {
        subject: subject_id.clone(),
        channel: channel.to_owned(),
        time,
    };

    raw.outcomes.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in raw.outcomes.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(dup("y", w[0].0));
        }
    }
    raw.actions.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in raw.actions.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(dup("a", w[0].0));
        }
    }
    // Compress the action channel to its change points.
    let mut action_obs: Vec<(f64, u8)> = Vec::new();
    for (t, a) in raw.actions {
        if action_obs.last().map(|&(_, last)| last) != Some(a) {
            action_obs.push((t, a));
        }
    }

    raw.states
        .sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut state_obs: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut rows = raw.states.iter().peekable();
    while let Some(&&(time, _, _)) = rows.peek() {
        let mut coords = Vec::with_capacity(dim);
        while let Some(&&(t, index, value)) = rows.peek() {
            if t != time {
                break;
            }
            if index == coords.len() {
                return Err(dup(&format!("s{index}"), time));
            }
            if index != coords.len() + 1 {
                return Err(IoError::MixedDimensions {
                    subject: subject_id.clone(),
                    time,
                    dim,
                });
            }
            coords.push(value);
            rows.next();
        }
        if coords.len() != dim {
            return Err(IoError::MixedDimensions {
                subject: subject_id.clone(),
                time,
                dim,
            });
        }
        state_obs.push((time, coords));
    }

    Ok(MultiResTrajectory {
        subject_id,
        state_obs,
        outcome_obs: raw.outcomes,
        action_obs,
    })
}

/// 12 significant digits: enough to keep grid times aligned far below the
/// estimator's time tolerance.
fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Writes a dataset in the long format read back by [`parse_dataset_csv`].
pub fn write_dataset_csv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(DATASET_HEADER)?;
    for traj in &dataset.trajectories {
        for (t, state) in &traj.state_obs {
            for (j, v) in state.iter().enumerate() {
                writer.write_record([
                    traj.subject_id.as_str(),
                    &sig12(*t),
                    &format!("s{}", j + 1),
                    &sig12(*v),
                ])?;
            }
        }
        for (t, y) in &traj.outcome_obs {
            writer.write_record([traj.subject_id.as_str(), &sig12(*t), "y", &sig12(*y)])?;
        }
        for (t, a) in &traj.action_obs {
            writer.write_record([traj.subject_id.as_str(), &sig12(*t), "a", &a.to_string()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// JSON report for the main test: the full result plus the configuration it
/// ran under and the library version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub version: String,
    pub method: String,
    pub config: EstimatorConfig,
    pub result: AteTestResult,
}

/// JSON report for a baseline method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub version: String,
    pub method: String,
    pub config: EstimatorConfig,
    pub estimate: f64,
    pub statistic: f64,
    pub p: f64,
    pub diagnostics: Vec<Diagnostic>,
}

/// Top-level description of a power run: configuration, seed, and where the
/// companion artifacts were written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub master_seed: u64,
    pub table_csv: String,
    pub replication_log: String,
    pub studies: Vec<StudyConfig>,
}

/// Serializes any report as pretty JSON with stable field order.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Reads back a JSON artifact written by [`write_json`].
pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the aggregated power table, one row per method and grid point.
pub fn write_power_csv(path: impl AsRef<Path>, rows: &[PowerRow]) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a power table back into rows.
pub fn read_power_csv(path: impl AsRef<Path>) -> Result<Vec<PowerRow>, IoError> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    reader
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(Into::into)
}

/// Writes the per-replication log, one row per replication and method.
pub fn write_replication_csv(
    path: impl AsRef<Path>,
    rows: &[RepRecord],
) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
