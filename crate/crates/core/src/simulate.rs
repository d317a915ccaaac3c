//! Synthetic data generation: controlled diffusions on a fine time grid,
//! deterministic treatment schedules, and multi-resolution sampling of the
//! resulting paths.
//!
//! Everything here is deterministic given its seed. Seeds are derived with
//! [`child_seed`] so that independent streams (path noise, sampling noise,
//! replications) never share state.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, RngCore, SeedableRng};
// Provides f64 math in no_std builds; whenever std is linked (tests, the
// CLI) the inherent methods shadow it and the import looks unused.
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{MultiResTrajectory, TIME_TOL};
use crate::error::Error;

/// SplitMix64 finalizer: a cheap, well-mixed u64 -> u64 hash.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the `i`-th child seed of `master`. Children of distinct masters
/// or distinct indices are effectively independent.
pub fn child_seed(master: u64, i: u64) -> u64 {
    splitmix64(master ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i.wrapping_add(1)))
}

/// A deterministic binary treatment schedule in continuous time. The action
/// is right-continuous: at a switch time the new value already applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Schedule {
    AlwaysOff,
    AlwaysOn,
    /// On during the first `duty` fraction of each period.
    SquareWave { period: f64, duty: f64, phase: f64 },
    /// On during `[t, t + width)` for each listed start time.
    Pulses { times: Vec<f64>, width: f64 },
}

impl Schedule {
    /// Action applied at time `t`, snapping times within [`TIME_TOL`] of a
    /// switch onto the switch itself.
    pub fn action_at(&self, t: f64) -> u8 {
        match self {
            Self::AlwaysOff => 0,
            Self::AlwaysOn => 1,
            Self::SquareWave {
                period,
                duty,
                phase,
            } => {
                let shifted = t + phase;
                let mut local = shifted - period * (shifted / period).floor();
                if local >= period - TIME_TOL {
                    local = 0.0;
                }
                u8::from(local < duty * period - TIME_TOL)
            }
            Self::Pulses { times, width } => u8::from(
                times
                    .iter()
                    .any(|&t0| t >= t0 - TIME_TOL && t < t0 + width - TIME_TOL),
            ),
        }
    }

    /// The action as a change list over `[0, t_end]`: the value at 0 followed
    /// by every switch, suitable for a trajectory's action channel. Built by
    /// evaluating [`Schedule::action_at`] at each candidate switch, so the
    /// two views agree by construction.
    pub fn change_points(&self, t_end: f64) -> Vec<(f64, u8)> {
        let mut candidates: Vec<f64> = Vec::new();
        match self {
            Self::AlwaysOff | Self::AlwaysOn => {}
            Self::SquareWave {
                period,
                duty,
                phase,
            } => {
                let k_lo = (phase / period).floor() as i64 - 1;
                let k_hi = ((t_end + phase) / period).ceil() as i64 + 1;
                for k in k_lo..=k_hi {
                    let rise = k as f64 * period - phase;
                    candidates.push(rise);
                    candidates.push(rise + duty * period);
                }
            }
            Self::Pulses { times, width } => {
                for &t0 in times {
                    candidates.push(t0);
                    candidates.push(t0 + width);
                }
            }
        }
        candidates.retain(|&c| c > TIME_TOL && c < t_end - TIME_TOL);
        candidates.sort_by(f64::total_cmp);
        candidates.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);
        let mut out = Vec::with_capacity(candidates.len() + 1);
        out.push((0.0, self.action_at(0.0)));
        for c in candidates {
            let a = self.action_at(c);
            if a != out.last().map_or(2, |&(_, last)| last) {
                out.push((c, a));
            }
        }
        out
    }
}

/// A controlled diffusion: per-coordinate drift and noise scale as functions
/// of state and action, an outcome read-out, and an initial-state sampler.
pub struct Scenario {
    pub name: &'static str,
    pub dim: usize,
    /// Drift vector μ(s, a).
    pub drift: Box<dyn Fn(&[f64], u8) -> Vec<f64> + Send + Sync>,
    /// Per-coordinate diffusion scale σ(s, a).
    pub diffusion: Box<dyn Fn(&[f64], u8) -> Vec<f64> + Send + Sync>,
    /// Outcome read-out y(s).
    pub outcome: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    /// Initial-state sampler.
    pub init: Box<dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync>,
}

/// Mean-reverting univariate model: dS = (−0.2·S + δ·A)dt + ε·dW, outcome S,
/// started at 0.
pub fn scenario_sim0(delta: f64, eps: f64) -> Scenario {
    Scenario {
        name: "sim0",
        dim: 1,
        drift: Box::new(move |s, a| alloc::vec![-0.2 * s[0] + delta * f64::from(a)]),
        diffusion: Box::new(move |_, _| alloc::vec![eps]),
        outcome: Box::new(|s| s[0]),
        init: Box::new(|_| alloc::vec![0.0]),
    }
}

/// Two independent mean-reverting coordinates with different treatment
/// loadings; outcome is the coordinate average.
pub fn scenario_sim1(delta: f64) -> Scenario {
    Scenario {
        name: "sim1",
        dim: 2,
        drift: Box::new(move |s, a| {
            let a = f64::from(a);
            alloc::vec![-0.1 * s[0] + delta * a, -0.3 * s[1] + 0.5 * delta * a]
        }),
        diffusion: Box::new(|_, _| alloc::vec![0.1, 0.2]),
        outcome: Box::new(|s| 0.5 * (s[0] + s[1])),
        init: Box::new(|_| alloc::vec![0.0, 0.0]),
    }
}

/// Like [`scenario_sim1`] but with positive cross-coupling between the
/// coordinates.
pub fn scenario_sim2(delta: f64) -> Scenario {
    Scenario {
        name: "sim2",
        dim: 2,
        drift: Box::new(move |s, a| {
            let a = f64::from(a);
            alloc::vec![
                -0.1 * s[0] + 0.2 * s[1] + delta * a,
                0.1 * s[0] - 0.3 * s[1] + 0.5 * delta * a,
            ]
        }),
        diffusion: Box::new(|_, _| alloc::vec![0.1, 0.2]),
        outcome: Box::new(|s| 0.5 * (s[0] + s[1])),
        init: Box::new(|_| alloc::vec![0.0, 0.0]),
    }
}

/// Like [`scenario_sim2`] but the treatment flips the sign of the state
/// feedback: under action 1 the dynamics match sim2, under action 0 the
/// natural trend is reversed.
pub fn scenario_sim3(delta: f64) -> Scenario {
    Scenario {
        name: "sim3",
        dim: 2,
        drift: Box::new(move |s, a| {
            let f = 2.0 * f64::from(a) - 1.0;
            alloc::vec![
                f * (-0.1 * s[0] + 0.2 * s[1]) + delta * f64::from(a),
                f * (0.1 * s[0] - 0.3 * s[1]) + 0.5 * delta * f64::from(a),
            ]
        }),
        diffusion: Box::new(|_, _| alloc::vec![0.1, 0.2]),
        outcome: Box::new(|s| 0.5 * (s[0] + s[1])),
        init: Box::new(|_| alloc::vec![0.0, 0.0]),
    }
}

/// A simulated path stored on the uniform integration grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl DensePath {
    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("path has at least one knot")
    }

    /// State at `t` by linear interpolation, clamped to the path's span.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let last = self.times.len() - 1;
        let t = t.clamp(self.times[0], self.times[last]);
        let k = ((t / self.dt).floor() as usize).min(last);
        if k == last {
            return self.states[last].clone();
        }
        let w = (t - self.times[k]) / self.dt;
        self.states[k]
            .iter()
            .zip(&self.states[k + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

/// Integrates the scenario's diffusion by the Euler scheme with step `dt`,
/// reading the action at the left endpoint of every step. One standard
/// normal per coordinate is drawn each step regardless of the noise scale,
/// so paths with different scales share the same underlying randomness.
pub fn euler_maruyama(
    scenario: &Scenario,
    s0: &[f64],
    schedule: &Schedule,
    t_end: f64,
    dt: f64,
    seed: u64,
) -> DensePath {
    assert_eq!(s0.len(), scenario.dim, "initial state has scenario dimension");
    assert!(dt > 0.0 && t_end > 0.0, "positive horizon and step");
    let n = (t_end / dt).round() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let sqrt_dt = dt.sqrt();
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut s = s0.to_vec();
    times.push(0.0);
    states.push(s.clone());
    for k in 0..n {
        let t = k as f64 * dt;
        let a = schedule.action_at(t);
        let drift = (scenario.drift)(&s, a);
        let scale = (scenario.diffusion)(&s, a);
        for j in 0..scenario.dim {
            let z: f64 = rng.sample(StandardNormal);
            s[j] += drift[j] * dt + scale[j] * sqrt_dt * z;
        }
        times.push((k + 1) as f64 * dt);
        states.push(s.clone());
    }
    DensePath { dt, times, states }
}

/// How a dense path is thinned into observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Spacing of state observations, starting at time 0.
    pub state_interval: f64,
    /// Spacing of outcome observations, starting at one spacing.
    pub outcome_interval: f64,
    /// Standard deviation of additive noise on recorded states.
    pub obs_noise_sd: f64,
    /// Half-width of the uniform jitter applied to observation times,
    /// capped at 49% of the corresponding spacing.
    pub jitter: f64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            state_interval: 0.1,
            outcome_interval: 0.2,
            obs_noise_sd: 0.0,
            jitter: 0.0,
        }
    }
}

fn grid_times(
    interval: f64,
    dt: f64,
    t_end: f64,
    from_zero: bool,
) -> Result<Vec<f64>, Error> {
    let ratio = interval / dt;
    if interval <= 0.0 || (ratio - ratio.round()).abs() > TIME_TOL || ratio.round() < 1.0 {
        return Err(Error::GridMismatch { interval, dt });
    }
    let n = ((t_end / interval) + TIME_TOL).floor() as usize;
    let start = usize::from(!from_zero);
    Ok((start..=n).map(|k| k as f64 * interval).collect())
}

fn jittered(times: &mut [f64], interval: f64, jitter: f64, t_end: f64, rng: &mut ChaCha12Rng) {
    let eff = jitter.min(0.49 * interval);
    if eff <= 0.0 {
        return;
    }
    for t in times.iter_mut() {
        let u: f64 = rng.gen::<f64>() * 2.0 - 1.0;
        *t = (*t + u * eff).clamp(0.0, t_end);
    }
}

/// Thins a dense path into a multi-resolution trajectory: states on one
/// grid (optionally noisy), outcomes on a coarser grid computed from the
/// noiseless path, and the schedule's change list as the action channel.
/// Both grids must be integer multiples of the path's integration step.
pub fn sample_multiresolution(
    path: &DensePath,
    plan: &SamplingPlan,
    outcome: impl Fn(&[f64]) -> f64,
    schedule: &Schedule,
    subject_id: &str,
    seed: u64,
) -> Result<MultiResTrajectory, Error> {
    let t_end = path.t_end();
    let mut state_times = grid_times(plan.state_interval, path.dt, t_end, true)?;
    let mut outcome_times = grid_times(plan.outcome_interval, path.dt, t_end, false)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    jittered(&mut state_times, plan.state_interval, plan.jitter, t_end, &mut rng);
    jittered(&mut outcome_times, plan.outcome_interval, plan.jitter, t_end, &mut rng);

    let state_obs = state_times
        .iter()
        .map(|&t| {
            let mut s = path.state_at(t);
            if plan.obs_noise_sd > 0.0 {
                for v in &mut s {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += plan.obs_noise_sd * z;
                }
            }
            (t, s)
        })
        .collect();
    let outcome_obs = outcome_times
        .iter()
        .map(|&t| (t, outcome(&path.state_at(t))))
        .collect();
    Ok(MultiResTrajectory {
        subject_id: String::from(subject_id),
        state_obs,
        outcome_obs,
        action_obs: schedule.change_points(t_end),
    })
}
