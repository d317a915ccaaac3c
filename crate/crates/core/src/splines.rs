//! B-spline basis machinery and the two-step trajectory smoother.
//!
//! Step one fits a penalized least-squares spline through each state
//! dimension of a subject's (noisy, irregular) observations; step two reads
//! the instantaneous drift off the fitted curve's analytic derivative. Both
//! the smoothed state path and the drift evaluate at arbitrary times, which
//! is what lets outcome observations live on a different grid than states.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
// Provides f64 math in no_std builds; whenever std is linked (tests, the
// CLI) the inherent methods shadow it and the import looks unused.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg;

/// Interior-knot placement strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotPlacement {
    /// Knots at empirical quantiles of the observation times. Robust to
    /// irregular sampling; the default.
    TimeQuantiles,
    /// Equally spaced knots.
    Uniform,
}

/// Settings for the per-subject trajectory smoother.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub degree: usize,
    /// Explicit basis size. `None` applies the rule `min(n_obs / 2, 15)`,
    /// floored at `degree + 1`.
    pub n_basis: Option<usize>,
    /// Tikhonov weight applied when the least-squares design is too
    /// ill-conditioned to solve plainly. Well-conditioned fits are exact, so
    /// functions inside the spline space are reproduced to float accuracy.
    pub ridge: f64,
    pub knot_placement: KnotPlacement,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        Self {
            degree: 3,
            n_basis: None,
            ridge: 1e-8,
            knot_placement: KnotPlacement::TimeQuantiles,
        }
    }
}

impl SmoothingSpec {
    /// Basis size used for a trajectory with `n_obs` observations.
    pub fn basis_size(&self, n_obs: usize) -> usize {
        self.n_basis
            .unwrap_or_else(|| (n_obs / 2).min(15))
            .max(self.degree + 1)
    }
}

/// A clamped knot vector: `degree + 1` copies of each endpoint with strictly
/// interior knots between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions the vector supports.
    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Closed interval on which the basis is defined.
    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.knots.len() - 1 - self.degree])
    }
}

/// Builds a clamped knot vector spanning the observed times.
///
/// `times` must be sorted. Quantile placement falls back to uniform spacing
/// when ties in the observation times would produce coincident or boundary
/// knots.
pub fn make_knot_vector(
    times: &[f64],
    n_basis: usize,
    degree: usize,
    placement: KnotPlacement,
) -> Result<KnotVector, Error> {
    assert!(degree >= 1, "spline degree must be at least 1");
    assert!(
        n_basis >= degree + 1,
        "need at least degree + 1 basis functions"
    );
    let lo = *times.first().expect("times must be nonempty");
    let hi = *times.last().expect("times must be nonempty");
    if !(hi - lo > 0.0) {
        return Err(Error::DegenerateDomain(degenerate_msg(lo, hi)));
    }

    let n_interior = n_basis - degree - 1;
    let uniform = |j: usize| lo + (hi - lo) * j as f64 / (n_interior + 1) as f64;
    let mut interior: Vec<f64> = match placement {
        KnotPlacement::Uniform => (1..=n_interior).map(uniform).collect(),
        KnotPlacement::TimeQuantiles => (1..=n_interior)
            .map(|j| quantile(times, j as f64 / (n_interior + 1) as f64))
            .collect(),
    };
    let strictly_inside = interior.windows(2).all(|w| w[0] < w[1])
        && interior.first().is_none_or(|&k| k > lo)
        && interior.last().is_none_or(|&k| k < hi);
    if !strictly_inside {
        interior = (1..=n_interior).map(uniform).collect();
    }

    let mut knots = Vec::with_capacity(n_basis + degree + 1);
    knots.extend(core::iter::repeat_n(lo, degree + 1));
    knots.extend(interior);
    knots.extend(core::iter::repeat_n(hi, degree + 1));
    Ok(KnotVector { degree, knots })
}

fn degenerate_msg(lo: f64, hi: f64) -> String {
    format!("observation times span [{lo}, {hi}]")
}

/// Linearly interpolated empirical quantile of a sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let idx = pos.floor() as usize;
    let frac = pos - idx as f64;
    if idx + 1 < sorted.len() {
        sorted[idx] * (1.0 - frac) + sorted[idx + 1] * frac
    } else {
        sorted[idx]
    }
}

/// Index of the nonempty knot span containing `t` (assumed inside the domain).
fn find_span(knots: &[f64], t: f64) -> usize {
    let count = knots.partition_point(|&k| k <= t);
    let mut span = count.saturating_sub(1).min(knots.len() - 2);
    while span > 0 && knots[span] >= knots[span + 1] {
        span -= 1;
    }
    span
}

/// Evaluates all basis functions (`derivative_order` 0) or their first
/// derivatives (`derivative_order` 1) at `t`, clamping `t` to the domain.
///
/// Uses the Cox-de Boor recurrence on the full triangular table; the
/// derivative comes from the exact degree-lowering identity, not finite
/// differences.
pub fn eval_basis(kv: &KnotVector, t: f64, derivative_order: usize) -> Vec<f64> {
    assert!(
        derivative_order <= 1,
        "only values and first derivatives are supported"
    );
    let p = kv.degree;
    let k = &kv.knots;
    let nk = k.len();
    let (lo, hi) = kv.domain();
    let t = t.clamp(lo, hi);

    // Degree-0 indicators, then raise the degree in place: at level q the
    // slot i only depends on slots i and i+1 of level q-1, so an ascending
    // sweep never reads an already-updated entry.
    let mut vals = vec![0.0; nk - 1];
    vals[find_span(k, t)] = 1.0;
    let top = if derivative_order == 1 { p - 1 } else { p };
    for q in 1..=top {
        for i in 0..(nk - 1 - q) {
            let mut v = 0.0;
            let den_l = k[i + q] - k[i];
            if den_l > 0.0 {
                v += (t - k[i]) / den_l * vals[i];
            }
            let den_r = k[i + q + 1] - k[i + 1];
            if den_r > 0.0 {
                v += (k[i + q + 1] - t) / den_r * vals[i + 1];
            }
            vals[i] = v;
        }
    }

    let n = kv.n_basis();
    let mut out = vec![0.0; n];
    if derivative_order == 0 {
        out.copy_from_slice(&vals[..n]);
    } else {
        for (i, slot) in out.iter_mut().enumerate() {
            let mut v = 0.0;
            let den_l = k[i + p] - k[i];
            if den_l > 0.0 {
                v += vals[i] / den_l;
            }
            let den_r = k[i + p + 1] - k[i + 1];
            if den_r > 0.0 {
                v -= vals[i + 1] / den_r;
            }
            *slot = p as f64 * v;
        }
    }
    out
}

/// Per-dimension spline fit of one subject's state path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineModel {
    kv: KnotVector,
    /// One coefficient vector per state dimension.
    coeffs: Vec<Vec<f64>>,
    /// Root-mean-square fit residual per dimension.
    residual_rms: Vec<f64>,
}

impl SplineModel {
    pub fn knot_vector(&self) -> &KnotVector {
        &self.kv
    }

    pub fn residual_rms(&self) -> &[f64] {
        &self.residual_rms
    }

    /// Smoothed state at `t` (clamped to the fitted domain).
    pub fn eval_state(&self, t: f64) -> Vec<f64> {
        let basis = eval_basis(&self.kv, t, 0);
        self.coeffs.iter().map(|w| dot(w, &basis)).collect()
    }

    /// Drift (time derivative of the smoothed state) at `t`.
    pub fn eval_drift(&self, t: f64) -> Vec<f64> {
        let dbasis = eval_basis(&self.kv, t, 1);
        self.coeffs.iter().map(|w| dot(w, &dbasis)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits one spline per state dimension by least squares, regularizing with
/// `spec.ridge` only when the design is too ill-conditioned to solve
/// directly.
///
/// Deterministic: identical inputs give bit-identical coefficients.
pub fn fit_trajectory(
    state_obs: &[(f64, Vec<f64>)],
    spec: &SmoothingSpec,
) -> Result<SplineModel, Error> {
    let n_obs = state_obs.len();
    let n_basis = spec.basis_size(n_obs);
    if n_obs < n_basis {
        return Err(Error::InsufficientObservations {
            needed: n_basis,
            got: n_obs,
        });
    }
    let times: Vec<f64> = state_obs.iter().map(|(t, _)| *t).collect();
    let kv = make_knot_vector(&times, n_basis, spec.degree, spec.knot_placement)?;

    let mut design = DMatrix::zeros(n_obs, n_basis);
    for (r, &t) in times.iter().enumerate() {
        let row = eval_basis(&kv, t, 0);
        for (c, &v) in row.iter().enumerate() {
            design[(r, c)] = v;
        }
    }
    let solver = linalg::LsSolver::new(&design);

    let d = state_obs[0].1.len();
    let mut coeffs = Vec::with_capacity(d);
    let mut residual_rms = Vec::with_capacity(d);
    for dim in 0..d {
        let rhs = DVector::from_iterator(n_obs, state_obs.iter().map(|(_, v)| v[dim]));
        let w = match solver.solve(&rhs) {
            Some(w) => w,
            None if spec.ridge > 0.0 => linalg::ridge_normal_solve(&design, &rhs, spec.ridge)
                .ok_or(Error::SingularDesign)?,
            None => return Err(Error::SingularDesign),
        };
        let resid = &design * &w - &rhs;
        residual_rms.push((resid.norm_squared() / n_obs as f64).sqrt());
        coeffs.push(w.iter().copied().collect());
    }
    Ok(SplineModel {
        kv,
        coeffs,
        residual_rms,
    })
}

/// A continuous model of one subject's state path: smoothed state, drift,
/// and the interval where both are trustworthy.
///
/// [`SplineModel`] is the production implementation; tests inject analytic
/// paths to exercise the estimator with exact derivatives.
pub trait PathModel {
    fn dim(&self) -> usize;
    fn state(&self, t: f64) -> Vec<f64>;
    fn drift(&self, t: f64) -> Vec<f64>;
    fn domain(&self) -> (f64, f64);
}

impl PathModel for SplineModel {
    fn dim(&self) -> usize {
        self.coeffs.len()
    }

    fn state(&self, t: f64) -> Vec<f64> {
        self.eval_state(t)
    }

    fn drift(&self, t: f64) -> Vec<f64> {
        self.eval_drift(t)
    }

    fn domain(&self) -> (f64, f64) {
        self.kv.domain()
    }
}
