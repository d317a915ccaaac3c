//! The value-function sieve: feature map Ψ(s), its gradient, and integrals
//! of Ψ against a reference measure.
//!
//! Two families are provided. Additive B-splines are the default: flexible
//! per dimension, with feature count linear in the state dimension.
//! Polynomial tensor features are kept for analytic verification, where the
//! small closed-form basis (1, s, ...) makes hand computation possible.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
// Provides f64 math in no_std builds; whenever std is linked (tests, the
// CLI) the inherent methods shadow it and the import looks unused.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::ReferenceMeasure;
use crate::error::Error;
use crate::splines::{eval_basis, make_knot_vector, KnotPlacement, KnotVector};

/// Which feature family to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    AdditiveBSpline,
    PolynomialTensor,
}

/// Declarative description of a feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    /// B-spline basis functions per state dimension.
    pub n_basis: usize,
    /// B-spline degree.
    pub degree: usize,
    /// Maximum total degree of the polynomial tensor family.
    pub max_degree: usize,
    pub include_intercept: bool,
    /// Per-dimension feature domain. `None` derives it from the pooled state
    /// samples, expanded 5% on each side.
    pub state_domain: Option<Vec<(f64, f64)>>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            kind: FeatureKind::AdditiveBSpline,
            n_basis: 6,
            degree: 3,
            max_degree: 2,
            include_intercept: true,
            state_domain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Basis {
    /// Per-dimension knot vectors plus the clamping box. When an intercept is
    /// present the first basis function of each dimension is dropped: the
    /// B-spline partition of unity would otherwise reproduce the constant and
    /// make the design collinear.
    Spline {
        knots: Vec<KnotVector>,
        clamp: Vec<(f64, f64)>,
    },
    /// Monomial exponent rows, graded-lexicographic.
    Monomials { exponents: Vec<Vec<u32>> },
}

/// A realized feature map: Ψ: ℝ^d → ℝ^M with gradient ∇Ψ: ℝ^d → ℝ^{d×M}.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    basis: Basis,
    d: usize,
    m: usize,
    intercept: bool,
}

impl FeatureMap {
    /// State dimension the map expects.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of features.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Ψ(s).
    pub fn psi(&self, s: &[f64]) -> DVector<f64> {
        debug_assert_eq!(s.len(), self.d);
        let mut out = DVector::zeros(self.m);
        match &self.basis {
            Basis::Spline { knots, clamp } => {
                let mut idx = 0;
                if self.intercept {
                    out[0] = 1.0;
                    idx = 1;
                }
                let skip = usize::from(self.intercept);
                for (dim, kv) in knots.iter().enumerate() {
                    let x = s[dim].clamp(clamp[dim].0, clamp[dim].1);
                    let vals = eval_basis(kv, x, 0);
                    for &v in &vals[skip..] {
                        out[idx] = v;
                        idx += 1;
                    }
                }
            }
            Basis::Monomials { exponents } => {
                for (j, exps) in exponents.iter().enumerate() {
                    out[j] = exps
                        .iter()
                        .zip(s)
                        .map(|(&e, &x)| x.powi(e as i32))
                        .product();
                }
            }
        }
        out
    }

    /// ∇Ψ(s): row k holds ∂Ψ/∂s_k.
    pub fn grad_psi(&self, s: &[f64]) -> DMatrix<f64> {
        debug_assert_eq!(s.len(), self.d);
        let mut out = DMatrix::zeros(self.d, self.m);
        match &self.basis {
            Basis::Spline { knots, clamp } => {
                let mut idx = usize::from(self.intercept);
                let skip = usize::from(self.intercept);
                for (dim, kv) in knots.iter().enumerate() {
                    let x = s[dim].clamp(clamp[dim].0, clamp[dim].1);
                    let ders = eval_basis(kv, x, 1);
                    for &v in &ders[skip..] {
                        out[(dim, idx)] = v;
                        idx += 1;
                    }
                }
            }
            Basis::Monomials { exponents } => {
                for (j, exps) in exponents.iter().enumerate() {
                    for k in 0..self.d {
                        let e = exps[k];
                        if e == 0 {
                            continue;
                        }
                        let mut v = e as f64 * s[k].powi(e as i32 - 1);
                        for (other, (&eo, &xo)) in exps.iter().zip(s).enumerate() {
                            if other != k {
                                v *= xo.powi(eo as i32);
                            }
                        }
                        out[(k, j)] = v;
                    }
                }
            }
        }
        out
    }
}

/// Builds a feature map. `pooled_states` supplies the empirical domain when
/// `spec.state_domain` is `None`; it may be empty otherwise.
pub fn build_feature_map(
    spec: &FeatureSpec,
    pooled_states: &[Vec<f64>],
) -> Result<FeatureMap, Error> {
    let d = match &spec.state_domain {
        Some(dom) => dom.len(),
        None => {
            if pooled_states.is_empty() {
                return Err(Error::NoSamples);
            }
            pooled_states[0].len()
        }
    };
    assert!(d >= 1, "state dimension must be at least 1");

    let (basis, m) = match spec.kind {
        FeatureKind::AdditiveBSpline => {
            let domain = resolve_domain(spec, pooled_states, d)?;
            let mut knots = Vec::with_capacity(d);
            for &(lo, hi) in &domain {
                knots.push(make_knot_vector(
                    &[lo, hi],
                    spec.n_basis,
                    spec.degree,
                    KnotPlacement::Uniform,
                )?);
            }
            let per_dim = spec.n_basis - usize::from(spec.include_intercept);
            let m = usize::from(spec.include_intercept) + d * per_dim;
            (
                Basis::Spline {
                    knots,
                    clamp: domain,
                },
                m,
            )
        }
        FeatureKind::PolynomialTensor => {
            let exponents = monomials_up_to(d, spec.max_degree, spec.include_intercept);
            let m = exponents.len();
            (Basis::Monomials { exponents }, m)
        }
    };
    assert!(m >= 2, "feature map must have at least two features");
    Ok(FeatureMap {
        basis,
        d,
        m,
        intercept: spec.include_intercept,
    })
}

fn resolve_domain(
    spec: &FeatureSpec,
    pooled: &[Vec<f64>],
    d: usize,
) -> Result<Vec<(f64, f64)>, Error> {
    if let Some(dom) = &spec.state_domain {
        for (k, &(lo, hi)) in dom.iter().enumerate() {
            if !(hi > lo) {
                return Err(Error::DegenerateDomain(format!(
                    "state dimension {k} has range [{lo}, {hi}]"
                )));
            }
        }
        return Ok(dom.clone());
    }
    if pooled.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in pooled {
            lo = lo.min(s[k]);
            hi = hi.max(s[k]);
        }
        if !(hi > lo) {
            return Err(Error::DegenerateDomain(format!(
                "pooled states are constant in dimension {k} (value {lo})"
            )));
        }
        let pad = 0.05 * (hi - lo);
        out.push((lo - pad, hi + pad));
    }
    Ok(out)
}

/// All monomial exponent rows with total degree ≤ `max_degree`, ordered by
/// total degree and then lexicographically within a degree.
fn monomials_up_to(d: usize, max_degree: usize, include_constant: bool) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let start = usize::from(!include_constant);
    for total in start..=max_degree {
        let mut row = vec![0u32; d];
        emit_degree(total as u32, 0, &mut row, &mut out);
    }
    out
}

fn emit_degree(remaining: u32, dim: usize, row: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if dim + 1 == row.len() {
        row[dim] = remaining;
        out.push(row.clone());
        row[dim] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        row[dim] = e;
        emit_degree(remaining - e, dim + 1, row, out);
        row[dim] = 0;
    }
}

/// Integral of Ψ against a reference measure: the vector v = ∫ Ψ(s) 𝔾(ds).
///
/// `samples` supplies the empirical distribution (typically each subject's
/// initial state) and is ignored by the other measures.
pub fn integrate_psi(
    fm: &FeatureMap,
    measure: &ReferenceMeasure,
    samples: &[Vec<f64>],
) -> Result<DVector<f64>, Error> {
    match measure {
        ReferenceMeasure::PointMass { point } => Ok(fm.psi(point)),
        ReferenceMeasure::EmpiricalInitialStates => {
            if samples.is_empty() {
                return Err(Error::NoSamples);
            }
            let mut acc = DVector::zeros(fm.m());
            for s in samples {
                acc += fm.psi(s);
            }
            Ok(acc / samples.len() as f64)
        }
        ReferenceMeasure::UniformGrid { lo, hi, n_grid } => {
            assert!(*n_grid >= 2, "uniform grid needs at least two points");
            assert_eq!(lo.len(), fm.dim());
            assert_eq!(hi.len(), fm.dim());
            let d = fm.dim();
            let mut acc = DVector::zeros(fm.m());
            let mut index = vec![0usize; d];
            let total = (*n_grid).pow(d as u32);
            let mut point = vec![0.0; d];
            for _ in 0..total {
                for k in 0..d {
                    point[k] =
                        lo[k] + (hi[k] - lo[k]) * index[k] as f64 / (*n_grid - 1) as f64;
                }
                acc += fm.psi(&point);
                for k in (0..d).rev() {
                    index[k] += 1;
                    if index[k] < *n_grid {
                        break;
                    }
                    index[k] = 0;
                }
            }
            Ok(acc / total as f64)
        }
    }
}
