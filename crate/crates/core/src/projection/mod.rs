//! Gaussian random projection of prediction features and distortion
//! diagnostics.
//!
//! `G` is `M x m` with iid `N(0, 1/m)` entries, so for any fixed `u, v` the
//! projected squared distance `||(u - v) G||^2` is unbiased for
//! `||u - v||^2` and `m` times their ratio is chi-square with `m` degrees of
//! freedom.

pub mod bounds;

pub use bounds::{
    chernoff_lower, chernoff_upper, jl_pair_bound, jl_union_bound, min_projection_dim,
    DimensionBound, DimensionQuery, UnionBound,
};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::datamodel::{max_abs, PredictionMatrix};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    values: Array2<f64>,
    /// `None` for matrices supplied directly rather than sampled.
    seed: Option<u64>,
}

impl ProjectionMatrix {
    /// Wraps an explicit `M x m` matrix.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid("projection matrix must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "projection matrix".into() });
        }
        Ok(Self { values, seed: None })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::from_values(Array2::eye(dim))
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Input dimension `M`.
    pub fn input_dim(&self) -> usize {
        self.values.nrows()
    }

    /// Output dimension `m`.
    pub fn output_dim(&self) -> usize {
        self.values.ncols()
    }

    /// Projects raw `k x M` rows to `k x m`.
    pub fn apply(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "features have {} columns, projection expects {}",
                rows.ncols(),
                self.input_dim()
            )));
        }
        Ok(rows.dot(&self.values))
    }

    pub fn apply_row(&self, row: ArrayView1<'_, f64>) -> Result<ndarray::Array1<f64>> {
        if row.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "query has {} entries, projection expects {}",
                row.len(),
                self.input_dim()
            )));
        }
        Ok(row.dot(&self.values))
    }
}

/// Draws an `M x m` matrix of iid `N(0, 1/m)` entries (row-major order)
/// from a ChaCha stream keyed by `seed`.
pub fn sample_projection(big_m: usize, m: usize, seed: u64) -> Result<ProjectionMatrix> {
    if big_m == 0 || m == 0 {
        return Err(Error::invalid(format!(
            "projection dimensions must be positive, got {big_m}x{m}"
        )));
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut rng = seed::rng(seed);
    let values = Array2::from_shape_simple_fn((big_m, m), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    });
    Ok(ProjectionMatrix {
        values,
        seed: Some(seed),
    })
}

/// `features x G`, with `bound_r0` recomputed on the projected entries.
pub fn project(features: &PredictionMatrix, g: &ProjectionMatrix) -> Result<PredictionMatrix> {
    let values = g.apply(features.values())?;
    let labels = (1..=g.output_dim()).map(|j| format!("p{j}")).collect();
    let bound = max_abs(values.iter().copied());
    PredictionMatrix::new(values, labels, bound)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortionReport {
    pub pair_count: usize,
    /// Projected over original squared distance, one per pair.
    pub ratios: Vec<f64>,
    pub max_abs_deviation: f64,
    /// `(delta, fraction of pairs with |ratio - 1| > delta)`.
    pub fraction_exceeding: Vec<(f64, f64)>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Every `(i, j)` with `i < j` whose original rows differ.
pub fn nonzero_pairs(original: ArrayView2<'_, f64>) -> Vec<(usize, usize)> {
    let n = original.nrows();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if sq_dist(original.row(i), original.row(j)) > 0.0 {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn distortion_report(
    original: ArrayView2<'_, f64>,
    projected: ArrayView2<'_, f64>,
    pairs: &[(usize, usize)],
    deltas: &[f64],
) -> Result<DistortionReport> {
    if original.nrows() != projected.nrows() {
        return Err(Error::shape(format!(
            "{} original rows vs {} projected",
            original.nrows(),
            projected.nrows()
        )));
    }
    let n = original.nrows();
    let mut ratios = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        if i >= n || j >= n || i == j {
            return Err(Error::invalid(format!("invalid pair ({i}, {j})")));
        }
        let d0 = sq_dist(original.row(i), original.row(j));
        if d0 == 0.0 {
            return Err(Error::invalid(format!(
                "rows {i} and {j} coincide; distance ratio undefined"
            )));
        }
        ratios.push(sq_dist(projected.row(i), projected.row(j)) / d0);
    }
    let max_abs_deviation = ratios.iter().fold(0.0f64, |m, r| m.max((r - 1.0).abs()));
    let fraction_exceeding = deltas
        .iter()
        .map(|&d| {
            let c = ratios.iter().filter(|r| (*r - 1.0).abs() > d).count();
            let f = if ratios.is_empty() {
                0.0
            } else {
                c as f64 / ratios.len() as f64
            };
            (d, f)
        })
        .collect();
    Ok(DistortionReport {
        pair_count: ratios.len(),
        ratios,
        max_abs_deviation,
        fraction_exceeding,
    })
}
