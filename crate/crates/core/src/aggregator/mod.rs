//! Exponential-kernel aggregation of machine predictions.
//!
//! Given stored rows `r_i` with responses `Y_i`, a query `q` is predicted as
//! `sum_i Y_i K_h(||q - r_i||) / sum_i K_h(||q - r_i||)` with
//! `K_h(t) = exp(-(t / h)^alpha / sigma)`.

mod serial;
mod tune;

pub use serial::{load_model, model_from_json, model_to_json, save_model};
pub use tune::{default_grid, tune_bandwidth, LooProblem, TuneMethod, TuneTrace};

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::PredictionMatrix;
use crate::error::{Error, Result};
use crate::projection::{project, ProjectionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub alpha: f64,
    pub sigma: f64,
    pub h: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            sigma: 1.0,
            h: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn new(alpha: f64, sigma: f64, h: f64) -> Result<Self> {
        let k = Self { alpha, sigma, h };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("kernel alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("kernel sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid(format!("bandwidth h must be > 0, got {}", self.h)));
        }
        Ok(())
    }

    /// `(t / h)^alpha / sigma` from the squared distance `t^2`.
    pub fn exponent_sq(&self, sq: f64) -> f64 {
        exponent_sq(sq, self.alpha, self.sigma, self.h)
    }

    /// `K_h(t)`.
    pub fn weight(&self, t: f64) -> f64 {
        (-self.exponent_sq(t * t)).exp()
    }
}

pub(crate) fn exponent_sq(sq: f64, alpha: f64, sigma: f64, h: f64) -> f64 {
    if alpha == 2.0 {
        sq / (h * h) / sigma
    } else {
        (sq.sqrt() / h).powf(alpha) / sigma
    }
}

/// Which space the queries passed to [`AggregatorModel::predict_batch`] live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryInput {
    /// Raw `M`-wide machine predictions; projected models map them through `G`.
    Raw,
    /// Already in the model's feature space.
    Model,
}

#[derive(Debug)]
pub struct AggregatorModel {
    features: Array2<f64>,
    responses: Array1<f64>,
    kernel: KernelSpec,
    projection: Option<ProjectionMatrix>,
    zero_weight_fallbacks: AtomicU64,
}

impl Clone for AggregatorModel {
    fn clone(&self) -> Self {
        Self {
            features: self.features.clone(),
            responses: self.responses.clone(),
            kernel: self.kernel,
            projection: self.projection.clone(),
            zero_weight_fallbacks: AtomicU64::new(self.zero_weight_fallbacks()),
        }
    }
}

fn check_responses(n_rows: usize, responses: ArrayView1<'_, f64>) -> Result<()> {
    if responses.len() != n_rows {
        return Err(Error::shape(format!(
            "{} feature rows but {} responses",
            n_rows,
            responses.len()
        )));
    }
    if responses.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "aggregation responses".into() });
    }
    Ok(())
}

impl AggregatorModel {
    pub fn build_full(
        features: &PredictionMatrix,
        responses: ArrayView1<'_, f64>,
        kernel: KernelSpec,
    ) -> Result<Self> {
        kernel.validate()?;
        check_responses(features.n_rows(), responses)?;
        Ok(Self {
            features: features.values().to_owned(),
            responses: responses.to_owned(),
            kernel,
            projection: None,
            zero_weight_fallbacks: AtomicU64::new(0),
        })
    }

    pub fn build_projected(
        features: &PredictionMatrix,
        responses: ArrayView1<'_, f64>,
        kernel: KernelSpec,
        g: ProjectionMatrix,
    ) -> Result<Self> {
        kernel.validate()?;
        check_responses(features.n_rows(), responses)?;
        let projected = project(features, &g)?;
        Ok(Self {
            features: projected.into_values(),
            responses: responses.to_owned(),
            kernel,
            projection: Some(g),
            zero_weight_fallbacks: AtomicU64::new(0),
        })
    }

    pub(crate) fn from_parts(
        features: Array2<f64>,
        responses: Array1<f64>,
        kernel: KernelSpec,
        projection: Option<ProjectionMatrix>,
    ) -> Result<Self> {
        kernel.validate()?;
        check_responses(features.nrows(), responses.view())?;
        if let Some(g) = &projection {
            if g.output_dim() != features.ncols() {
                return Err(Error::shape(format!(
                    "stored features have {} columns, projection has {}",
                    features.ncols(),
                    g.output_dim()
                )));
            }
        }
        Ok(Self {
            features,
            responses,
            kernel,
            projection,
            zero_weight_fallbacks: AtomicU64::new(0),
        })
    }

    /// Same stored rows with a different kernel.
    pub fn with_kernel(&self, kernel: KernelSpec) -> Result<Self> {
        kernel.validate()?;
        let mut out = self.clone();
        out.kernel = kernel;
        out.zero_weight_fallbacks = AtomicU64::new(0);
        Ok(out)
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn responses(&self) -> ArrayView1<'_, f64> {
        self.responses.view()
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn projection(&self) -> Option<&ProjectionMatrix> {
        self.projection.as_ref()
    }

    /// Width of the stored feature rows.
    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    /// Width expected for raw queries.
    pub fn raw_width(&self) -> usize {
        self.projection.as_ref().map_or(self.width(), |g| g.input_dim())
    }

    /// How many predictions fell back to 0 because every weight vanished.
    pub fn zero_weight_fallbacks(&self) -> u64 {
        self.zero_weight_fallbacks.load(Ordering::Relaxed)
    }

    pub fn predict_one(&self, query: ArrayView1<'_, f64>) -> Result<f64> {
        if query.len() != self.width() {
            return Err(Error::shape(format!(
                "query has {} entries, model expects {}",
                query.len(),
                self.width()
            )));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "query".into() });
        }
        Ok(self.predict_checked(query))
    }

    fn predict_checked(&self, query: ArrayView1<'_, f64>) -> f64 {
        let k = self.kernel;
        let s: Vec<f64> = self
            .features
            .outer_iter()
            .map(|row| {
                let sq: f64 = row.iter().zip(query.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                exponent_sq(sq, k.alpha, k.sigma, k.h)
            })
            .collect();
        let s_min = s.iter().copied().fold(f64::INFINITY, f64::min);
        let mut num = 0.0;
        let mut den = 0.0;
        if s_min.is_finite() {
            for (si, yi) in s.iter().zip(self.responses.iter()) {
                let w = (-(si - s_min)).exp();
                num += w * yi;
                den += w;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            self.zero_weight_fallbacks.fetch_add(1, Ordering::Relaxed);
            0.0
        }
    }

    pub fn predict_batch(&self, queries: ArrayView2<'_, f64>, input: QueryInput) -> Result<Array1<f64>> {
        let mapped;
        let q = match (input, &self.projection) {
            (QueryInput::Raw, Some(g)) => {
                mapped = g.apply(queries)?;
                mapped.view()
            }
            _ => queries,
        };
        if q.ncols() != self.width() {
            return Err(Error::shape(format!(
                "queries have {} columns, model expects {}",
                q.ncols(),
                self.width()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "query".into() });
        }
        let out: Vec<f64> = q
            .axis_iter(Axis(0))
            .into_par_iter()
            .map(|row| self.predict_checked(row))
            .collect();
        Ok(Array1::from(out))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    pub mean_gap: f64,
    /// `(epsilon, fraction of queries with gap > epsilon)`.
    pub exceedance: Vec<(f64, f64)>,
}

/// Compares a full model and a projected model on raw queries.
pub fn full_vs_projected_gap(
    full: &AggregatorModel,
    projected: &AggregatorModel,
    raw_queries: ArrayView2<'_, f64>,
    epsilons: &[f64],
) -> Result<GapReport> {
    if full.projection.is_some() {
        return Err(Error::invalid("first model must be a full aggregator"));
    }
    if projected.raw_width() != full.width() {
        return Err(Error::shape(format!(
            "full model is {}-wide, projected model expects {} raw columns",
            full.width(),
            projected.raw_width()
        )));
    }
    if full.responses != projected.responses {
        return Err(Error::invalid("models were built on different responses"));
    }
    if full.kernel != projected.kernel {
        return Err(Error::invalid("models use different kernels"));
    }
    let a = full.predict_batch(raw_queries, QueryInput::Raw)?;
    let b = projected.predict_batch(raw_queries, QueryInput::Raw)?;
    let gaps: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).collect();
    let k = gaps.len().max(1) as f64;
    let exceedance = epsilons
        .iter()
        .map(|&e| (e, gaps.iter().filter(|g| **g > e).count() as f64 / k))
        .collect();
    Ok(GapReport {
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        mean_gap: gaps.iter().sum::<f64>() / k,
        gaps,
        exceedance,
    })
}
