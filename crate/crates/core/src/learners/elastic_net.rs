//! Elastic net by cyclic coordinate descent.
//!
//! Minimises
//!
//! ```text
//! ||y - b0 - X b||^2 + lambda * (alpha * ||b||_1 + (1 - alpha) * ||b||_2^2)
//! ```
//!
//! over standardized features with an unpenalized intercept. Setting the
//! partial derivative in `b_j` to zero gives the update
//!
//! ```text
//! b_j = S(rho_j, lambda * alpha / 2) / (||z_j||^2 + lambda * (1 - alpha))
//! ```
//!
//! where `rho_j` is the inner product of column `j` with the partial residual
//! and `S` is soft-thresholding. All inner products come from the Gram matrix,
//! so one sweep costs `O(d^2)` regardless of `n`.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ElasticNetOptions {
    /// Scale each column to unit variance (columns are always centered).
    pub standardize: bool,
    /// Stop once the largest coefficient change in a sweep is below
    /// `tolerance * max(1, max |b|)`.
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Record the objective after every sweep.
    pub track_objective: bool,
}

impl Default for ElasticNetOptions {
    fn default() -> Self {
        Self {
            standardize: true,
            tolerance: 1e-8,
            max_sweeps: 10_000,
            track_objective: false,
        }
    }
}

/// Column statistics and Gram products of a build partition, reusable
/// across every `(alpha, lambda)` pair of a grid.
#[derive(Debug, Clone)]
pub struct Standardized {
    mean: Array1<f64>,
    scale: Array1<f64>,
    y_mean: f64,
    gram: Array2<f64>,
    xty: Array1<f64>,
    yty: f64,
}

impl Standardized {
    pub fn new(build: &Dataset, standardize: bool) -> Self {
        let x = build.features();
        let y = build.response();
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let y_mean = y.sum() / n;
        let mut z = &x - &mean;
        let scale = if standardize {
            let sd = z.map_axis(Axis(0), |c| (c.dot(&c) / n).sqrt());
            for (mut col, &s) in z.columns_mut().into_iter().zip(sd.iter()) {
                if s > 0.0 {
                    col /= s;
                }
            }
            sd
        } else {
            Array1::ones(x.ncols())
        };
        let yc = &y - y_mean;
        Self {
            gram: z.t().dot(&z),
            xty: z.t().dot(&yc),
            yty: yc.dot(&yc),
            mean,
            scale,
            y_mean,
        }
    }

    fn objective(&self, b: &Array1<f64>, gb: &Array1<f64>, l1: f64, l2: f64) -> f64 {
        let rss = self.yty - 2.0 * b.dot(&self.xty) + b.dot(gb);
        rss + l1 * b.iter().map(|v| v.abs()).sum::<f64>() + l2 * b.dot(b)
    }
}

#[derive(Debug, Clone)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Array1<f64>,
    pub sweeps: usize,
    /// Objective after each sweep, when tracking was requested.
    pub objective_path: Vec<f64>,
}

impl LinearModel {
    pub fn predict_row(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.intercept + x.dot(&self.coefficients)
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub fn fit(
    prep: &Standardized,
    alpha_mix: f64,
    lambda: f64,
    opts: &ElasticNetOptions,
) -> Result<LinearModel> {
    if !(0.0..=1.0).contains(&alpha_mix) {
        return Err(Error::invalid(format!("alpha_mix {alpha_mix} outside [0,1]")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda {lambda} must be finite and >= 0")));
    }
    let d = prep.xty.len();
    let l1 = lambda * alpha_mix;
    let l2 = lambda * (1.0 - alpha_mix);
    let thresh = l1 / 2.0;

    let mut b = Array1::<f64>::zeros(d);
    let mut gb = Array1::<f64>::zeros(d);
    let mut objective_path = Vec::new();
    let mut last_change = f64::INFINITY;

    for sweep in 1..=opts.max_sweeps {
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            let gjj = prep.gram[[j, j]];
            let denom = gjj + l2;
            let old = b[j];
            let new = if denom > 0.0 {
                let rho = prep.xty[j] - gb[j] + gjj * old;
                soft_threshold(rho, thresh) / denom
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                b[j] = new;
                gb.scaled_add(delta, &prep.gram.column(j));
                max_change = max_change.max(delta.abs());
            }
        }
        if opts.track_objective {
            objective_path.push(prep.objective(&b, &gb, l1, l2));
        }
        last_change = max_change;
        let scale = b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if max_change <= opts.tolerance * scale {
            let coefficients = &b / &prep.scale.mapv(|s| if s > 0.0 { s } else { 1.0 });
            let intercept = prep.y_mean - coefficients.dot(&prep.mean);
            if !intercept.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
                return Err(Error::Numerical("elastic net produced non-finite coefficients".into()));
            }
            return Ok(LinearModel {
                intercept,
                coefficients,
                sweeps: sweep,
                objective_path,
            });
        }
    }
    Err(Error::NotConverged {
        sweeps: opts.max_sweeps,
        last_change,
    })
}
