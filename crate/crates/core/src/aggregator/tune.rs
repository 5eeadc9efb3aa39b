//! Leave-one-out bandwidth selection.
//!
//! `J(h) = (1/n) sum_i (Y_i - g_i(h))^2` where `g_i` is the kernel average
//! over every stored row except `i`. With `s_ij = (d_ij / h)^alpha / sigma`
//! and normalized weights `p_ij`,
//!
//! ```text
//! dg_i/dh = sum_j p_ij (alpha s_ij / h) (Y_j - g_i)
//! dJ/dh   = -(2/n) sum_i (Y_i - g_i) dg_i/dh
//! ```

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use super::{exponent_sq, KernelSpec};
use crate::error::{Error, Result};
use crate::learners::log_space;

const MAX_ITERATIONS: usize = 200;
const MAX_BACKTRACKS: usize = 30;
const INITIAL_STEP: f64 = 0.1;
const CONTRACTION: f64 = 0.5;
const ARMIJO_C: f64 = 1e-4;
const REL_TOL: f64 = 1e-6;
const FLOOR_FRACTION: f64 = 1e-12;
const GRID_POINTS: usize = 200;
const GRID_SPAN: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub enum TuneMethod {
    GradientDescent,
    /// `GRID_POINTS` log-spaced values from `1e-3` to `1e3` times the
    /// median pairwise distance.
    DefaultGrid,
    Grid(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneTrace {
    pub h_path: Vec<f64>,
    pub objective_path: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Descent pushed `h` onto the positivity floor.
    pub hit_floor: bool,
    pub seed: u64,
}

/// Pairwise squared distances and responses of an aggregation sample.
#[derive(Debug, Clone)]
pub struct LooProblem {
    n: usize,
    sq: Vec<f64>,
    y: Vec<f64>,
    alpha: f64,
    sigma: f64,
}

impl LooProblem {
    pub fn new(features: ArrayView2<'_, f64>, responses: ArrayView1<'_, f64>, alpha: f64, sigma: f64) -> Result<Self> {
        let n = features.nrows();
        if responses.len() != n {
            return Err(Error::shape(format!("{n} feature rows but {} responses", responses.len())));
        }
        if n < 4 {
            return Err(Error::invalid(format!("bandwidth tuning needs at least 4 rows, got {n}")));
        }
        KernelSpec::new(alpha, sigma, 1.0)?;
        let rows: Vec<_> = features.outer_iter().collect();
        let sq: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / n, k % n);
                rows[i].iter().zip(rows[j].iter()).map(|(a, b)| (a - b) * (a - b)).sum()
            })
            .collect();
        Ok(Self {
            n,
            sq,
            y: responses.to_vec(),
            alpha,
            sigma,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn pair_distances(&self) -> Vec<f64> {
        let n = self.n;
        let mut d = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                d.push(self.sq[i * n + j].sqrt());
            }
        }
        d.sort_by(f64::total_cmp);
        d
    }

    /// Median of pairwise distances, falling back to the median of the
    /// positive ones when duplicates make it zero. Zero if all rows coincide.
    pub fn median_distance(&self) -> f64 {
        let d = self.pair_distances();
        let med = median_sorted(&d);
        if med > 0.0 {
            return med;
        }
        let pos: Vec<f64> = d.into_iter().filter(|v| *v > 0.0).collect();
        if pos.is_empty() {
            0.0
        } else {
            median_sorted(&pos)
        }
    }

    pub fn max_distance(&self) -> f64 {
        self.sq.iter().copied().fold(0.0, f64::max).sqrt()
    }

    /// Returns `(g_i, dg_i/dh)` for row `i`.
    fn row_terms(&self, i: usize, h: f64, want_grad: bool) -> (f64, f64) {
        let n = self.n;
        let row = &self.sq[i * n..(i + 1) * n];
        let mut s_min = f64::INFINITY;
        for (j, &sq) in row.iter().enumerate() {
            if j != i {
                s_min = s_min.min(exponent_sq(sq, self.alpha, self.sigma, h));
            }
        }
        let mut den = 0.0;
        let mut num = 0.0;
        let mut ds = 0.0;
        let mut dsy = 0.0;
        for (j, &sq) in row.iter().enumerate() {
            if j == i {
                continue;
            }
            let s = exponent_sq(sq, self.alpha, self.sigma, h);
            let w = (-(s - s_min)).exp();
            den += w;
            num += w * self.y[j];
            if want_grad {
                let a = w * self.alpha * s / h;
                ds += a;
                dsy += a * self.y[j];
            }
        }
        if !(den > 0.0) {
            return (0.0, 0.0);
        }
        let g = num / den;
        (g, (dsy - g * ds) / den)
    }

    fn evaluate(&self, h: f64, want_grad: bool) -> (f64, f64) {
        let terms: Vec<(f64, f64)> = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let (g, dg) = self.row_terms(i, h, want_grad);
                let r = self.y[i] - g;
                (r * r, r * dg)
            })
            .collect();
        let n = self.n as f64;
        let (mut j, mut d) = (0.0, 0.0);
        for (a, b) in terms {
            j += a;
            d += b;
        }
        (j / n, -2.0 * d / n)
    }

    /// Leave-one-out mean squared error at bandwidth `h`.
    pub fn objective(&self, h: f64) -> f64 {
        self.evaluate(h, false).0
    }

    /// `(J(h), dJ/dh)`.
    pub fn objective_and_gradient(&self, h: f64) -> (f64, f64) {
        self.evaluate(h, true)
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Log-spaced candidate bandwidths around the median pairwise distance.
pub fn default_grid(problem: &LooProblem) -> Vec<f64> {
    let med = problem.median_distance();
    if med > 0.0 {
        log_space(med / GRID_SPAN, med * GRID_SPAN, GRID_POINTS)
    } else {
        vec![1.0]
    }
}

fn finite(j: f64, h: f64) -> Result<f64> {
    if j.is_finite() {
        Ok(j)
    } else {
        Err(Error::Numerical(format!("non-finite tuning objective at h = {h:e}")))
    }
}

pub fn tune_bandwidth(
    features: ArrayView2<'_, f64>,
    responses: ArrayView1<'_, f64>,
    alpha: f64,
    sigma: f64,
    method: &TuneMethod,
    seed: u64,
) -> Result<(KernelSpec, TuneTrace)> {
    let problem = LooProblem::new(features, responses, alpha, sigma)?;
    match method {
        TuneMethod::GradientDescent => descend(&problem, seed),
        TuneMethod::DefaultGrid => grid(&problem, &default_grid(&problem), seed),
        TuneMethod::Grid(c) => grid(&problem, c, seed),
    }
}

fn grid(problem: &LooProblem, candidates: &[f64], seed: u64) -> Result<(KernelSpec, TuneTrace)> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty bandwidth grid"));
    }
    let mut best = (f64::INFINITY, candidates[0]);
    let mut objective_path = Vec::with_capacity(candidates.len());
    for &h in candidates {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("grid bandwidth {h} must be positive")));
        }
        let j = finite(problem.objective(h), h)?;
        objective_path.push(j);
        if j < best.0 {
            best = (j, h);
        }
    }
    let kernel = KernelSpec::new(problem.alpha, problem.sigma, best.1)?;
    Ok((
        kernel,
        TuneTrace {
            h_path: candidates.to_vec(),
            objective_path,
            converged: true,
            iterations: candidates.len(),
            hit_floor: false,
            seed,
        },
    ))
}

fn descend(problem: &LooProblem, seed: u64) -> Result<(KernelSpec, TuneTrace)> {
    let max_d = problem.max_distance();
    let mut trace = TuneTrace {
        h_path: Vec::new(),
        objective_path: Vec::new(),
        converged: false,
        iterations: 0,
        hit_floor: false,
        seed,
    };
    if max_d == 0.0 {
        // Every row coincides; J does not depend on h.
        let j = finite(problem.objective(1.0), 1.0)?;
        trace.h_path.push(1.0);
        trace.objective_path.push(j);
        trace.converged = true;
        return Ok((KernelSpec::new(problem.alpha, problem.sigma, 1.0)?, trace));
    }
    let floor = FLOOR_FRACTION * max_d;
    let mut h = problem.median_distance();
    let (mut j, mut grad) = problem.objective_and_gradient(h);
    finite(j, h)?;
    trace.h_path.push(h);
    trace.objective_path.push(j);

    for _ in 0..MAX_ITERATIONS {
        trace.iterations += 1;
        if grad == 0.0 || !grad.is_finite() {
            trace.converged = grad == 0.0;
            break;
        }
        let dir = -grad.signum();
        let mut step = INITIAL_STEP * h;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let cand = (h + dir * step).max(floor);
            let moved = cand - h;
            if moved == 0.0 {
                break;
            }
            let jc = problem.objective(cand);
            if jc.is_finite() && jc <= j + ARMIJO_C * moved * grad {
                accepted = Some((cand, jc));
                break;
            }
            step *= CONTRACTION;
        }
        let Some((h_new, j_new)) = accepted else {
            // No decrease along the descent direction at any trial step.
            trace.converged = true;
            break;
        };
        if h_new <= floor {
            trace.hit_floor = true;
        }
        trace.h_path.push(h_new);
        trace.objective_path.push(j_new);
        let small = (h_new - h).abs() < REL_TOL * h;
        h = h_new;
        if small {
            trace.converged = true;
            break;
        }
        let (jj, g) = problem.objective_and_gradient(h);
        j = finite(jj, h)?;
        grad = g;
    }
    Ok((KernelSpec::new(problem.alpha, problem.sigma, h)?, trace))
}
