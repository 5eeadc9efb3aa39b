//! Data containers shared by every other module: datasets, splits, the
//! prediction matrix, and the RMSE metric.

mod csv_io;

pub use csv_io::{load_csv, load_prediction_matrix, save_csv, save_prediction_matrix, format_f64};
pub(crate) use csv_io::{read_table, write_table};

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// `n` rows of `(features, response)` with named feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    response: Array1<f64>,
    column_names: Vec<String>,
    response_name: String,
    name: String,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        response: Array1<f64>,
        column_names: Vec<String>,
        response_name: impl Into<String>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("dataset must be non-empty, got {n}x{d}")));
        }
        if response.len() != n {
            return Err(Error::shape(format!(
                "{n} feature rows but {} responses",
                response.len()
            )));
        }
        if column_names.len() != d {
            return Err(Error::shape(format!(
                "{d} feature columns but {} names",
                column_names.len()
            )));
        }
        let mut seen = HashSet::with_capacity(d);
        for c in &column_names {
            if !seen.insert(c.as_str()) {
                return Err(Error::DuplicateColumn(c.clone()));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "features".into() });
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "response".into() });
        }
        Ok(Self {
            features,
            response,
            column_names,
            response_name: response_name.into(),
            name: name.into(),
        })
    }

    /// Features named `X1..Xd`, response named `Y`.
    pub fn with_default_names(
        name: impl Into<String>,
        features: Array2<f64>,
        response: Array1<f64>,
    ) -> Result<Self> {
        let names = (1..=features.ncols()).map(|j| format!("X{j}")).collect();
        Self::new(name, features, response, names, "Y")
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn response(&self) -> ArrayView1<'_, f64> {
        self.response.view()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            response: self.response.select(Axis(0), indices),
            column_names: self.column_names.clone(),
            response_name: self.response_name.clone(),
            name: self.name.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_fraction: 0.2, seed: 0 }
    }
}

/// Seeded Fisher-Yates split of `0..n`; each part is returned sorted.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0,1), got {}",
            spec.test_fraction
        )));
    }
    if n < 5 {
        return Err(Error::invalid(format!("split needs at least 5 rows, got {n}")));
    }
    let n_test = (spec.test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::invalid(format!(
            "degenerate split: {n_test} test rows out of {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(spec.seed));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.n_rows(), spec)?;
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}

/// Build (n1) / aggregation (n2) halves of a training set,
/// `n1 = ceil(n_train / 2)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPartition {
    pub build_indices: Vec<usize>,
    pub aggregation_indices: Vec<usize>,
}

impl TrainPartition {
    pub fn n_build(&self) -> usize {
        self.build_indices.len()
    }

    pub fn n_aggregation(&self) -> usize {
        self.aggregation_indices.len()
    }

    /// Returns `(build, aggregation)` datasets.
    pub fn apply(&self, train: &Dataset) -> (Dataset, Dataset) {
        (
            train.select_rows(&self.build_indices),
            train.select_rows(&self.aggregation_indices),
        )
    }
}

pub fn partition_train(train: &Dataset, seed: u64) -> Result<TrainPartition> {
    partition_indices(train.n_rows(), seed)
}

pub fn partition_indices(n_train: usize, seed: u64) -> Result<TrainPartition> {
    if n_train < 4 {
        return Err(Error::invalid(format!(
            "training partition needs at least 4 rows, got {n_train}"
        )));
    }
    let n1 = n_train.div_ceil(2);
    let mut perm: Vec<usize> = (0..n_train).collect();
    perm.shuffle(&mut seed::rng(seed));
    let mut build = perm[..n1].to_vec();
    let mut agg = perm[n1..].to_vec();
    build.sort_unstable();
    agg.sort_unstable();
    Ok(TrainPartition {
        build_indices: build,
        aggregation_indices: agg,
    })
}

/// `n x M` matrix of base-machine predictions, one labelled column per machine.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    values: Array2<f64>,
    machine_labels: Vec<String>,
    bound_r0: f64,
}

impl PredictionMatrix {
    /// `extra_bound` folds in magnitudes that are not part of `values`
    /// (e.g. build-partition responses) when computing the R0 bound.
    pub fn new(values: Array2<f64>, machine_labels: Vec<String>, extra_bound: f64) -> Result<Self> {
        let (n, m) = values.dim();
        if n == 0 || m == 0 {
            return Err(Error::invalid(format!(
                "prediction matrix must be non-empty, got {n}x{m}"
            )));
        }
        if machine_labels.len() != m {
            return Err(Error::shape(format!(
                "{m} columns but {} labels",
                machine_labels.len()
            )));
        }
        let mut seen = HashSet::with_capacity(m);
        for l in &machine_labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::DuplicateColumn(l.clone()));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "prediction matrix".into() });
        }
        let bound_r0 = max_abs(values.iter().copied())
            .max(extra_bound.abs())
            .max(f64::MIN_POSITIVE);
        Ok(Self {
            values,
            machine_labels,
            bound_r0,
        })
    }

    /// Columns labelled `c1..cM`.
    pub fn unlabelled(values: Array2<f64>) -> Result<Self> {
        let labels = (1..=values.ncols()).map(|j| format!("c{j}")).collect();
        Self::new(values, labels, 0.0)
    }

    pub(crate) fn with_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound >= max_abs(self.values.iter().copied())) {
            return Err(Error::invalid(format!(
                "bound_R0 {bound} does not dominate the matrix entries"
            )));
        }
        self.bound_r0 = bound.max(f64::MIN_POSITIVE);
        Ok(self)
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn machine_labels(&self) -> &[String] {
        &self.machine_labels
    }

    pub fn bound_r0(&self) -> f64 {
        self.bound_r0
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_machines(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }
}

pub(crate) fn max_abs(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Root mean squared error.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::shape(format!(
            "rmse: {} predictions vs {} targets",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("rmse of empty vectors"));
    }
    if predicted.iter().chain(actual).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "rmse input".into() });
    }
    let sse: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sse / predicted.len() as f64).sqrt())
}
