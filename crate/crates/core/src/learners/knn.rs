use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};

/// Build-partition rows shared by every kNN machine of a grid.
#[derive(Debug)]
pub struct KnnIndex {
    x: Array2<f64>,
    y: Array1<f64>,
}

impl KnnIndex {
    pub fn new(build: &Dataset) -> Arc<Self> {
        Arc::new(Self {
            x: build.features().to_owned(),
            y: build.response().to_owned(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Build responses ordered by increasing squared Euclidean distance to
    /// `q`; ties go to the lower row index.
    pub(crate) fn ordered_responses(&self, q: ArrayView1<'_, f64>) -> Vec<f64> {
        let mut d: Vec<(f64, usize)> = self
            .x
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let s = r
                    .iter()
                    .zip(q.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (s, i)
            })
            .collect();
        d.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().map(|(_, i)| self.y[i]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct KnnModel {
    pub(crate) index: Arc<KnnIndex>,
    pub(crate) k: usize,
}

impl KnnModel {
    pub fn new(index: Arc<KnnIndex>, k: usize) -> Result<Self> {
        if k == 0 || k > index.len() {
            return Err(Error::invalid(format!(
                "k = {k} outside 1..={}",
                index.len()
            )));
        }
        Ok(Self { index, k })
    }

    pub fn predict_row(&self, q: ArrayView1<'_, f64>) -> f64 {
        let ys = self.index.ordered_responses(q);
        mean_of_prefix(&ys, self.k)
    }
}

/// Sequential sum so that a shared running prefix sum gives identical bits.
pub(crate) fn mean_of_prefix(ys: &[f64], k: usize) -> f64 {
    let mut s = 0.0;
    for y in &ys[..k] {
        s += y;
    }
    s / k as f64
}
