//! Base-machine zoo: kNN, elastic net and three tree ensembles, plus the
//! grid builder that turns a build partition into the `M` columns of a
//! [`PredictionMatrix`].
//!
//! Every fit function receives only the build [`Dataset`], so machines can
//! never observe aggregation or test responses.

pub mod elastic_net;
pub mod knn;
pub mod tree;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{max_abs, Dataset, PredictionMatrix};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub use elastic_net::{ElasticNetOptions, LinearModel, Standardized};
pub use knn::{KnnIndex, KnnModel};
pub use tree::{EnsembleKind, EnsembleOptions, TreeEnsemble, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Knn,
    ElasticNet,
    Bagging,
    RandomForest,
    Boosting,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Knn,
        Family::ElasticNet,
        Family::Bagging,
        Family::RandomForest,
        Family::Boosting,
    ];

    /// Short name used in machine labels and result files.
    pub fn short(self) -> &'static str {
        match self {
            Family::Knn => "kNN",
            Family::ElasticNet => "Elas",
            Family::Bagging => "Bag",
            Family::RandomForest => "RF",
            Family::Boosting => "Boost",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        match s.trim().to_ascii_lowercase().as_str() {
            "knn" => Some(Family::Knn),
            "elastic_net" | "elas" | "enet" => Some(Family::ElasticNet),
            "bagging" | "bag" => Some(Family::Bagging),
            "random_forest" | "rf" => Some(Family::RandomForest),
            "boosting" | "boost" => Some(Family::Boosting),
            _ => None,
        }
    }

    fn ensemble_kind(self) -> Option<EnsembleKind> {
        match self {
            Family::Bagging => Some(EnsembleKind::Bagging),
            Family::RandomForest => Some(EnsembleKind::RandomForest),
            Family::Boosting => Some(EnsembleKind::Boosting),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MachineParams {
    Knn { k: usize },
    ElasticNet { alpha_mix: f64, lambda: f64 },
    Trees { ntree: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub family: Family,
    pub params: MachineParams,
    pub label: String,
}

impl MachineSpec {
    pub fn knn(k: usize) -> Self {
        Self {
            family: Family::Knn,
            params: MachineParams::Knn { k },
            label: format!("kNN_k{k}"),
        }
    }

    pub fn elastic_net(alpha_mix: f64, lambda: f64) -> Self {
        Self {
            family: Family::ElasticNet,
            params: MachineParams::ElasticNet { alpha_mix, lambda },
            label: format!("Elas_a{alpha_mix}_l{lambda:.4e}"),
        }
    }

    pub fn trees(family: Family, ntree: usize) -> Self {
        Self {
            family,
            params: MachineParams::Trees { ntree },
            label: format!("{}_n{ntree}", family.short()),
        }
    }
}

#[derive(Debug, Clone)]
enum Model {
    Knn(KnnModel),
    Linear(LinearModel),
    Trees { ensemble: Arc<TreeEnsemble>, ntree: usize },
}

/// A machine fit on a build partition. Prediction is read-only.
#[derive(Debug, Clone)]
pub struct FittedMachine {
    spec: MachineSpec,
    model: Model,
    response_bound: f64,
}

impl FittedMachine {
    pub fn spec(&self) -> &MachineSpec {
        &self.spec
    }

    pub fn label(&self) -> &str {
        &self.spec.label
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    /// Largest absolute build response seen while fitting.
    pub fn response_bound(&self) -> f64 {
        self.response_bound
    }

    pub fn predict_row(&self, x: ArrayView1<'_, f64>) -> f64 {
        match &self.model {
            Model::Knn(m) => m.predict_row(x),
            Model::Linear(m) => m.predict_row(x),
            Model::Trees { ensemble, ntree } => ensemble.predict_row(x, *ntree),
        }
    }

    pub fn linear(&self) -> Option<&LinearModel> {
        match &self.model {
            Model::Linear(m) => Some(m),
            _ => None,
        }
    }
}

fn response_bound(build: &Dataset) -> f64 {
    max_abs(build.response().iter().copied())
}

pub fn fit_knn(build: &Dataset, k: usize) -> Result<FittedMachine> {
    fit_knn_shared(KnnIndex::new(build), k, response_bound(build))
}

fn fit_knn_shared(index: Arc<KnnIndex>, k: usize, bound: f64) -> Result<FittedMachine> {
    Ok(FittedMachine {
        spec: MachineSpec::knn(k),
        model: Model::Knn(KnnModel::new(index, k)?),
        response_bound: bound,
    })
}

pub fn fit_elastic_net(build: &Dataset, alpha_mix: f64, lambda: f64) -> Result<FittedMachine> {
    fit_elastic_net_with(build, alpha_mix, lambda, &ElasticNetOptions::default())
}

pub fn fit_elastic_net_with(
    build: &Dataset,
    alpha_mix: f64,
    lambda: f64,
    opts: &ElasticNetOptions,
) -> Result<FittedMachine> {
    let prep = Standardized::new(build, opts.standardize);
    fit_elastic_net_prepared(&prep, alpha_mix, lambda, opts, response_bound(build))
}

fn fit_elastic_net_prepared(
    prep: &Standardized,
    alpha_mix: f64,
    lambda: f64,
    opts: &ElasticNetOptions,
    bound: f64,
) -> Result<FittedMachine> {
    Ok(FittedMachine {
        spec: MachineSpec::elastic_net(alpha_mix, lambda),
        model: Model::Linear(elastic_net::fit(prep, alpha_mix, lambda, opts)?),
        response_bound: bound,
    })
}

pub fn fit_tree_ensemble(
    build: &Dataset,
    family: Family,
    ntree: usize,
    seed: u64,
) -> Result<FittedMachine> {
    fit_tree_ensemble_with(build, family, ntree, seed, &EnsembleOptions::default())
}

pub fn fit_tree_ensemble_with(
    build: &Dataset,
    family: Family,
    ntree: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<FittedMachine> {
    let kind = family
        .ensemble_kind()
        .ok_or_else(|| Error::invalid(format!("{family} is not a tree family")))?;
    let y = build.response().to_vec();
    let ensemble = TreeEnsemble::fit(build.features(), &y, kind, ntree, seed, opts)?;
    Ok(FittedMachine {
        spec: MachineSpec::trees(family, ntree),
        model: Model::Trees {
            ensemble: Arc::new(ensemble),
            ntree,
        },
        response_bound: response_bound(build),
    })
}

/// Entry `(i, j)` is machine `j`'s prediction at row `i` of `ds`.
///
/// `bound_r0` covers both the entries and the build responses the machines
/// were fit on.
pub fn build_prediction_matrix(machines: &[FittedMachine], ds: &Dataset) -> Result<PredictionMatrix> {
    if machines.is_empty() {
        return Err(Error::invalid("no machines"));
    }
    let n = ds.n_rows();
    let m = machines.len();

    // kNN machines sharing an index reuse one neighbour ordering per row.
    let mut groups: HashMap<usize, Arc<KnnIndex>> = HashMap::new();
    for mach in machines {
        if let Model::Knn(k) = &mach.model {
            groups.entry(Arc::as_ptr(&k.index) as usize).or_insert_with(|| k.index.clone());
        }
    }

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = ds.row(i);
            let ordered: HashMap<usize, Vec<f64>> = groups
                .iter()
                .map(|(&p, idx)| {
                    let ys = idx.ordered_responses(x);
                    let mut prefix = Vec::with_capacity(ys.len());
                    let mut s = 0.0;
                    for y in ys {
                        s += y;
                        prefix.push(s);
                    }
                    (p, prefix)
                })
                .collect();
            machines
                .iter()
                .map(|mach| match &mach.model {
                    Model::Knn(k) => ordered[&(Arc::as_ptr(&k.index) as usize)][k.k - 1] / k.k as f64,
                    _ => mach.predict_row(x),
                })
                .collect()
        })
        .collect();

    let mut values = Array2::zeros((n, m));
    for (i, r) in rows.into_iter().enumerate() {
        for (j, v) in r.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinitePrediction {
                    label: machines[j].label().to_string(),
                    row: i,
                });
            }
            values[[i, j]] = v;
        }
    }
    let labels = machines.iter().map(|m| m.label().to_string()).collect();
    let bound = machines.iter().map(|m| m.response_bound).fold(0.0, f64::max);
    PredictionMatrix::new(values, labels, bound)
}

/// Hyper-parameter grid over the five families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub knn_ks: Vec<usize>,
    pub enet_grid: Vec<(f64, f64)>,
    pub tree_ntrees: Vec<usize>,
    pub families: Vec<Family>,
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i == count - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

pub const PAPER_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

impl GridSpec {
    /// 200 kNN, 5x100 elastic net and 3x100 tree ensembles: M = 1000.
    pub fn paper() -> Self {
        Self::from_parts(
            (2..=201).collect(),
            &PAPER_ALPHAS,
            &log_space(5e-5, 1.0, 100),
            (18..=315).step_by(3).collect(),
        )
    }

    /// 20 kNN, 5x4 elastic net and 3x7 tree ensembles: M = 61.
    pub fn desk() -> Self {
        Self::from_parts(
            (2..=21).collect(),
            &PAPER_ALPHAS,
            &log_space(5e-5, 1.0, 4),
            (18..=36).step_by(3).collect(),
        )
    }

    pub fn from_parts(knn_ks: Vec<usize>, alphas: &[f64], lambdas: &[f64], tree_ntrees: Vec<usize>) -> Self {
        let enet_grid = alphas
            .iter()
            .flat_map(|&a| lambdas.iter().map(move |&l| (a, l)))
            .collect();
        Self {
            knn_ks,
            enet_grid,
            tree_ntrees,
            families: Family::ALL.to_vec(),
        }
    }

    pub fn enabled(&self, f: Family) -> bool {
        self.families.contains(&f)
    }

    pub fn machine_count(&self) -> usize {
        Family::ALL
            .iter()
            .filter(|f| self.enabled(**f))
            .map(|f| match f {
                Family::Knn => self.knn_ks.len(),
                Family::ElasticNet => self.enet_grid.len(),
                _ => self.tree_ntrees.len(),
            })
            .sum()
    }

    pub fn specs(&self) -> Vec<MachineSpec> {
        let mut out = Vec::with_capacity(self.machine_count());
        for f in Family::ALL.iter().copied().filter(|f| self.enabled(*f)) {
            match f {
                Family::Knn => out.extend(self.knn_ks.iter().map(|&k| MachineSpec::knn(k))),
                Family::ElasticNet => out.extend(
                    self.enet_grid
                        .iter()
                        .map(|&(a, l)| MachineSpec::elastic_net(a, l)),
                ),
                _ => out.extend(self.tree_ntrees.iter().map(|&t| MachineSpec::trees(f, t))),
            }
        }
        out
    }
}

/// Fits every machine of `grid` on `build`, in [`GridSpec::specs`] order.
///
/// Each tree family is grown once to its largest `ntree` and the smaller
/// machines are its prefixes, which is exactly what separate fits with the
/// same seed would give.
pub fn fit_grid(grid: &GridSpec, build: &Dataset, seed: u64) -> Result<Vec<FittedMachine>> {
    let bound = response_bound(build);
    let mut out = Vec::with_capacity(grid.machine_count());

    if grid.enabled(Family::Knn) {
        let index = KnnIndex::new(build);
        for &k in &grid.knn_ks {
            out.push(fit_knn_shared(index.clone(), k, bound)?);
        }
    }
    if grid.enabled(Family::ElasticNet) {
        let opts = ElasticNetOptions::default();
        let prep = Standardized::new(build, opts.standardize);
        let fitted: Result<Vec<_>> = grid
            .enet_grid
            .par_iter()
            .map(|&(a, l)| fit_elastic_net_prepared(&prep, a, l, &opts, bound))
            .collect();
        out.extend(fitted?);
    }
    let y = build.response().to_vec();
    for family in [Family::Bagging, Family::RandomForest, Family::Boosting] {
        if !grid.enabled(family) || grid.tree_ntrees.is_empty() {
            continue;
        }
        let kind = family.ensemble_kind().expect("tree family");
        let max = *grid.tree_ntrees.iter().max().expect("non-empty");
        let fam_seed = derive_seed(seed, &[family as u64]);
        let ensemble = Arc::new(TreeEnsemble::fit(
            build.features(),
            &y,
            kind,
            max,
            fam_seed,
            &EnsembleOptions::default(),
        )?);
        for &nt in &grid.tree_ntrees {
            if nt == 0 {
                return Err(Error::invalid("ntree must be at least 1"));
            }
            out.push(FittedMachine {
                spec: MachineSpec::trees(family, nt),
                model: Model::Trees {
                    ensemble: ensemble.clone(),
                    ntree: nt,
                },
                response_bound: bound,
            });
        }
    }
    Ok(out)
}

/// Seed that [`fit_grid`] hands to a tree family; lets callers reproduce a
/// single grid machine with [`fit_tree_ensemble`].
pub fn family_seed(grid_seed: u64, family: Family) -> u64 {
    derive_seed(grid_seed, &[family as u64])
}
