//! End-to-end experiment protocol: split, fit the machine grid, aggregate on
//! full and projected predictions, score on the test part, replicate.

mod config;
mod report;

pub use config::{parse_kv, parse_m_sweep, DataSource, ExperimentConfig, TuneChoice};
pub use report::{
    best_machine_rmse, family_extremes, load_runs, save_outputs, save_runs, save_summary, summarize,
    timing_report, FamilyExtremes, Summary, SummaryRow, TimingRow,
};

use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;

use crate::aggregator::{tune_bandwidth, AggregatorModel, QueryInput};
use crate::datamodel::{load_csv, partition_train, rmse, split, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::learners::{build_prediction_matrix, fit_grid, Family};
use crate::projection::{project, sample_projection};
use crate::seed::{derive_seed, stage};
use crate::simgen::{generate, SimModelSpec};

pub const FULL_METHOD: &str = "Comb_Full";

pub fn projected_method(m: usize) -> String {
    format!("Comb_{m}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReplicationSeeds {
    pub data: u64,
    pub split: u64,
    pub partition: u64,
    pub machines: u64,
}

impl ReplicationSeeds {
    pub fn derive(base: u64, replication: usize) -> Self {
        let r = replication as u64;
        Self {
            data: derive_seed(base, &[stage::DATA, r]),
            split: derive_seed(base, &[stage::SPLIT, r]),
            partition: derive_seed(base, &[stage::PARTITION, r]),
            machines: derive_seed(base, &[stage::MACHINES, r]),
        }
    }
}

/// Projection seed of aggregator `m` in replication `r`.
pub fn projection_seed(base: u64, replication: usize, m: usize) -> u64 {
    derive_seed(base, &[stage::PROJECTION, replication as u64, m as u64])
}

/// Tuning seed; `m = 0` stands for the full aggregator.
pub fn tuning_seed(base: u64, replication: usize, m: usize) -> u64 {
    derive_seed(base, &[stage::TUNING, replication as u64, m as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MachineScore {
    pub label: String,
    pub family: Family,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatorResult {
    pub method: String,
    /// `None` for the full aggregator.
    pub m: Option<usize>,
    pub rmse: f64,
    /// Tuning plus prediction (plus projection for `Comb_m`).
    pub seconds: f64,
    pub h: f64,
    pub projection_seed: Option<u64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub replication: usize,
    pub seeds: ReplicationSeeds,
    pub machines: Vec<MachineScore>,
    /// Test RMSE of predicting the training mean everywhere.
    pub baseline_rmse: f64,
    pub aggregators: Vec<AggregatorResult>,
}

impl RunResult {
    pub fn aggregator(&self, method: &str) -> Option<&AggregatorResult> {
        self.aggregators.iter().find(|a| a.method == method)
    }

    /// Aggregators whose test RMSE is not finite or exceeds ten times the
    /// constant-mean RMSE.
    pub fn sanity_violations(&self) -> Vec<&AggregatorResult> {
        self.aggregators
            .iter()
            .filter(|a| !(a.rmse.is_finite() && a.rmse <= 10.0 * self.baseline_rmse))
            .collect()
    }
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    /// Successful replications in index order.
    pub results: Vec<RunResult>,
    /// One [`Error::Replication`] per failed replication.
    pub failures: Vec<Error>,
}

fn load_base(cfg: &ExperimentConfig) -> Result<Option<Dataset>> {
    match &cfg.data {
        DataSource::Csv { path, target } => load_csv(path, target).map(Some),
        DataSource::Sim { .. } => Ok(None),
    }
}

/// Runs every replication; failures are collected rather than aborting.
/// Fails outright only if a CSV source cannot be loaded.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let base = load_base(cfg)?;
    let outcomes: Vec<Result<RunResult>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| replicate(cfg, base.as_ref(), r))
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(e) => failures.push(e),
        }
    }
    Ok(ExperimentOutcome { results, failures })
}

/// Runs replication `r` alone, reproducing exactly what
/// [`run_experiment`] computes for it.
pub fn run_replication(cfg: &ExperimentConfig, replication: usize) -> Result<RunResult> {
    cfg.validate()?;
    let base = load_base(cfg)?;
    replicate(cfg, base.as_ref(), replication)
}

fn replicate(cfg: &ExperimentConfig, base: Option<&Dataset>, r: usize) -> Result<RunResult> {
    let seeds = ReplicationSeeds::derive(cfg.seed, r);
    let fail = |stage: &'static str, seed: u64| {
        move |e: Error| Error::Replication {
            replication: r,
            stage,
            seed,
            source: Box::new(e),
        }
    };

    let owned;
    let data = match (&cfg.data, base) {
        (_, Some(ds)) => ds,
        (DataSource::Sim { model_id, n, d }, None) => {
            owned = generate(&SimModelSpec {
                model_id: *model_id,
                n: *n,
                d: *d,
                seed: seeds.data,
            })
            .map_err(fail("data", seeds.data))?;
            &owned
        }
        (DataSource::Csv { .. }, None) => unreachable!("csv data is loaded up front"),
    };

    let (train, test) = split(
        data,
        &SplitSpec {
            test_fraction: cfg.test_fraction,
            seed: seeds.split,
        },
    )
    .map_err(fail("split", seeds.split))?;
    let part = partition_train(&train, seeds.partition).map_err(fail("partition", seeds.partition))?;
    let (build, agg) = part.apply(&train);

    let machines = fit_grid(&cfg.grid, &build, seeds.machines).map_err(fail("machines", seeds.machines))?;
    let agg_pm = build_prediction_matrix(&machines, &agg).map_err(fail("predict", seeds.machines))?;
    let test_pm = build_prediction_matrix(&machines, &test).map_err(fail("predict", seeds.machines))?;
    let y_test = test.response().to_vec();

    let mut scores = Vec::with_capacity(machines.len());
    for (j, mach) in machines.iter().enumerate() {
        let pred = test_pm.column(j).to_vec();
        scores.push(MachineScore {
            label: mach.label().to_string(),
            family: mach.family(),
            rmse: rmse(&pred, &y_test).map_err(fail("score", seeds.machines))?,
        });
    }
    let train_mean = train.response().mean().unwrap_or(0.0);
    let baseline_rmse = rmse(&vec![train_mean; y_test.len()], &y_test).map_err(fail("score", seeds.split))?;

    let method = cfg.tuning.method();
    let y_agg = agg.response();
    let mut aggregators = Vec::with_capacity(cfg.m_sweep.len() + 1);

    for &m in &cfg.m_sweep {
        let pseed = projection_seed(cfg.seed, r, m);
        let tseed = tuning_seed(cfg.seed, r, m);
        let start = Instant::now();
        let g = sample_projection(agg_pm.n_machines(), m, pseed).map_err(fail("projection", pseed))?;
        let projected = project(&agg_pm, &g).map_err(fail("projection", pseed))?;
        let (kernel, trace) = tune_bandwidth(projected.values(), y_agg, cfg.alpha, cfg.sigma, &method, tseed)
            .map_err(fail("tune", tseed))?;
        let model = AggregatorModel::from_parts(projected.into_values(), y_agg.to_owned(), kernel, Some(g))
            .map_err(fail("aggregate", pseed))?;
        let pred = model
            .predict_batch(test_pm.values(), QueryInput::Raw)
            .map_err(fail("aggregate", pseed))?;
        let seconds = start.elapsed().as_secs_f64();
        aggregators.push(AggregatorResult {
            method: projected_method(m),
            m: Some(m),
            rmse: rmse(pred.as_slice().expect("contiguous"), &y_test).map_err(fail("score", pseed))?,
            seconds,
            h: kernel.h,
            projection_seed: Some(pseed),
            converged: trace.converged,
        });
    }

    let tseed = tuning_seed(cfg.seed, r, 0);
    let start = Instant::now();
    let (kernel, trace) = tune_bandwidth(agg_pm.values(), y_agg, cfg.alpha, cfg.sigma, &method, tseed)
        .map_err(fail("tune", tseed))?;
    let full = AggregatorModel::build_full(&agg_pm, y_agg, kernel).map_err(fail("aggregate", tseed))?;
    let pred: Array1<f64> = full
        .predict_batch(test_pm.values(), QueryInput::Raw)
        .map_err(fail("aggregate", tseed))?;
    let seconds = start.elapsed().as_secs_f64();
    aggregators.push(AggregatorResult {
        method: FULL_METHOD.to_string(),
        m: None,
        rmse: rmse(pred.as_slice().expect("contiguous"), &y_test).map_err(fail("score", tseed))?,
        seconds,
        h: kernel.h,
        projection_seed: None,
        converged: trace.converged,
    });

    Ok(RunResult {
        replication: r,
        seeds,
        machines: scores,
        baseline_rmse,
        aggregators,
    })
}
