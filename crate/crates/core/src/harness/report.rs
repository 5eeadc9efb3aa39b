//! Result files and summary statistics.
//!
//! `runs.csv` is long format, one row per replication and item:
//!
//! | column | content |
//! |--------|---------|
//! | `replication` | replication index |
//! | `kind` | `seed`, `machine`, `baseline` or `aggregator` |
//! | `method` | seed stage, machine label, `Mean`, `Comb_m` or `Comb_Full` |
//! | `family` | machine family (machine rows) |
//! | `m` | projected dimension (projected aggregators) |
//! | `rmse` | test RMSE |
//! | `h` | tuned bandwidth (aggregators) |
//! | `seed` | stage seed or projection seed |
//! | `converged` | bandwidth search converged (aggregators) |
//!
//! Wall-clock seconds go to `timings.csv` (`replication,method,seconds`) so
//! that `runs.csv` is identical across reruns.
//!
//! `summary.csv` has `method,kind,runs,mean_rmse,sd_rmse,degenerate,mean_seconds`.
//! `sd_rmse` is the sample standard deviation over replications; with a single
//! replication it is 0 and `degenerate` is true.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::{
    AggregatorResult, ExperimentOutcome, MachineScore, ReplicationSeeds, RunResult, FULL_METHOD,
};
use crate::datamodel::{format_f64, read_table, write_table};
use crate::error::{Error, Result};
use crate::learners::Family;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamilyExtremes {
    pub family: Family,
    pub best: f64,
    pub worst: f64,
    pub count: usize,
}

/// Best and worst test RMSE of each family present, in family order.
pub fn family_extremes(result: &RunResult) -> Result<Vec<FamilyExtremes>> {
    if result.machines.is_empty() {
        return Err(Error::invalid("run has no machine scores"));
    }
    let mut out = Vec::new();
    for f in Family::ALL {
        let vals: Vec<f64> = result.machines.iter().filter(|s| s.family == f).map(|s| s.rmse).collect();
        if vals.is_empty() {
            continue;
        }
        out.push(FamilyExtremes {
            family: f,
            best: vals.iter().copied().fold(f64::INFINITY, f64::min),
            worst: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: vals.len(),
        });
    }
    Ok(out)
}

/// Minimum test RMSE of each family present.
pub fn best_machine_rmse(result: &RunResult) -> Result<Vec<(Family, f64)>> {
    Ok(family_extremes(result)?.into_iter().map(|e| (e.family, e.best)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub kind: String,
    pub runs: usize,
    pub mean_rmse: f64,
    pub sd_rmse: f64,
    /// Fewer than two runs, so `sd_rmse` carries no information.
    pub degenerate: bool,
    pub mean_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn get(&self, method: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Smallest mean over families of the per-run best machine.
    pub fn best_family_mean(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.kind == "best")
            .map(|r| r.mean_rmse)
            .min_by(f64::total_cmp)
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn summarize(results: &[RunResult]) -> Result<Summary> {
    if results.is_empty() {
        return Err(Error::invalid("no results to summarize"));
    }
    // (method, kind) in first-seen order, then values.
    let mut order: Vec<(String, String)> = Vec::new();
    let mut rmses: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut secs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut push = |method: String, kind: &str, v: f64, order: &mut Vec<(String, String)>| {
        if !rmses.contains_key(&method) {
            order.push((method.clone(), kind.to_string()));
        }
        rmses.entry(method).or_default().push(v);
    };
    for r in results {
        for e in family_extremes(r)? {
            push(format!("Best_{}", e.family.short()), "best", e.best, &mut order);
            push(format!("Worst_{}", e.family.short()), "worst", e.worst, &mut order);
        }
        push("Mean".into(), "baseline", r.baseline_rmse, &mut order);
        for a in &r.aggregators {
            push(a.method.clone(), "aggregator", a.rmse, &mut order);
            secs.entry(a.method.clone()).or_default().push(a.seconds);
        }
    }
    let rows = order
        .into_iter()
        .map(|(method, kind)| {
            let v = &rmses[&method];
            let (mean_rmse, sd_rmse) = mean_sd(v);
            SummaryRow {
                runs: v.len(),
                degenerate: v.len() < 2,
                mean_seconds: secs.get(&method).map(|s| mean_sd(s).0),
                method,
                kind,
                mean_rmse,
                sd_rmse,
            }
        })
        .collect();
    Ok(Summary { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: String,
    pub mean_seconds: f64,
    pub median_seconds: f64,
    /// Mean `Comb_Full` seconds over mean seconds of this method.
    pub full_over_method: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn timing_report(results: &[RunResult]) -> Result<Vec<TimingRow>> {
    if results.is_empty() {
        return Err(Error::invalid("no results for a timing report"));
    }
    let mut order = Vec::new();
    let mut secs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results {
        for a in &r.aggregators {
            if !secs.contains_key(&a.method) {
                order.push(a.method.clone());
            }
            secs.entry(a.method.clone()).or_default().push(a.seconds);
        }
    }
    let full_mean = secs.get(FULL_METHOD).map(|v| mean_sd(v).0);
    Ok(order
        .into_iter()
        .map(|method| {
            let v = secs[&method].clone();
            let mean = mean_sd(&v).0;
            TimingRow {
                full_over_method: full_mean.map(|f| f / mean),
                mean_seconds: mean,
                median_seconds: median(v),
                method,
            }
        })
        .collect())
}

const RUNS_HEADER: [&str; 9] = ["replication", "kind", "method", "family", "m", "rmse", "h", "seed", "converged"];

fn run_rows(r: &RunResult) -> Vec<[String; 9]> {
    let rep = r.replication.to_string();
    let mut rows = Vec::new();
    let s = r.seeds;
    for (name, v) in [("data", s.data), ("split", s.split), ("partition", s.partition), ("machines", s.machines)] {
        rows.push([rep.clone(), "seed".into(), name.into(), String::new(), String::new(), String::new(), String::new(), v.to_string(), String::new()]);
    }
    for m in &r.machines {
        rows.push([
            rep.clone(),
            "machine".into(),
            m.label.clone(),
            m.family.short().into(),
            String::new(),
            format_f64(m.rmse),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    rows.push([rep.clone(), "baseline".into(), "Mean".into(), String::new(), String::new(), format_f64(r.baseline_rmse), String::new(), String::new(), String::new()]);
    for a in &r.aggregators {
        rows.push([
            rep.clone(),
            "aggregator".into(),
            a.method.clone(),
            String::new(),
            a.m.map(|m| m.to_string()).unwrap_or_default(),
            format_f64(a.rmse),
            format_f64(a.h),
            a.projection_seed.map(|s| s.to_string()).unwrap_or_default(),
            a.converged.to_string(),
        ]);
    }
    rows
}

/// Writes `runs.csv` and `timings.csv` into `dir`.
pub fn save_runs(results: &[RunResult], dir: &Path) -> Result<()> {
    let rows: Vec<[String; 9]> = results.iter().flat_map(run_rows).collect();
    write_table(&dir.join("runs.csv"), &RUNS_HEADER, rows)?;
    let timings = results.iter().flat_map(|r| {
        r.aggregators
            .iter()
            .map(move |a| [r.replication.to_string(), a.method.clone(), format_f64(a.seconds)])
    });
    write_table(&dir.join("timings.csv"), &["replication", "method", "seconds"], timings)
}

fn parse<T: std::str::FromStr>(path: &Path, what: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Csv {
        path: path.to_path_buf(),
        message: format!("bad {what} `{s}`"),
    })
}

fn opt<T: std::str::FromStr>(path: &Path, what: &str, s: &str) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(path, what, s).map(Some)
    }
}

fn column(path: &Path, headers: &[String], name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Csv {
        path: path.to_path_buf(),
        message: format!("missing column `{name}`"),
    })
}

/// Reads `runs.csv` and, when present, `timings.csv` from `dir`.
pub fn load_runs(dir: &Path) -> Result<Vec<RunResult>> {
    let path = dir.join("runs.csv");
    let (headers, rows) = read_table(&path)?;
    let idx: Vec<usize> = RUNS_HEADER
        .iter()
        .map(|n| column(&path, &headers, n))
        .collect::<Result<_>>()?;
    let mut runs: BTreeMap<usize, RunResult> = BTreeMap::new();
    for row in &rows {
        let f = |k: usize| row.get(idx[k]).map(String::as_str).unwrap_or("");
        let rep: usize = parse(&path, "replication", f(0))?;
        let run = runs.entry(rep).or_insert_with(|| RunResult {
            replication: rep,
            seeds: ReplicationSeeds { data: 0, split: 0, partition: 0, machines: 0 },
            machines: Vec::new(),
            baseline_rmse: f64::NAN,
            aggregators: Vec::new(),
        });
        match f(1) {
            "seed" => {
                let v: u64 = parse(&path, "seed", f(7))?;
                match f(2) {
                    "data" => run.seeds.data = v,
                    "split" => run.seeds.split = v,
                    "partition" => run.seeds.partition = v,
                    "machines" => run.seeds.machines = v,
                    other => return Err(Error::Csv { path: path.clone(), message: format!("unknown seed stage `{other}`") }),
                }
            }
            "machine" => run.machines.push(MachineScore {
                label: f(2).to_string(),
                family: Family::parse(f(3)).ok_or_else(|| Error::Csv {
                    path: path.clone(),
                    message: format!("unknown family `{}`", f(3)),
                })?,
                rmse: parse(&path, "rmse", f(5))?,
            }),
            "baseline" => run.baseline_rmse = parse(&path, "rmse", f(5))?,
            "aggregator" => run.aggregators.push(AggregatorResult {
                method: f(2).to_string(),
                m: opt(&path, "m", f(4))?,
                rmse: parse(&path, "rmse", f(5))?,
                seconds: 0.0,
                h: parse(&path, "h", f(6))?,
                projection_seed: opt(&path, "seed", f(7))?,
                converged: parse(&path, "converged", f(8))?,
            }),
            other => return Err(Error::Csv { path: path.clone(), message: format!("unknown row kind `{other}`") }),
        }
    }
    let tpath = dir.join("timings.csv");
    if tpath.exists() {
        let (th, trows) = read_table(&tpath)?;
        let (ri, mi, si) = (column(&tpath, &th, "replication")?, column(&tpath, &th, "method")?, column(&tpath, &th, "seconds")?);
        for row in &trows {
            let rep: usize = parse(&tpath, "replication", &row[ri])?;
            let secs: f64 = parse(&tpath, "seconds", &row[si])?;
            if let Some(a) = runs
                .get_mut(&rep)
                .and_then(|r| r.aggregators.iter_mut().find(|a| a.method == row[mi]))
            {
                a.seconds = secs;
            }
        }
    }
    Ok(runs.into_values().collect())
}

/// Writes `summary.csv` and `summary.json` into `dir`.
pub fn save_summary(summary: &Summary, timings: &[TimingRow], dir: &Path) -> Result<()> {
    let rows = summary.rows.iter().map(|r| {
        [
            r.method.clone(),
            r.kind.clone(),
            r.runs.to_string(),
            format_f64(r.mean_rmse),
            format_f64(r.sd_rmse),
            r.degenerate.to_string(),
            r.mean_seconds.map(format_f64).unwrap_or_default(),
        ]
    });
    write_table(
        &dir.join("summary.csv"),
        &["method", "kind", "runs", "mean_rmse", "sd_rmse", "degenerate", "mean_seconds"],
        rows,
    )?;
    let json = serde_json::json!({
        "sd_kind": "sample standard deviation across replications",
        "methods": summary.rows,
        "timings": timings,
    });
    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&json)? + "\n").map_err(|source| Error::Io { path, source })
}

/// Writes every result file of an experiment into `dir`, creating it.
pub fn save_outputs(outcome: &ExperimentOutcome, config_text: &str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let io = |path: std::path::PathBuf| move |source| Error::Io { path, source };
    std::fs::write(dir.join("config.txt"), config_text).map_err(io(dir.join("config.txt")))?;
    save_runs(&outcome.results, dir)?;
    let failures = outcome.failures.iter().map(|e| match e {
        Error::Replication { replication, stage, seed, source } => {
            [replication.to_string(), stage.to_string(), seed.to_string(), source.to_string()]
        }
        other => [String::new(), String::new(), String::new(), other.to_string()],
    });
    write_table(&dir.join("failures.csv"), &["replication", "stage", "seed", "message"], failures)?;
    if !outcome.results.is_empty() {
        let summary = summarize(&outcome.results)?;
        let timings = timing_report(&outcome.results)?;
        save_summary(&summary, &timings, dir)?;
    }
    Ok(())
}
