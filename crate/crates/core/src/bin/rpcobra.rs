use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rpcobra::aggregator::{tune_bandwidth, AggregatorModel, KernelSpec, QueryInput, TuneMethod};
use rpcobra::datamodel::{
    format_f64, load_csv, load_prediction_matrix, rmse, save_csv, save_prediction_matrix,
};
use rpcobra::harness::{self, ExperimentConfig};
use rpcobra::learners::{build_prediction_matrix, fit_grid, Family, GridSpec};
use rpcobra::projection::{
    distortion_report, min_projection_dim, nonzero_pairs, project, sample_projection, DimensionQuery,
};
use rpcobra::simgen::{generate, SimModelSpec};
use rpcobra::{Error, Result};

#[derive(Parser)]
#[command(name = "rpcobra", version, about = "Kernel aggregation of regression machines on randomly projected predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset.
    Simulate {
        #[arg(long)]
        model: u8,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the machine grid on one dataset and write its predictions on another.
    Machines {
        /// Data the machines are fitted on.
        #[arg(long)]
        build: PathBuf,
        /// Data to predict; defaults to the build data.
        #[arg(long)]
        predict: Option<PathBuf>,
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "desk")]
        grid: String,
        /// Comma list of kNN,Elas,Bag,RF,Boost.
        #[arg(long)]
        families: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multiply a prediction matrix by a seeded Gaussian matrix.
    Project {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Print a JSON distortion summary of pairwise squared distances.
        #[arg(long)]
        report: bool,
    },
    /// Fit an aggregator on one prediction matrix and predict another.
    Aggregate(AggregateArgs),
    /// Minimum projected dimension for given accuracy and confidence (JSON).
    Bound {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        h: f64,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long)]
        r0: f64,
    },
    /// Run the full replicated protocol.
    Experiment {
        /// key = value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Override a config key, e.g. `--set replications=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute summary files from a results directory.
    Summarize {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct AggregateArgs {
    /// Machine predictions on the aggregation data.
    #[arg(long)]
    train_features: PathBuf,
    /// CSV holding the aggregation responses.
    #[arg(long)]
    train_data: PathBuf,
    #[arg(long)]
    target: String,
    /// Machine predictions to aggregate.
    #[arg(long)]
    test_features: PathBuf,
    /// CSV with true test responses; enables an RMSE line.
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Fixed bandwidth; otherwise tuned.
    #[arg(long, conflicts_with = "tune")]
    h: Option<f64>,
    #[arg(long, value_parser = ["gd", "grid"])]
    tune: Option<String>,
    /// Projected dimension; omit or pass --full for the full aggregator.
    #[arg(long, conflicts_with = "full")]
    m: Option<usize>,
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    save_model: Option<PathBuf>,
}

fn parse_grid(name: &str, families: Option<&str>) -> Result<GridSpec> {
    let mut grid = match name {
        "paper" => GridSpec::paper(),
        "desk" => GridSpec::desk(),
        other => return Err(Error::Config(format!("unknown grid `{other}`"))),
    };
    if let Some(f) = families {
        let mut fams = Vec::new();
        for t in f.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            fams.push(Family::parse(t).ok_or_else(|| Error::Config(format!("unknown family `{t}`")))?);
        }
        grid.families = Family::ALL.iter().copied().filter(|x| fams.contains(x)).collect();
    }
    Ok(grid)
}

fn write_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn write_column(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut s = format!("{header}\n");
    for v in values {
        s.push_str(&format_f64(*v));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    let train = load_prediction_matrix(&a.train_features)?;
    let data = load_csv(&a.train_data, &a.target)?;
    let test = load_prediction_matrix(&a.test_features)?;
    if data.n_rows() != train.n_rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} prediction rows but {} responses",
            train.n_rows(),
            data.n_rows()
        )));
    }
    let y = data.response();
    let (feat, g) = match a.m {
        Some(m) if !a.full => {
            let g = sample_projection(train.n_machines(), m, a.seed)?;
            (project(&train, &g)?, Some(g))
        }
        _ => (train.clone(), None),
    };
    let (kernel, trace) = match a.h {
        Some(h) => (KernelSpec::new(a.alpha, a.sigma, h)?, None),
        None => {
            let method = match a.tune.as_deref() {
                Some("grid") => TuneMethod::DefaultGrid,
                _ => TuneMethod::GradientDescent,
            };
            let (k, t) = tune_bandwidth(feat.values(), y, a.alpha, a.sigma, &method, a.seed)?;
            (k, Some(t))
        }
    };
    let model = match g {
        Some(g) => AggregatorModel::build_projected(&train, y, kernel, g)?,
        None => AggregatorModel::build_full(&train, y, kernel)?,
    };
    let pred = model.predict_batch(test.values(), QueryInput::Raw)?;
    write_column(&a.out, "prediction", pred.as_slice().expect("contiguous"))?;
    if let Some(p) = &a.save_model {
        rpcobra::aggregator::save_model(&model, p)?;
    }
    let mut report = json!({
        "h": kernel.h,
        "alpha": kernel.alpha,
        "sigma": kernel.sigma,
        "m": model.projection().map(|g| g.output_dim()),
        "rows": pred.len(),
    });
    if let Some(t) = trace {
        report["tune_converged"] = json!(t.converged);
        report["tune_iterations"] = json!(t.iterations);
    }
    if let Some(path) = &a.test_data {
        let truth = load_csv(path, &a.target)?;
        report["rmse"] = json!(rmse(pred.as_slice().expect("contiguous"), truth.response().as_slice().expect("contiguous"))?);
    }
    write_json(&report);
    Ok(())
}

fn experiment(config: Option<PathBuf>, preset: Option<String>, set: Vec<String>, out: Option<PathBuf>) -> Result<()> {
    let mut overrides = Vec::new();
    if let Some(p) = preset {
        overrides.push(("preset".to_string(), p));
    }
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(o) = out {
        overrides.push(("out".to_string(), o.display().to_string()));
    }
    let cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
            // A preset given on the command line must come before file keys.
            let mut pairs: Vec<(String, String)> =
                overrides.iter().filter(|(k, _)| k == "preset").cloned().collect();
            pairs.extend(harness::parse_kv(&text)?);
            pairs.extend(overrides);
            ExperimentConfig::from_pairs(&pairs)?
        }
        None => ExperimentConfig::from_pairs(&overrides)?,
    };
    let outcome = harness::run_experiment(&cfg)?;
    if let Some(dir) = &cfg.out_dir {
        harness::save_outputs(&outcome, &cfg.to_text(), dir)?;
    }
    for e in &outcome.failures {
        eprintln!("warning: {e}");
    }
    if outcome.results.is_empty() {
        return Err(outcome.failures.into_iter().next().unwrap_or_else(|| Error::Numerical("no replications ran".into())));
    }
    print_summary(&harness::summarize(&outcome.results)?);
    Ok(())
}

fn print_summary(s: &harness::Summary) {
    println!("{:<16} {:>4} {:>10} {:>10} {:>10}", "method", "runs", "mean_rmse", "sd_rmse", "seconds");
    for r in &s.rows {
        let secs = r.mean_seconds.map(|v| format!("{v:.4}")).unwrap_or_default();
        println!("{:<16} {:>4} {:>10.4} {:>10.4} {:>10}", r.method, r.runs, r.mean_rmse, r.sd_rmse, secs);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { model, n, d, seed, out } => {
            let mut spec = SimModelSpec::default_for(model, seed)?;
            spec.n = n.unwrap_or(spec.n);
            spec.d = d.unwrap_or(spec.d);
            save_csv(&generate(&spec)?, &out)
        }
        Command::Machines { build, predict, target, grid, families, seed, out } => {
            let grid = parse_grid(&grid, families.as_deref())?;
            let build_ds = load_csv(&build, &target)?;
            let pred_ds = match &predict {
                Some(p) => load_csv(p, &target)?,
                None => build_ds.clone(),
            };
            if pred_ds.column_names() != build_ds.column_names() {
                return Err(Error::ShapeMismatch("build and predict files have different columns".into()));
            }
            let machines = fit_grid(&grid, &build_ds, seed)?;
            let pm = build_prediction_matrix(&machines, &pred_ds)?;
            let provenance = json!({
                "build": build.display().to_string(),
                "predict": predict.as_ref().unwrap_or(&build).display().to_string(),
                "target": target,
                "seed": seed,
                "grid": grid,
            });
            save_prediction_matrix(&pm, &out, provenance)
        }
        Command::Project { features, m, seed, out, report } => {
            let pm = load_prediction_matrix(&features)?;
            let g = sample_projection(pm.n_machines(), m, seed)?;
            let p = project(&pm, &g)?;
            save_prediction_matrix(
                &p,
                &out,
                json!({"source": features.display().to_string(), "m": m, "seed": seed}),
            )?;
            if report {
                let pairs = nonzero_pairs(pm.values());
                let r = distortion_report(pm.values(), p.values(), &pairs, &[0.1, 0.2, 0.3, 0.5])?;
                write_json(&json!({
                    "pair_count": r.pair_count,
                    "max_abs_deviation": r.max_abs_deviation,
                    "fraction_exceeding": r.fraction_exceeding,
                }));
            }
            Ok(())
        }
        Command::Aggregate(a) => aggregate(a),
        Command::Bound { epsilon, delta, n, h, alpha, sigma, r0 } => {
            let b = min_projection_dim(&DimensionQuery { epsilon, delta, n, h, alpha, sigma, r0 })?;
            write_json(&serde_json::to_value(b)?);
            Ok(())
        }
        Command::Experiment { config, preset, set, out } => experiment(config, preset, set, out),
        Command::Summarize { dir } => {
            let results = harness::load_runs(&dir)?;
            let summary = harness::summarize(&results)?;
            let timings = harness::timing_report(&results)?;
            harness::save_summary(&summary, &timings, &dir)?;
            print_summary(&summary);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

