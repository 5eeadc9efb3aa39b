//! Experiment configuration as flat `key = value` text.
//!
//! Keys:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `preset` | `paper` or `desk` | `paper` |
//! | `model` | simulated model 1..5 | 1 |
//! | `n`, `d` | simulated sample size and dimension | model table |
//! | `csv`, `target` | real data file and response column (replaces `model`) | |
//! | `grid` | `paper` (M = 1000) or `desk` (M = 61) | preset |
//! | `families` | comma list of `kNN,Elas,Bag,RF,Boost` | all |
//! | `m_sweep` | list such as `2..9,100..900:100` | preset |
//! | `replications` | number of runs | 30 (desk 5) |
//! | `alpha`, `sigma` | kernel shape | 2, 1 |
//! | `tune` | `gd` or `grid` | `gd` |
//! | `seed` | base seed | 0 |
//! | `test_fraction` | held-out share | 0.2 |
//! | `out` | output directory | none |
//!
//! The desk preset uses `n = 200`, the desk grid, `m_sweep = 2,5,20` and five
//! replications.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::aggregator::TuneMethod;
use crate::error::{Error, Result};
use crate::learners::{Family, GridSpec};
use crate::simgen::SimModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DataSource {
    Sim { model_id: u8, n: usize, d: usize },
    Csv { path: PathBuf, target: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TuneChoice {
    GradientDescent,
    Grid,
}

impl TuneChoice {
    pub fn method(self) -> TuneMethod {
        match self {
            TuneChoice::GradientDescent => TuneMethod::GradientDescent,
            TuneChoice::Grid => TuneMethod::DefaultGrid,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(TuneChoice::GradientDescent),
            "grid" => Ok(TuneChoice::Grid),
            _ => Err(Error::Config(format!("tune must be `gd` or `grid`, got `{s}`"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            TuneChoice::GradientDescent => "gd",
            TuneChoice::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub grid_name: String,
    pub grid: GridSpec,
    pub m_sweep: Vec<usize>,
    pub replications: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub tuning: TuneChoice,
    pub seed: u64,
    pub test_fraction: f64,
    pub out_dir: Option<PathBuf>,
}

const KEYS: [&str; 16] = [
    "preset",
    "model",
    "n",
    "d",
    "csv",
    "target",
    "grid",
    "families",
    "m_sweep",
    "replications",
    "alpha",
    "sigma",
    "tune",
    "seed",
    "test_fraction",
    "out",
];

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses `2..9,100..900:100,1000` into a sorted, de-duplicated list.
pub fn parse_m_sweep(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot parse m_sweep `{s}`"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Some((lo, rest)) = tok.split_once("..") {
            let (hi, step) = match rest.split_once(':') {
                Some((h, st)) => (num(h)?, num(st)?),
                None => (num(rest)?, 1),
            };
            let lo = num(lo)?;
            if step == 0 || hi < lo {
                return Err(bad());
            }
            out.extend((lo..=hi).step_by(step));
        } else {
            out.push(num(tok)?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn format_m_sweep(m: &[usize]) -> String {
    m.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("cannot parse `{key}` value `{v}`")))
}

impl ExperimentConfig {
    /// Resolves settings in order: preset defaults, then `pairs` (later
    /// pairs win).
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
            map.insert(k.as_str(), v.as_str());
        }
        let desk = match map.get("preset").copied().unwrap_or("paper") {
            "paper" => false,
            "desk" => true,
            other => return Err(Error::Config(format!("unknown preset `{other}`"))),
        };

        let data = if let Some(path) = map.get("csv") {
            let target = map
                .get("target")
                .ok_or_else(|| Error::Config("`csv` needs a `target` column".into()))?;
            if map.contains_key("model") {
                return Err(Error::Config("`csv` and `model` are mutually exclusive".into()));
            }
            DataSource::Csv {
                path: PathBuf::from(path),
                target: target.to_string(),
            }
        } else {
            let model_id: u8 = map.get("model").map_or(Ok(1), |v| parse_num("model", v))?;
            let base = SimModelSpec::default_for(model_id, 0).map_err(|e| Error::Config(e.to_string()))?;
            let n = match map.get("n") {
                Some(v) => parse_num("n", v)?,
                None if desk => 200,
                None => base.n,
            };
            let d = map.get("d").map_or(Ok(base.d), |v| parse_num("d", v))?;
            DataSource::Sim { model_id, n, d }
        };

        let grid_name = map
            .get("grid")
            .copied()
            .unwrap_or(if desk { "desk" } else { "paper" })
            .to_string();
        let mut grid = match grid_name.as_str() {
            "paper" => GridSpec::paper(),
            "desk" => GridSpec::desk(),
            other => return Err(Error::Config(format!("unknown grid `{other}`"))),
        };
        if let Some(f) = map.get("families") {
            let mut fams = Vec::new();
            for name in f.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                let fam = Family::parse(name)
                    .ok_or_else(|| Error::Config(format!("unknown family `{name}`")))?;
                if !fams.contains(&fam) {
                    fams.push(fam);
                }
            }
            grid.families = Family::ALL.iter().copied().filter(|x| fams.contains(x)).collect();
        }

        let m_sweep = match map.get("m_sweep") {
            Some(v) => parse_m_sweep(v)?,
            None if desk => vec![2, 5, 20],
            None => parse_m_sweep("2..9,100..900:100")?,
        };
        let replications = match map.get("replications") {
            Some(v) => parse_num("replications", v)?,
            None if desk => 5,
            None => 30,
        };
        let cfg = Self {
            data,
            grid_name,
            grid,
            m_sweep,
            replications,
            alpha: map.get("alpha").map_or(Ok(2.0), |v| parse_num("alpha", v))?,
            sigma: map.get("sigma").map_or(Ok(1.0), |v| parse_num("sigma", v))?,
            tuning: map.get("tune").map_or(Ok(TuneChoice::GradientDescent), |v| TuneChoice::parse(v))?,
            seed: map.get("seed").map_or(Ok(0), |v| parse_num("seed", v))?,
            test_fraction: map
                .get("test_fraction")
                .map_or(Ok(0.2), |v| parse_num("test_fraction", v))?,
            out_dir: map.get("out").map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_kv(text)?)
    }

    /// Reads a config file, then applies `overrides` on top.
    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut pairs = parse_kv(&text)?;
        pairs.extend_from_slice(overrides);
        Self::from_pairs(&pairs)
    }

    pub fn desk() -> Self {
        Self::from_pairs(&[("preset".into(), "desk".into())]).expect("desk preset is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let big_m = self.grid.machine_count();
        if big_m == 0 {
            return Err(Error::Config("grid has no machines".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if let Some(&m) = self.m_sweep.iter().find(|&&m| m == 0 || m > big_m) {
            return Err(Error::Config(format!("m = {m} outside 1..={big_m}")));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) || !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "kernel needs alpha >= 0 and sigma > 0, got {} and {}",
                self.alpha, self.sigma
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction {} outside (0,1)", self.test_fraction)));
        }
        if let DataSource::Sim { model_id, n, d } = self.data {
            SimModelSpec { model_id, n, d, seed: 0 }
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn machine_count(&self) -> usize {
        self.grid.machine_count()
    }

    /// Canonical text form; parsing it back gives an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.data {
            DataSource::Sim { model_id, n, d } => {
                let _ = writeln!(s, "model = {model_id}\nn = {n}\nd = {d}");
            }
            DataSource::Csv { path, target } => {
                let _ = writeln!(s, "csv = {}\ntarget = {target}", path.display());
            }
        }
        let fams: Vec<&str> = self.grid.families.iter().map(|f| f.short()).collect();
        let _ = writeln!(s, "grid = {}", self.grid_name);
        let _ = writeln!(s, "families = {}", fams.join(","));
        let _ = writeln!(s, "m_sweep = {}", format_m_sweep(&self.m_sweep));
        let _ = writeln!(s, "replications = {}", self.replications);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "tune = {}", self.tuning.name());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "test_fraction = {}", self.test_fraction);
        if let Some(o) = &self.out_dir {
            let _ = writeln!(s, "out = {}", o.display());
        }
        s
    }
}
