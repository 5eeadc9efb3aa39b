//! JSON container for fitted aggregators. Floats are stored as the hex of
//! their IEEE-754 bits so a reload predicts bit-for-bit.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AggregatorModel, KernelSpec};
use crate::error::{Error, Result};
use crate::projection::{sample_projection, ProjectionMatrix};

const FORMAT: &str = "rpcobra-aggregator";
const VERSION: u32 = 1;

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Serde(format!("bad hex double `{s}`")))
}

fn unhex_all(v: &[String]) -> Result<Vec<f64>> {
    v.iter().map(|s| unhex(s)).collect()
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    alpha: String,
    sigma: String,
    h: String,
}

#[derive(Serialize, Deserialize)]
struct ProjectionRepr {
    input_dim: usize,
    output_dim: usize,
    seed: Option<u64>,
    /// Present only for matrices that were not sampled from a seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    format: String,
    version: u32,
    kernel: KernelRepr,
    n_rows: usize,
    width: usize,
    features: Vec<String>,
    responses: Vec<String>,
    projection: Option<ProjectionRepr>,
}

pub fn model_to_json(model: &AggregatorModel) -> serde_json::Value {
    let k = model.kernel();
    let projection = model.projection().map(|g| ProjectionRepr {
        input_dim: g.input_dim(),
        output_dim: g.output_dim(),
        seed: g.seed(),
        values: match g.seed() {
            Some(_) => None,
            None => Some(g.values().iter().map(|v| hex(*v)).collect()),
        },
    });
    let repr = ModelRepr {
        format: FORMAT.into(),
        version: VERSION,
        kernel: KernelRepr {
            alpha: hex(k.alpha),
            sigma: hex(k.sigma),
            h: hex(k.h),
        },
        n_rows: model.features().nrows(),
        width: model.width(),
        features: model.features().iter().map(|v| hex(*v)).collect(),
        responses: model.responses().iter().map(|v| hex(*v)).collect(),
        projection,
    };
    serde_json::to_value(repr).expect("plain data serializes")
}

pub fn model_from_json(value: serde_json::Value) -> Result<AggregatorModel> {
    let repr: ModelRepr = serde_json::from_value(value)?;
    if repr.format != FORMAT || repr.version != VERSION {
        return Err(Error::Serde(format!(
            "unsupported model format {} v{}",
            repr.format, repr.version
        )));
    }
    let kernel = KernelSpec::new(
        unhex(&repr.kernel.alpha)?,
        unhex(&repr.kernel.sigma)?,
        unhex(&repr.kernel.h)?,
    )?;
    let features = Array2::from_shape_vec((repr.n_rows, repr.width), unhex_all(&repr.features)?)
        .map_err(|e| Error::Serde(format!("feature block: {e}")))?;
    let responses = Array1::from(unhex_all(&repr.responses)?);
    let projection = match repr.projection {
        None => None,
        Some(p) => Some(match (p.seed, p.values) {
            (_, Some(v)) => {
                let g = Array2::from_shape_vec((p.input_dim, p.output_dim), unhex_all(&v)?)
                    .map_err(|e| Error::Serde(format!("projection block: {e}")))?;
                ProjectionMatrix::from_values(g)?
            }
            (Some(seed), None) => sample_projection(p.input_dim, p.output_dim, seed)?,
            (None, None) => return Err(Error::Serde("projection has neither seed nor values".into())),
        }),
    };
    AggregatorModel::from_parts(features, responses, kernel, projection)
}

pub fn save_model(model: &AggregatorModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&model_to_json(model))?;
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<AggregatorModel> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    model_from_json(serde_json::from_str(&text)?)
}
