//! Flat parameter file: `u64` little-endian header length, a JSON header
//! with the shape table, then every parameter as `f64` little-endian in
//! header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, Params};
use super::tape::Mat;
use super::{ModelConfig, ToyError};

const FORMAT: &str = "gazecxr-toy-params";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ModelConfig,
    pub shapes: Vec<ShapeEntry>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ToyError + '_ {
    move |source| ToyError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<(), ToyError> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        seed: model.cfg.seed,
        config_hash: model.cfg.hash(),
        config: model.cfg.clone(),
        shapes: model
            .params
            .names()
            .iter()
            .zip(model.params.mats())
            .map(|(n, m)| ShapeEntry {
                name: n.clone(),
                rows: m.rows,
                cols: m.cols,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ToyError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(8 + json.len() + 8 * model.params.scalar_count());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for m in model.params.mats() {
        for v in &m.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(&buf).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ToyError> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    let bad = |m: &str| ToyError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(8..8usize.saturating_add(hlen))
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    if header.format != FORMAT {
        return Err(bad(&format!("unknown format `{}`", header.format)));
    }
    if header.config.hash() != header.config_hash || header.config.seed != header.seed {
        return Err(bad("config hash does not match the stored config"));
    }
    let template = Model::new(header.config.clone())?;
    let expected: Vec<ShapeEntry> = template
        .params
        .names()
        .iter()
        .zip(template.params.mats())
        .map(|(n, m)| ShapeEntry {
            name: n.clone(),
            rows: m.rows,
            cols: m.cols,
        })
        .collect();
    if expected != header.shapes {
        return Err(bad("shape table does not match the config"));
    }
    let values = &bytes[8 + hlen..];
    if values.len() != 8 * template.params.scalar_count() {
        return Err(bad(&format!(
            "expected {} values, found {} bytes",
            template.params.scalar_count(),
            values.len()
        )));
    }
    let mut it = values
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mats = header
        .shapes
        .iter()
        .map(|s| Mat::from_vec(s.rows, s.cols, it.by_ref().take(s.rows * s.cols).collect()))
        .collect();
    let names = header.shapes.iter().map(|s| s.name.clone()).collect();
    Model::from_params(header.config, Params::from_parts(names, mats))
}
