//! Model directories: `manifest.json` plus RAWJ payloads for the shape and
//! both path directions.

use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::rawj::{self, read_field, read_rawj_image, write_field, write_rawj_image};
use crate::model::{GammaCurve, PathModel, Provenance, TsModel};
use crate::registration::RegParams;

pub const MANIFEST: &str = "manifest.json";
pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub velocity: String,
    pub gamma: Vec<[f64; 2]>,
    pub domain: [f64; 2],
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub schema: u32,
    pub m: f64,
    pub range: [f64; 2],
    pub frame_times: Vec<f64>,
    pub provenance: Provenance,
    pub shape: String,
    pub future: PathEntry,
    pub past: PathEntry,
    pub registration: Option<RegParams>,
    pub warnings: Vec<String>,
}

fn entry(p: &PathModel, file: &str) -> PathEntry {
    PathEntry {
        velocity: file.into(),
        gamma: p.gamma.knots().iter().map(|&(t, g)| [t, g]).collect(),
        domain: [p.domain.0, p.domain.1],
        degenerate: p.degenerate,
    }
}

pub fn save_model(model: &TsModel, dir: &Path) -> Result<()> {
    model.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rawj_image(&model.shape, &dir.join("shape"))?;
    write_field(&model.future.velocity, &dir.join("v_future"))?;
    write_field(&model.past.velocity, &dir.join("v_past"))?;
    let manifest = ModelManifest {
        schema: SCHEMA,
        m: model.m,
        range: [model.range.0, model.range.1],
        frame_times: model.frame_times.clone(),
        provenance: model.provenance,
        shape: "shape.json".into(),
        future: entry(&model.future, "v_future.json"),
        past: entry(&model.past, "v_past.json"),
        registration: model.reg.clone(),
        warnings: model.warnings.clone(),
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Resolves a manifest-relative payload, refusing paths that leave the directory.
fn payload(dir: &Path, rel: &str) -> Result<PathBuf> {
    let p = Path::new(rel);
    if p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(Error::Format(format!(
            "manifest payload path {rel:?} must be relative to the model directory"
        )));
    }
    let full = dir.join(p);
    let (header, data) = rawj::rawj_paths(&full);
    for f in [&header, &data] {
        if !f.exists() {
            return Err(Error::Format(format!("missing model payload {}", f.display())));
        }
    }
    Ok(full)
}

fn load_path(dir: &Path, e: &PathEntry, m: f64) -> Result<PathModel> {
    let velocity = read_field(&payload(dir, &e.velocity)?)?;
    let knots = e.gamma.iter().map(|k| (k[0], k[1])).collect();
    Ok(PathModel {
        velocity,
        gamma: GammaCurve::new(knots, m)?,
        domain: (e.domain[0], e.domain[1]),
        degenerate: e.degenerate,
    })
}

pub fn load_model(dir: &Path) -> Result<TsModel> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|source| Error::Json { path, source })?;
    if manifest.schema != SCHEMA {
        return Err(Error::Format(format!(
            "unsupported model schema {} (expected {SCHEMA})",
            manifest.schema
        )));
    }
    let shape = read_rawj_image(&payload(dir, &manifest.shape)?)?;
    let model = TsModel {
        shape,
        m: manifest.m,
        future: load_path(dir, &manifest.future, manifest.m)?,
        past: load_path(dir, &manifest.past, manifest.m)?,
        range: (manifest.range[0], manifest.range[1]),
        provenance: manifest.provenance,
        frame_times: manifest.frame_times,
        reg: manifest.registration,
        warnings: manifest.warnings,
    };
    model.validate()?;
    Ok(model)
}
