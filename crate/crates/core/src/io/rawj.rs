//! RAWJ: a JSON header next to a little-endian `f32` payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldRole, GridGeom, ScalarImage, VectorField};

pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawjHeader {
    pub schema: u32,
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
    pub dtype: String,
    pub order: String,
    pub endian: String,
    pub components: usize,
    pub role: String,
}

impl RawjHeader {
    fn for_geom(geom: &GridGeom, components: usize, role: &str) -> Self {
        Self {
            schema: SCHEMA,
            dims: geom.dims().to_vec(),
            spacing: geom.spacing().to_vec(),
            origin: geom.origin().to_vec(),
            dtype: "f32".into(),
            order: "axis0-fastest".into(),
            endian: "little".into(),
            components,
            role: role.into(),
        }
    }

    pub fn geom(&self) -> Result<GridGeom> {
        GridGeom::new(self.dims.clone(), self.spacing.clone(), self.origin.clone())
    }

    pub fn payload_len(&self) -> usize {
        4 * self.components * self.dims.iter().product::<usize>()
    }

    fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Format(format!("unsupported RAWJ schema {}", self.schema)));
        }
        if self.dtype != "f32" {
            return Err(Error::Format(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.order != "axis0-fastest" {
            return Err(Error::Format(format!("unsupported order {:?}", self.order)));
        }
        if self.endian != "little" {
            return Err(Error::Format(format!("unsupported endianness {:?}", self.endian)));
        }
        let expected = match self.role.as_str() {
            "scalar" => 1,
            "velocity" | "displacement" => self.dims.len(),
            other => return Err(Error::Format(format!("unknown role {other:?}"))),
        };
        if self.components != expected {
            return Err(Error::Format(format!(
                "role {:?} on a {}D grid needs {expected} components, header says {}",
                self.role,
                self.dims.len(),
                self.components
            )));
        }
        Ok(())
    }
}

/// Header and payload paths for `x`, `x.json` or `x.bin`.
pub fn rawj_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut header = base.clone().into_os_string();
    header.push(".json");
    let mut payload = base.into_os_string();
    payload.push(".bin");
    (header.into(), payload.into())
}

pub fn read_header(path: &Path) -> Result<RawjHeader> {
    let (hpath, _) = rawj_paths(path);
    let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: RawjHeader =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: hpath, source })?;
    header.validate()?;
    Ok(header)
}

fn read_payload(path: &Path, header: &RawjHeader) -> Result<Vec<f32>> {
    let (_, ppath) = rawj_paths(path);
    let bytes = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let expected = header.payload_len();
    if bytes.len() != expected {
        return Err(Error::PayloadLength {
            path: ppath,
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_pair(path: &Path, header: &RawjHeader, data: &[f32]) -> Result<()> {
    let (hpath, ppath) = rawj_paths(path);
    let json = serde_json::to_string_pretty(header).expect("header serializes");
    fs::write(&hpath, json + "\n").map_err(|e| Error::io(&hpath, e))?;
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&ppath, bytes).map_err(|e| Error::io(&ppath, e))
}

pub fn read_rawj_image(path: &Path) -> Result<ScalarImage> {
    let header = read_header(path)?;
    if header.role != "scalar" {
        return Err(Error::Format(format!(
            "{} holds a {} field, expected a scalar image",
            path.display(),
            header.role
        )));
    }
    let data = read_payload(path, &header)?;
    ScalarImage::new(header.geom()?, data)
}

pub fn write_rawj_image(img: &ScalarImage, path: &Path) -> Result<()> {
    write_pair(path, &RawjHeader::for_geom(img.geom(), 1, "scalar"), img.values())
}

pub fn read_field(path: &Path) -> Result<VectorField> {
    let header = read_header(path)?;
    let role = match header.role.as_str() {
        "velocity" => FieldRole::Velocity,
        "displacement" => FieldRole::Displacement,
        other => {
            return Err(Error::Format(format!(
                "{} holds a {other} image, expected a vector field",
                path.display()
            )))
        }
    };
    let data = read_payload(path, &header)?;
    VectorField::new(header.geom()?, role, data)
}

pub fn write_field(field: &VectorField, path: &Path) -> Result<()> {
    let header = RawjHeader::for_geom(field.geom(), field.ndim(), field.role().name());
    write_pair(path, &header, field.data())
}
