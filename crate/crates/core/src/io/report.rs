//! Distance report JSON and 8-bit PGM heatmaps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::ShiftConvention;
use crate::error::{Error, Result};
use crate::grid::ScalarImage;
use crate::metric::{DistanceReport, MapStats, Reference, ReportWarnings, MASK_FRACTION};
use crate::registration::RegParams;
use crate::svf::TransportMethod;

/// Inputs that influenced a report and are echoed into it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub model_a: String,
    pub model_b: String,
    pub requested_interval: Option<[f64; 2]>,
    pub n_samples: usize,
    pub reference: Reference,
    pub registration: RegParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub schema: u32,
    pub ds: f64,
    pub dp: f64,
    pub total: f64,
    pub interval: [f64; 2],
    pub aligned_time: f64,
    pub n_time_samples: usize,
    pub mask_voxels: usize,
    pub mask_fraction: f64,
    pub reduction: String,
    pub units: String,
    pub reference: Reference,
    pub alignment_convention: ShiftConvention,
    pub transport: TransportMethod,
    pub map_frame: String,
    pub ds_stats: MapStats,
    pub dp_stats: MapStats,
    pub warnings: ReportWarnings,
    pub params: ReportParams,
}

impl ReportJson {
    pub fn new(report: &DistanceReport, params: &ReportParams) -> Self {
        Self {
            schema: 1,
            ds: report.ds,
            dp: report.dp,
            total: report.total,
            interval: [report.interval.0, report.interval.1],
            aligned_time: report.aligned_time,
            n_time_samples: report.n_time_samples,
            mask_voxels: report.mask.count(),
            mask_fraction: MASK_FRACTION,
            reduction: "masked-mean".into(),
            units: "voxel".into(),
            reference: report.reference,
            alignment_convention: report.convention,
            transport: report.transport,
            map_frame: "reference aligned shape; I velocities transported before differencing".into(),
            ds_stats: report.ds_stats.clone(),
            dp_stats: report.dp_stats.clone(),
            warnings: report.warnings.clone(),
            params: params.clone(),
        }
    }
}

pub fn write_report(report: &DistanceReport, params: &ReportParams, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&ReportJson::new(report, params)).expect("report serializes");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HeatmapScale {
    /// Map maximum becomes 255.
    Auto,
    /// This value becomes 255; larger values saturate.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub scale_max: f64,
    pub width: usize,
    pub height: usize,
    pub plane: String,
}

/// `round_half_up(255 · v / scale_max)`, saturating; everything is 0 when
/// `scale_max` is 0.
pub fn heatmap_bytes(values: &[f32], scale_max: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| {
            if scale_max <= 0.0 {
                return 0;
            }
            let x = 255.0 * v as f64 / scale_max;
            (x + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect()
}

fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn sidecar_path(pgm: &Path) -> PathBuf {
    let mut s = pgm.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Writes `path` (2D) or three central slices `<stem>_{axial,coronal,sagittal}.pgm`
/// (3D), each with a `.pgm.json` sidecar. Returns the PGM paths written.
pub fn export_heatmap(map: &ScalarImage, path: &Path, scale: HeatmapScale) -> Result<Vec<PathBuf>> {
    let scale_max = match scale {
        HeatmapScale::Auto => map.max().max(0.0),
        HeatmapScale::Fixed(s) if s.is_finite() && s >= 0.0 => s,
        HeatmapScale::Fixed(s) => {
            return Err(Error::Invalid(format!("heatmap scale must be >= 0, got {s}")))
        }
    };
    let [nx, ny, nz] = map.geom().dims3();
    let planes: Vec<(PathBuf, String, usize, usize, Vec<f32>)> = if map.geom().ndim() == 2 {
        vec![(path.to_path_buf(), "xy".into(), nx, ny, map.values().to_vec())]
    } else {
        let stem = path.with_extension("");
        let named = |suffix: &str| -> PathBuf {
            let mut s = stem.as_os_str().to_owned();
            s.push(format!("_{suffix}.pgm"));
            s.into()
        };
        let (cx, cy, cz) = (nx / 2, ny / 2, nz / 2);
        let axial = (0..ny)
            .flat_map(|y| (0..nx).map(move |x| [x, y, cz]))
            .map(|v| map.at(v) as f32)
            .collect();
        let coronal = (0..nz)
            .flat_map(|z| (0..nx).map(move |x| [x, cy, z]))
            .map(|v| map.at(v) as f32)
            .collect();
        let sagittal = (0..nz)
            .flat_map(|z| (0..ny).map(move |y| [cx, y, z]))
            .map(|v| map.at(v) as f32)
            .collect();
        vec![
            (named("axial"), "xy".into(), nx, ny, axial),
            (named("coronal"), "xz".into(), nx, nz, coronal),
            (named("sagittal"), "yz".into(), ny, nz, sagittal),
        ]
    };
    let mut written = Vec::new();
    for (p, plane, w, h, values) in planes {
        write_pgm(&p, w, h, &heatmap_bytes(&values, scale_max))?;
        let sidecar = HeatmapSidecar {
            scale_max,
            width: w,
            height: h,
            plane,
        };
        let sp = sidecar_path(&p);
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        fs::write(&sp, json + "\n").map_err(|e| Error::io(&sp, e))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_mapping() {
        assert_eq!(heatmap_bytes(&[0.0, 0.0], 0.0), vec![0, 0]);
        assert_eq!(heatmap_bytes(&[1.5, 1.5], 1.5), vec![255, 255]);
        assert_eq!(heatmap_bytes(&[1.5], 3.0), vec![128]);
        assert_eq!(heatmap_bytes(&[10.0, -1.0], 2.0), vec![255, 0]);
    }
}
