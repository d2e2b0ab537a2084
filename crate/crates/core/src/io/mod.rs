//! File formats: RAWJ and NIfTI-1 images, model directories, reports and heatmaps.

pub mod nifti;
pub mod rawj;
pub mod report;
pub mod store;

use std::path::Path;

use crate::error::Result;
use crate::grid::ScalarImage;

pub use nifti::{read_nifti, write_nifti};
pub use rawj::{read_field, write_field, RawjHeader};
pub use report::{export_heatmap, write_report, HeatmapScale, ReportParams};
pub use store::{load_model, save_model, ModelManifest};

fn is_nifti(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("nii")
}

/// Reads a `.nii` volume or a RAWJ scalar image (given as `x`, `x.json` or `x.bin`).
pub fn read_image(path: &Path) -> Result<ScalarImage> {
    if is_nifti(path) {
        read_nifti(path)
    } else {
        rawj::read_rawj_image(path)
    }
}

pub fn write_image(img: &ScalarImage, path: &Path) -> Result<()> {
    if is_nifti(path) {
        write_nifti(img, path)
    } else {
        rawj::write_rawj_image(img, path)
    }
}
