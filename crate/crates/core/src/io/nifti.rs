//! Single-file NIfTI-1 (`.nii`) for `float32` scalar volumes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridGeom, ScalarImage};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const DT_FLOAT32: i16 = 16;
const MAGIC: &[u8; 4] = b"n+1\0";

struct Reader<'a> {
    bytes: &'a [u8],
    little: bool,
}

impl Reader<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        if self.little {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    }

    fn i32(&self, off: usize) -> i32 {
        let b = self.bytes[off..off + 4].try_into().unwrap();
        if self.little {
            i32::from_le_bytes(b)
        } else {
            i32::from_be_bytes(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_bits(self.i32(off) as u32)
    }
}

pub fn read_nifti(path: &Path) -> Result<ScalarImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "{}: file too short for a NIfTI-1 header ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    let little = match (
        i32::from_le_bytes(bytes[0..4].try_into().unwrap()),
        i32::from_be_bytes(bytes[0..4].try_into().unwrap()),
    ) {
        (348, _) => true,
        (_, 348) => false,
        _ => return Err(Error::Format(format!("{}: bad sizeof_hdr", path.display()))),
    };
    let r = Reader { bytes: &bytes, little };
    if &bytes[344..348] != MAGIC {
        return Err(Error::Format(format!(
            "{}: missing NIfTI-1 single-file magic \"n+1\"",
            path.display()
        )));
    }
    let datatype = r.i16(70);
    if datatype != DT_FLOAT32 {
        return Err(Error::Format(format!(
            "{}: unsupported NIfTI datatype code {datatype} (only float32)",
            path.display()
        )));
    }
    let ndim = r.i16(40);
    if !(2..=3).contains(&ndim) {
        return Err(Error::Format(format!(
            "{}: unsupported dimensionality {ndim}",
            path.display()
        )));
    }
    let ndim = ndim as usize;
    let dims: Vec<usize> = (0..ndim).map(|a| r.i16(42 + 2 * a).max(0) as usize).collect();
    let spacing: Vec<f64> = (0..ndim)
        .map(|a| {
            let s = r.f32(80 + 4 * a).abs() as f64;
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let origin: Vec<f64> = (0..ndim).map(|a| r.f32(268 + 4 * a) as f64).collect();
    let geom = GridGeom::new(dims, spacing, origin)?;

    let offset = (r.f32(108) as usize).max(HEADER_SIZE);
    let expected = 4 * geom.len();
    let available = bytes.len().saturating_sub(offset);
    if available < expected {
        return Err(Error::PayloadLength {
            path: path.to_path_buf(),
            expected,
            actual: available,
        });
    }
    let slope = r.f32(112);
    let inter = r.f32(116);
    let scale = slope != 0.0 && (slope != 1.0 || inter != 0.0);
    let values = (0..geom.len())
        .map(|i| {
            let v = r.f32(offset + 4 * i);
            if scale {
                v * slope + inter
            } else {
                v
            }
        })
        .collect();
    ScalarImage::new(geom, values)
}

pub fn write_nifti(img: &ScalarImage, path: &Path) -> Result<()> {
    let geom = img.geom();
    let ndim = geom.ndim();
    let mut h = vec![0u8; VOX_OFFSET];
    let mut put = |off: usize, b: &[u8]| h[off..off + b.len()].copy_from_slice(b);

    put(0, &(HEADER_SIZE as i32).to_le_bytes());
    put(38, b"r");
    let mut dim = [1i16; 8];
    dim[0] = ndim as i16;
    for (a, &n) in geom.dims().iter().enumerate() {
        dim[a + 1] = i16::try_from(n)
            .map_err(|_| Error::Format(format!("dimension {n} too large for NIfTI-1")))?;
    }
    for (k, d) in dim.iter().enumerate() {
        put(40 + 2 * k, &d.to_le_bytes());
    }
    put(70, &DT_FLOAT32.to_le_bytes());
    put(72, &32i16.to_le_bytes());
    let mut pixdim = [1.0f32; 8];
    for (a, &s) in geom.spacing().iter().enumerate() {
        pixdim[a + 1] = s as f32;
    }
    for (k, p) in pixdim.iter().enumerate() {
        put(76 + 4 * k, &p.to_le_bytes());
    }
    put(108, &(VOX_OFFSET as f32).to_le_bytes());
    put(112, &1.0f32.to_le_bytes());
    // xyzt_units: millimetres
    put(123, &[2]);
    // qform and sform: scaled axes plus origin
    put(252, &1i16.to_le_bytes());
    put(254, &1i16.to_le_bytes());
    let mut origin = [0.0f32; 3];
    let mut spacing = [1.0f32; 3];
    for a in 0..ndim {
        origin[a] = geom.origin()[a] as f32;
        spacing[a] = geom.spacing()[a] as f32;
    }
    for a in 0..3 {
        put(268 + 4 * a, &origin[a].to_le_bytes());
        let mut row = [0.0f32; 4];
        row[a] = spacing[a];
        row[3] = origin[a];
        for (k, v) in row.iter().enumerate() {
            put(280 + 16 * a + 4 * k, &v.to_le_bytes());
        }
    }
    put(344, MAGIC);

    h.extend(img.values().iter().flat_map(|v| v.to_le_bytes()));
    fs::write(path, h).map_err(|e| Error::io(path, e))
}
