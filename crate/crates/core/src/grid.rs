//! Regular-grid containers and the sampling, warping and reduction
//! primitives the rest of the crate builds on.
//!
//! Voxel data is stored as `f32` in axis-0-fastest order. Arithmetic is done
//! in `f64` and rounded once when a result is stored. Vector components are
//! always in voxel units; continuous positions are voxel coordinates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or vector padded to three components. 2D data leaves the last one at zero.
pub type Vec3 = [f64; 3];

/// Physical layout of a regular 2D or 3D grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeom {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
}

impl GridGeom {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>, origin: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::Geometry(format!(
                "grids must be 2D or 3D, got {} axes",
                dims.len()
            )));
        }
        if spacing.len() != dims.len() || origin.len() != dims.len() {
            return Err(Error::Geometry(format!(
                "dims/spacing/origin lengths disagree ({}, {}, {})",
                dims.len(),
                spacing.len(),
                origin.len()
            )));
        }
        if let Some(n) = dims.iter().find(|&&n| n < 2) {
            return Err(Error::Geometry(format!("every dimension must be >= 2, got {n}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Geometry(format!("spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Geometry(format!("origin must be finite, got {origin:?}")));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    /// Unit spacing, origin at zero.
    pub fn with_dims(dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), vec![1.0; dims.len()], vec![0.0; dims.len()])
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims3(&self) -> [usize; 3] {
        [
            self.dims[0],
            self.dims[1],
            self.dims.get(2).copied().unwrap_or(1),
        ]
    }

    #[inline]
    pub fn linear_index(&self, i: [usize; 3]) -> usize {
        let [nx, ny, _] = self.dims3();
        i[0] + nx * (i[1] + ny * i[2])
    }

    #[inline]
    pub fn voxel(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims3();
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub(crate) fn check_same(&self, other: &GridGeom, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::Geometry(format!(
                "{what}: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// One intensity per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarImage {
    geom: GridGeom,
    values: Vec<f32>,
}

impl ScalarImage {
    pub fn new(geom: GridGeom, values: Vec<f32>) -> Result<Self> {
        if values.len() != geom.len() {
            return Err(Error::Geometry(format!(
                "expected {} values, got {}",
                geom.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("image contains non-finite values".into()));
        }
        Ok(Self { geom, values })
    }

    pub fn filled(geom: GridGeom, value: f32) -> Self {
        let values = vec![value; geom.len()];
        Self { geom, values }
    }

    /// Builds an image by evaluating `f` at every voxel index.
    pub fn from_fn(geom: GridGeom, f: impl Fn([usize; 3]) -> f64 + Sync) -> Result<Self> {
        let values = (0..geom.len())
            .into_par_iter()
            .map(|i| f(geom.voxel(i)) as f32)
            .collect();
        Self::new(geom, values)
    }

    pub(crate) fn from_f64(geom: GridGeom, values: Vec<f64>) -> Result<Self> {
        Self::new(geom, values.into_iter().map(|v| v as f32).collect())
    }

    pub fn geom(&self) -> &GridGeom {
        &self.geom
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx] as f64
    }

    pub fn at(&self, voxel: [usize; 3]) -> f64 {
        self.get(self.geom.linear_index(voxel))
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// Population variance of the intensities.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.values
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / self.values.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldRole {
    Velocity,
    Displacement,
}

impl FieldRole {
    pub fn name(self) -> &'static str {
        match self {
            FieldRole::Velocity => "velocity",
            FieldRole::Displacement => "displacement",
        }
    }
}

/// One d-vector per voxel, components interleaved, in voxel units.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    geom: GridGeom,
    role: FieldRole,
    data: Vec<f32>,
}

impl VectorField {
    pub fn new(geom: GridGeom, role: FieldRole, data: Vec<f32>) -> Result<Self> {
        let expected = geom.len() * geom.ndim();
        if data.len() != expected {
            return Err(Error::Geometry(format!(
                "expected {expected} vector components, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("vector field contains non-finite values".into()));
        }
        Ok(Self { geom, role, data })
    }

    pub fn zeros(geom: GridGeom, role: FieldRole) -> Self {
        let data = vec![0.0; geom.len() * geom.ndim()];
        Self { geom, role, data }
    }

    /// Builds a field from padded `f64` vectors; trailing components beyond
    /// the grid dimension are dropped.
    pub fn from_vectors(geom: GridGeom, role: FieldRole, vectors: &[Vec3]) -> Result<Self> {
        let d = geom.ndim();
        let mut data = Vec::with_capacity(vectors.len() * d);
        for v in vectors {
            data.extend(v[..d].iter().map(|&c| c as f32));
        }
        Self::new(geom, role, data)
    }

    pub fn from_fn(
        geom: GridGeom,
        role: FieldRole,
        f: impl Fn([usize; 3]) -> Vec3 + Sync,
    ) -> Result<Self> {
        let vectors: Vec<Vec3> = (0..geom.len())
            .into_par_iter()
            .map(|i| f(geom.voxel(i)))
            .collect();
        Self::from_vectors(geom, role, &vectors)
    }

    pub fn geom(&self) -> &GridGeom {
        &self.geom
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn ndim(&self) -> usize {
        self.geom.ndim()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn vector(&self, idx: usize) -> Vec3 {
        let d = self.ndim();
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate().take(d) {
            *o = self.data[idx * d + c] as f64;
        }
        out
    }

    pub fn vectors(&self) -> Vec<Vec3> {
        (0..self.geom.len()).map(|i| self.vector(i)).collect()
    }

    pub(crate) fn expect_role(&self, role: FieldRole) -> Result<()> {
        if self.role != role {
            return Err(Error::Role {
                expected: role.name(),
                actual: self.role.name(),
            });
        }
        Ok(())
    }

    /// `s * self`, keeping the role.
    pub fn scaled(&self, s: f64) -> VectorField {
        let data = self.data.iter().map(|&c| (c as f64 * s) as f32).collect();
        Self {
            geom: self.geom.clone(),
            role: self.role,
            data,
        }
    }

    /// Largest per-voxel Euclidean norm.
    pub fn max_norm(&self) -> f64 {
        (0..self.geom.len())
            .map(|i| norm(self.vector(i)))
            .fold(0.0, f64::max)
    }

    /// Sum over voxels of per-voxel dot products.
    pub fn dot(&self, other: &VectorField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }

    /// Flat L2 norm over every component of every voxel.
    pub fn l2(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Boolean voxel selection used as a reduction domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    geom: GridGeom,
    values: Vec<bool>,
}

impl Mask {
    pub fn new(geom: GridGeom, values: Vec<bool>) -> Result<Self> {
        if values.len() != geom.len() {
            return Err(Error::Geometry(format!(
                "mask expects {} voxels, got {}",
                geom.len(),
                values.len()
            )));
        }
        Ok(Self { geom, values })
    }

    pub fn full(geom: GridGeom) -> Self {
        let values = vec![true; geom.len()];
        Self { geom, values }
    }

    pub fn geom(&self) -> &GridGeom {
        &self.geom
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&b| b).count()
    }
}

#[inline]
pub fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a + f * (b - a)
}

#[derive(Clone, Copy)]
struct AxisWeights {
    i0: usize,
    i1: usize,
    f: f64,
}

#[inline]
fn axis_weights(p: f64, n: usize) -> AxisWeights {
    let q = p.clamp(0.0, (n - 1) as f64);
    let i0 = q.floor() as usize;
    if i0 + 1 >= n {
        AxisWeights {
            i0: n - 1,
            i1: n - 1,
            f: 0.0,
        }
    } else {
        AxisWeights {
            i0,
            i1: i0 + 1,
            f: q - i0 as f64,
        }
    }
}

/// Multilinear stencil at a continuous voxel position, clamped to the grid.
#[derive(Clone, Copy)]
struct Stencil {
    x: AxisWeights,
    y: AxisWeights,
    z: AxisWeights,
    nx: usize,
    nxy: usize,
}

impl Stencil {
    #[inline]
    fn new(dims: [usize; 3], p: Vec3) -> Self {
        Self {
            x: axis_weights(p[0], dims[0]),
            y: axis_weights(p[1], dims[1]),
            z: axis_weights(p[2], dims[2]),
            nx: dims[0],
            nxy: dims[0] * dims[1],
        }
    }

    /// Nested lerps, so constant data and lattice points are reproduced exactly.
    #[inline]
    fn apply(&self, get: impl Fn(usize) -> f64) -> f64 {
        let plane = |k: usize| {
            let row = |j: usize| {
                let base = j * self.nx + k * self.nxy;
                lerp(get(base + self.x.i0), get(base + self.x.i1), self.x.f)
            };
            lerp(row(self.y.i0), row(self.y.i1), self.y.f)
        };
        let c0 = plane(self.z.i0);
        if self.z.f == 0.0 {
            c0
        } else {
            lerp(c0, plane(self.z.i1), self.z.f)
        }
    }
}

fn check_point(p: &[f64], ndim: usize) -> Result<Vec3> {
    if p.len() != ndim {
        return Err(Error::Geometry(format!(
            "point has {} coordinates, grid has {ndim} axes",
            p.len()
        )));
    }
    if p.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("non-finite sample position {p:?}")));
    }
    let mut out = [0.0; 3];
    out[..ndim].copy_from_slice(p);
    Ok(out)
}

#[inline]
pub(crate) fn sample_scalar(img: &ScalarImage, p: Vec3) -> f64 {
    Stencil::new(img.geom.dims3(), p).apply(|i| img.values[i] as f64)
}

#[inline]
pub(crate) fn sample_vector(field: &VectorField, p: Vec3) -> Vec3 {
    let st = Stencil::new(field.geom.dims3(), p);
    let d = field.ndim();
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate().take(d) {
        *o = st.apply(|i| field.data[i * d + c] as f64);
    }
    out
}

/// Multilinear interpolation at a continuous voxel coordinate; positions
/// outside the grid are clamped to the boundary.
pub fn interp_scalar(img: &ScalarImage, p: &[f64]) -> Result<f64> {
    let p = check_point(p, img.geom.ndim())?;
    Ok(sample_scalar(img, p))
}

/// Componentwise [`interp_scalar`]. The returned vector has one entry per axis.
pub fn interp_vector(field: &VectorField, p: &[f64]) -> Result<Vec<f64>> {
    let p = check_point(p, field.ndim())?;
    Ok(sample_vector(field, p)[..field.ndim()].to_vec())
}

#[inline]
fn position(voxel: [usize; 3], offset: Vec3) -> Vec3 {
    [
        voxel[0] as f64 + offset[0],
        voxel[1] as f64 + offset[1],
        voxel[2] as f64 + offset[2],
    ]
}

/// Pull-back of `img` through `id + disp`: `out(x) = img(x + disp(x))`.
pub fn warp_image(img: &ScalarImage, disp: &VectorField) -> Result<ScalarImage> {
    img.geom.check_same(&disp.geom, "warp_image")?;
    disp.expect_role(FieldRole::Displacement)?;
    let geom = &img.geom;
    let values = (0..geom.len())
        .into_par_iter()
        .map(|i| sample_scalar(img, position(geom.voxel(i), disp.vector(i))) as f32)
        .collect();
    ScalarImage::new(geom.clone(), values)
}

/// Resamples every component of `field` at `x + disp(x)`, keeping the role of `field`.
pub(crate) fn resample_field(field: &VectorField, disp: &VectorField) -> Result<VectorField> {
    field.geom.check_same(&disp.geom, "resample_field")?;
    let geom = &field.geom;
    let vectors: Vec<Vec3> = (0..geom.len())
        .into_par_iter()
        .map(|i| sample_vector(field, position(geom.voxel(i), disp.vector(i))))
        .collect();
    VectorField::from_vectors(geom.clone(), field.role, &vectors)
}

/// Displacement of `outer ∘ inner`: `inner(x) + outer(x + inner(x))`.
pub fn compose_disp(outer: &VectorField, inner: &VectorField) -> Result<VectorField> {
    outer.geom.check_same(&inner.geom, "compose_disp")?;
    outer.expect_role(FieldRole::Displacement)?;
    inner.expect_role(FieldRole::Displacement)?;
    let geom = &outer.geom;
    let vectors: Vec<Vec3> = (0..geom.len())
        .into_par_iter()
        .map(|i| {
            let u = inner.vector(i);
            let w = sample_vector(outer, position(geom.voxel(i), u));
            [u[0] + w[0], u[1] + w[1], u[2] + w[2]]
        })
        .collect();
    VectorField::from_vectors(geom.clone(), FieldRole::Displacement, &vectors)
}

/// Voxelwise Euclidean norm of a vector field.
pub fn magnitude_map(field: &VectorField) -> ScalarImage {
    let d = field.ndim();
    let values = field
        .data
        .chunks_exact(d)
        .map(|v| {
            v.iter()
                .map(|&c| c as f64 * c as f64)
                .sum::<f64>()
                .sqrt() as f32
        })
        .collect();
    ScalarImage {
        geom: field.geom.clone(),
        values,
    }
}

pub fn mean_over_mask(map: &ScalarImage, mask: &Mask) -> Result<f64> {
    map.geom.check_same(&mask.geom, "mean_over_mask")?;
    let (sum, count) = map
        .values
        .iter()
        .zip(&mask.values)
        .filter(|(_, &m)| m)
        .fold((0.0f64, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
    if count == 0 {
        return Err(Error::Invalid("reduction mask selects no voxels".into()));
    }
    Ok(sum / count as f64)
}

/// Union of the two images' above-threshold voxels, each thresholded at
/// `frac` times its own maximum.
pub fn foreground_mask(a: &ScalarImage, b: &ScalarImage, frac: f64) -> Result<Mask> {
    a.geom.check_same(&b.geom, "foreground_mask")?;
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::Invalid(format!(
            "foreground fraction must lie in [0, 1), got {frac}"
        )));
    }
    let ta = frac * a.max();
    let tb = frac * b.max();
    let values: Vec<bool> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&va, &vb)| va as f64 > ta || vb as f64 > tb)
        .collect();
    if !values.iter().any(|&v| v) {
        return Err(Error::Invalid(
            "foreground mask is empty; images are degenerate".into(),
        ));
    }
    Mask::new(a.geom.clone(), values)
}

/// Central differences in the interior, one-sided at the boundary, along every
/// grid axis. Axis entries beyond the grid dimension are zero.
pub(crate) fn gradient_channel(geom: &GridGeom, get: impl Fn(usize) -> f64 + Sync) -> Vec<Vec3> {
    let dims = geom.dims3();
    let ndim = geom.ndim();
    let strides = [1, dims[0], dims[0] * dims[1]];
    (0..geom.len())
        .into_par_iter()
        .map(|i| {
            let vox = geom.voxel(i);
            let mut g = [0.0; 3];
            for a in 0..ndim {
                let n = dims[a];
                let s = strides[a];
                g[a] = if vox[a] == 0 {
                    get(i + s) - get(i)
                } else if vox[a] == n - 1 {
                    get(i) - get(i - s)
                } else {
                    0.5 * (get(i + s) - get(i - s))
                };
            }
            g
        })
        .collect()
}

pub(crate) fn gradient(img: &ScalarImage) -> Vec<Vec3> {
    gradient_channel(&img.geom, |i| img.values[i] as f64)
}

/// Normalized sampled Gaussian with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

fn convolve_axis(buf: &[f64], geom: &GridGeom, axis: usize, kernel: &[f64]) -> Vec<f64> {
    let dims = geom.dims3();
    let n = dims[axis] as i64;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let radius = (kernel.len() / 2) as i64;
    (0..buf.len())
        .into_par_iter()
        .map(|i| {
            let pos = geom.voxel(i)[axis] as i64;
            let base = i - pos as usize * stride;
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let j = (pos + k as i64 - radius).clamp(0, n - 1) as usize;
                    w * buf[base + j * stride]
                })
                .sum()
        })
        .collect()
}

fn smooth_channel(buf: Vec<f64>, geom: &GridGeom, kernel: &[f64]) -> Vec<f64> {
    (0..geom.ndim()).fold(buf, |b, axis| convolve_axis(&b, geom, axis, kernel))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(())
}

/// Separable Gaussian convolution with clamped boundaries. `sigma` is in
/// voxels; zero returns the input unchanged.
pub trait GaussianSmooth: Sized {
    fn gaussian_smooth(&self, sigma: f64) -> Result<Self>;
}

impl GaussianSmooth for ScalarImage {
    fn gaussian_smooth(&self, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let kernel = gaussian_kernel(sigma);
        let buf = self.values.iter().map(|&v| v as f64).collect();
        ScalarImage::from_f64(self.geom.clone(), smooth_channel(buf, &self.geom, &kernel))
    }
}

impl GaussianSmooth for VectorField {
    fn gaussian_smooth(&self, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let kernel = gaussian_kernel(sigma);
        let d = self.ndim();
        let mut data = vec![0.0f32; self.data.len()];
        for c in 0..d {
            let buf = self.data.iter().skip(c).step_by(d).map(|&v| v as f64).collect();
            let out = smooth_channel(buf, &self.geom, &kernel);
            for (i, v) in out.into_iter().enumerate() {
                data[i * d + c] = v as f32;
            }
        }
        VectorField::new(self.geom.clone(), self.role, data)
    }
}

pub fn gaussian_smooth<T: GaussianSmooth>(x: &T, sigma: f64) -> Result<T> {
    x.gaussian_smooth(sigma)
}
