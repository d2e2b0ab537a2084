//! Multi-resolution log-demons registration producing a stationary velocity field.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    gradient, sample_vector, warp_image, FieldRole, GaussianSmooth, GridGeom, Mask, ScalarImage,
    Vec3, VectorField,
};
use crate::svf::{bch_combine, exp_svf};

/// Demons denominators below this are treated as zero force.
const DENOM_FLOOR: f64 = 1e-6;
/// Iterations without a relative improvement of `stop_tol` before a level ends.
const PATIENCE: usize = 5;
/// Coarsest grid size allowed along any axis.
const MIN_LEVEL_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    pub levels: usize,
    pub iters_per_level: usize,
    pub sigma_fluid: f64,
    pub sigma_diffusion: f64,
    pub step_cap: f64,
    pub stop_tol: f64,
}

impl Default for RegParams {
    fn default() -> Self {
        Self {
            levels: 3,
            iters_per_level: 50,
            sigma_fluid: 2.0,
            sigma_diffusion: 1.0,
            step_cap: 0.5,
            stop_tol: 1e-4,
        }
    }
}

impl RegParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::Invalid("registration needs at least one level".into()));
        }
        if self.iters_per_level < 1 {
            return Err(Error::Invalid("iters_per_level must be >= 1".into()));
        }
        if !(self.sigma_fluid >= 0.0 && self.sigma_diffusion >= 0.0) {
            return Err(Error::Invalid("smoothing sigmas must be >= 0".into()));
        }
        if !(self.step_cap > 0.0 && self.step_cap <= 1.0) {
            return Err(Error::Invalid(format!(
                "step_cap must lie in (0, 1], got {}",
                self.step_cap
            )));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::Invalid("stop_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Registration result with per-iteration diagnostics.
#[derive(Clone, Debug)]
pub struct RegistrationOutcome {
    pub velocity: VectorField,
    pub initial_mse: f64,
    pub final_mse: f64,
    /// MSE of every iterate evaluated at the finest level, in order.
    pub finest_history: Vec<f64>,
}

/// Masked mean squared intensity difference.
pub fn mse(a: &ScalarImage, b: &ScalarImage, mask: &Mask) -> Result<f64> {
    a.geom().check_same(b.geom(), "mse")?;
    a.geom().check_same(mask.geom(), "mse mask")?;
    let (sum, n) = a
        .values()
        .iter()
        .zip(b.values())
        .zip(mask.values())
        .filter(|(_, &m)| m)
        .fold((0.0f64, 0usize), |(s, n), ((&x, &y), _)| {
            let d = x as f64 - y as f64;
            (s + d * d, n + 1)
        });
    if n == 0 {
        return Err(Error::Invalid("mse mask selects no voxels".into()));
    }
    Ok(sum / n as f64)
}

fn full_mse(a: &ScalarImage, b: &ScalarImage) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.values().len() as f64
}

/// Estimates `V` with `warp_image(moving, exp_svf(V, 1)) ≈ fixed`.
pub fn register_svf(
    fixed: &ScalarImage,
    moving: &ScalarImage,
    params: &RegParams,
) -> Result<VectorField> {
    register_svf_traced(fixed, moving, params).map(|o| o.velocity)
}

pub fn register_svf_traced(
    fixed: &ScalarImage,
    moving: &ScalarImage,
    params: &RegParams,
) -> Result<RegistrationOutcome> {
    fixed.geom().check_same(moving.geom(), "register_svf")?;
    params.validate()?;

    let mut pyramid = vec![(fixed.clone(), moving.clone())];
    while pyramid.len() < params.levels {
        let (f, m) = pyramid.last().unwrap();
        match (downsample(f), downsample(m)) {
            (Some(df), Some(dm)) => pyramid.push((df, dm)),
            _ => break,
        }
    }

    let initial_mse = full_mse(fixed, moving);
    let mut velocity: Option<VectorField> = None;
    let mut finest_history = Vec::new();
    let mut final_mse = initial_mse;
    for (level, (f, m)) in pyramid.iter().enumerate().rev() {
        let start = match velocity.take() {
            None => VectorField::zeros(f.geom().clone(), FieldRole::Velocity),
            Some(coarse) => upsample_velocity(&coarse, f.geom())?,
        };
        let (v, best, history) = demons_level(f, m, start, params)?;
        if level == 0 {
            finest_history = history;
            final_mse = best;
        }
        velocity = Some(v);
    }
    let mut velocity = velocity.expect("pyramid has at least one level");
    // Never return something worse than the identity.
    if final_mse > initial_mse {
        velocity = VectorField::zeros(fixed.geom().clone(), FieldRole::Velocity);
        final_mse = initial_mse;
    }
    Ok(RegistrationOutcome {
        velocity,
        initial_mse,
        final_mse,
        finest_history,
    })
}

/// Runs the demons loop at one resolution, returning the best iterate.
fn demons_level(
    fixed: &ScalarImage,
    moving: &ScalarImage,
    start: VectorField,
    params: &RegParams,
) -> Result<(VectorField, f64, Vec<f64>)> {
    let grad_fixed = gradient(fixed);
    let mut v = start;
    let mut best_v = v.clone();
    let mut best = f64::INFINITY;
    let mut history = Vec::with_capacity(params.iters_per_level + 1);
    let mut stale = 0;

    for iter in 0..=params.iters_per_level {
        let warped = warp_image(moving, &exp_svf(&v, 1.0)?)?;
        let err = full_mse(&warped, fixed);
        history.push(err);
        if err < best {
            let rel = if best.is_finite() && best > 0.0 {
                (best - err) / best
            } else {
                1.0
            };
            best = err;
            best_v = v.clone();
            stale = if rel < params.stop_tol { stale + 1 } else { 0 };
        } else {
            stale += 1;
        }
        if iter == params.iters_per_level || stale >= PATIENCE || best == 0.0 {
            break;
        }

        let update = demons_force(fixed, &warped, &grad_fixed)?
            .gaussian_smooth(params.sigma_fluid)?;
        let update = clamp_magnitude(&update, params.step_cap)?;
        v = bch_combine(&v, &update)?.gaussian_smooth(params.sigma_diffusion)?;
    }
    Ok((best_v, best, history))
}

/// Symmetric demons force, `-(w - f) g / (|g|^2 + (w - f)^2)` with `g` the
/// average of the fixed and warped gradients.
fn demons_force(
    fixed: &ScalarImage,
    warped: &ScalarImage,
    grad_fixed: &[Vec3],
) -> Result<VectorField> {
    let grad_warped = gradient(warped);
    let forces: Vec<Vec3> = (0..fixed.geom().len())
        .into_par_iter()
        .map(|i| {
            let diff = warped.get(i) - fixed.get(i);
            let g = [
                0.5 * (grad_fixed[i][0] + grad_warped[i][0]),
                0.5 * (grad_fixed[i][1] + grad_warped[i][1]),
                0.5 * (grad_fixed[i][2] + grad_warped[i][2]),
            ];
            let denom = g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + diff * diff;
            if denom < DENOM_FLOOR || diff == 0.0 {
                [0.0; 3]
            } else {
                let s = -diff / denom;
                [s * g[0], s * g[1], s * g[2]]
            }
        })
        .collect();
    VectorField::from_vectors(fixed.geom().clone(), FieldRole::Velocity, &forces)
}

fn clamp_magnitude(field: &VectorField, cap: f64) -> Result<VectorField> {
    let vectors: Vec<Vec3> = (0..field.geom().len())
        .map(|i| {
            let v = field.vector(i);
            let n = crate::grid::norm(v);
            if n > cap {
                let s = cap / n;
                [v[0] * s, v[1] * s, v[2] * s]
            } else {
                v
            }
        })
        .collect();
    VectorField::from_vectors(field.geom().clone(), field.role(), &vectors)
}

/// Averages 2-voxel blocks along every axis; `None` once the grid is too coarse.
fn downsample(img: &ScalarImage) -> Option<ScalarImage> {
    let g = img.geom();
    if g.dims().iter().any(|&n| n.div_ceil(2) < MIN_LEVEL_DIM) {
        return None;
    }
    let dims: Vec<usize> = g.dims().iter().map(|n| n.div_ceil(2)).collect();
    let spacing: Vec<f64> = g.spacing().iter().map(|s| 2.0 * s).collect();
    let origin: Vec<f64> = g
        .origin()
        .iter()
        .zip(g.spacing())
        .map(|(o, s)| o + 0.5 * s)
        .collect();
    let coarse = GridGeom::new(dims, spacing, origin).ok()?;
    let fine = g.dims3();
    let ndim = g.ndim();
    ScalarImage::from_fn(coarse, |c| {
        let mut sum = 0.0;
        let mut n = 0usize;
        let span = |a: usize| if a < ndim { 2 } else { 1 };
        for dz in 0..span(2) {
            for dy in 0..span(1) {
                for dx in 0..span(0) {
                    let f = [2 * c[0] + dx, 2 * c[1] + dy, 2 * c[2] + dz];
                    if f[0] < fine[0] && f[1] < fine[1] && f[2] < fine[2] {
                        sum += img.at(f);
                        n += 1;
                    }
                }
            }
        }
        sum / n as f64
    })
    .ok()
}

/// Fine voxel `i` sits at coarse coordinate `(i - 0.5) / 2`; components double.
fn upsample_velocity(coarse: &VectorField, fine: &GridGeom) -> Result<VectorField> {
    let ndim = fine.ndim();
    VectorField::from_fn(fine.clone(), FieldRole::Velocity, |f| {
        let mut p = [0.0; 3];
        for a in 0..ndim {
            p[a] = (f[a] as f64 - 0.5) / 2.0;
        }
        let v = sample_vector(coarse, p);
        [2.0 * v[0], 2.0 * v[1], 2.0 * v[2]]
    })
}
