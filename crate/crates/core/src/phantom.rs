//! Synthetic series: the modified Shepp-Logan phantom, smooth random velocity
//! fields, and the three pair recipes (shape only, path only, both).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    warp_image, FieldRole, GaussianSmooth, GridGeom, ScalarImage, VectorField,
};
use crate::svf::exp_svf;

/// Width of the zeroed border band of synthetic fields, in voxels.
pub const BORDER: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dims: Vec<usize>,
    pub n_frames: usize,
    pub shape_amp: f64,
    pub path_amp: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dims: vec![128, 128],
            n_frames: 7,
            shape_amp: 3.0,
            path_amp: 3.0,
            sigma: 8.0,
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        GridGeom::with_dims(&self.dims)?;
        if self.n_frames < 3 {
            return Err(Error::Invalid(format!(
                "simulated series need >= 3 frames, got {}",
                self.n_frames
            )));
        }
        if !(self.shape_amp >= 0.0 && self.path_amp >= 0.0) {
            return Err(Error::Invalid("amplitudes must be >= 0".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Invalid("smoothness sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Seed of the shape field; the path field uses the next value.
    fn shape_seed(&self) -> u64 {
        self.seed
    }

    fn path_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}

/// `(intensity, semi-axes, centre, in-plane rotation in degrees)`, coordinates in [-1, 1].
struct Ellipsoid {
    value: f64,
    axes: [f64; 3],
    centre: [f64; 3],
    phi_deg: f64,
}

const fn e(value: f64, axes: [f64; 3], centre: [f64; 3], phi_deg: f64) -> Ellipsoid {
    Ellipsoid {
        value,
        axes,
        centre,
        phi_deg,
    }
}

/// Modified (high-contrast) Shepp-Logan table. In 2D only the x/y parts are used.
const SHEPP_LOGAN: [Ellipsoid; 10] = [
    e(1.0, [0.69, 0.92, 0.81], [0.0, 0.0, 0.0], 0.0),
    e(-0.8, [0.6624, 0.874, 0.78], [0.0, -0.0184, 0.0], 0.0),
    e(-0.2, [0.11, 0.31, 0.22], [0.22, 0.0, 0.0], -18.0),
    e(-0.2, [0.16, 0.41, 0.28], [-0.22, 0.0, 0.0], 18.0),
    e(0.1, [0.21, 0.25, 0.41], [0.0, 0.35, -0.15], 0.0),
    e(0.1, [0.046, 0.046, 0.05], [0.0, 0.1, 0.25], 0.0),
    e(0.1, [0.046, 0.046, 0.05], [0.0, -0.1, 0.25], 0.0),
    e(0.1, [0.046, 0.023, 0.05], [-0.08, -0.605, 0.0], 0.0),
    e(0.1, [0.023, 0.023, 0.02], [0.0, -0.606, 0.0], 0.0),
    e(0.1, [0.023, 0.046, 0.02], [0.06, -0.605, 0.0], 0.0),
];

/// Phantom intensity at normalized coordinates `p` (each in [-1, 1]).
pub fn shepp_logan_value(p: [f64; 3], ndim: usize) -> f64 {
    let mut value = 0.0;
    for el in &SHEPP_LOGAN {
        let (s, c) = el.phi_deg.to_radians().sin_cos();
        let dx = p[0] - el.centre[0];
        let dy = p[1] - el.centre[1];
        let xr = c * dx + s * dy;
        let yr = -s * dx + c * dy;
        let mut r = (xr / el.axes[0]).powi(2) + (yr / el.axes[1]).powi(2);
        if ndim == 3 {
            r += ((p[2] - el.centre[2]) / el.axes[2]).powi(2);
        }
        if r <= 1.0 {
            value += el.value;
        }
    }
    value.clamp(0.0, 1.0)
}

/// Rasterizes the phantom at voxel centres. Axis 1 runs from top (y = +1) to bottom.
pub fn shepp_logan(dims: &[usize]) -> Result<ScalarImage> {
    let geom = GridGeom::with_dims(dims)?;
    let ndim = geom.ndim();
    let d3 = geom.dims3();
    ScalarImage::from_fn(geom, |v| {
        let mut p = [0.0; 3];
        p[0] = (2.0 * v[0] as f64 + 1.0) / d3[0] as f64 - 1.0;
        p[1] = 1.0 - (2.0 * v[1] as f64 + 1.0) / d3[1] as f64;
        if ndim == 3 {
            p[2] = (2.0 * v[2] as f64 + 1.0) / d3[2] as f64 - 1.0;
        }
        shepp_logan_value(p, ndim)
    })
}

/// Smooth random velocity with largest norm exactly `amp`, vanishing within
/// [`BORDER`] voxels of the grid edge and tapered over the next `sigma` voxels.
pub fn synth_svf(config: &SimConfig, amp: f64, seed: u64) -> Result<VectorField> {
    config.validate()?;
    if !(amp.is_finite() && amp >= 0.0) {
        return Err(Error::Invalid(format!("amplitude must be >= 0, got {amp}")));
    }
    let geom = GridGeom::with_dims(&config.dims)?;
    if amp == 0.0 {
        return Ok(VectorField::zeros(geom, FieldRole::Velocity));
    }
    let d = geom.ndim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f32> = (0..geom.len() * d)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            x as f32
        })
        .collect();
    let smooth = VectorField::new(geom.clone(), FieldRole::Velocity, noise)?
        .gaussian_smooth(config.sigma)?;

    let dims = geom.dims3();
    let ramp = config.sigma.max(1.0);
    let taper = |v: [usize; 3]| -> f64 {
        let edge = (0..d)
            .map(|a| v[a].min(dims[a] - 1 - v[a]))
            .min()
            .unwrap_or(0);
        if edge < BORDER {
            return 0.0;
        }
        let s = ((edge - BORDER) as f64 / ramp).min(1.0);
        s * s * (3.0 - 2.0 * s)
    };
    let tapered = VectorField::from_fn(geom.clone(), FieldRole::Velocity, |v| {
        let w = taper(v);
        let u = smooth.vector(geom.linear_index(v));
        [w * u[0], w * u[1], w * u[2]]
    })?;
    let max = tapered.max_norm();
    if max == 0.0 {
        return Ok(tapered);
    }
    Ok(tapered.scaled(amp / max))
}

/// Rate values `(2k - (n - 1)) / (n - 1)`: symmetric in [-1, 1] with an exact zero
/// at the middle for odd `n`, and `γ[n-1-k] == -γ[k]` bit-exactly.
pub fn sim_gammas(n: usize) -> Vec<f64> {
    let denom = (n - 1) as f64;
    (0..n)
        .map(|k| (2.0 * k as f64 - denom) / denom)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimSetId {
    /// Same path applied to two anatomies.
    ShapeOnly = 1,
    /// One anatomy, mutually inverse paths.
    PathOnly = 2,
    /// Different anatomies and inverse paths.
    Both = 3,
}

impl TryFrom<u8> for SimSetId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(SimSetId::ShapeOnly),
            2 => Ok(SimSetId::PathOnly),
            3 => Ok(SimSetId::Both),
            other => Err(Error::Invalid(format!("simulation set must be 1, 2 or 3, got {other}"))),
        }
    }
}

/// The fields that generated a simulated pair.
#[derive(Clone, Debug)]
pub struct Generators {
    pub shape_velocity: VectorField,
    pub path_velocity: VectorField,
    pub gammas: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SimSet {
    pub frames_i: Vec<ScalarImage>,
    pub times_i: Vec<f64>,
    pub frames_j: Vec<ScalarImage>,
    pub times_j: Vec<f64>,
    pub generators: Generators,
}

/// `warp(base, exp(path · γ))` for each γ.
pub fn path_series(base: &ScalarImage, path: &VectorField, gammas: &[f64]) -> Result<Vec<ScalarImage>> {
    gammas
        .iter()
        .map(|&g| warp_image(base, &exp_svf(path, g)?))
        .collect()
}

pub fn build_sim_set(set: SimSetId, config: &SimConfig) -> Result<SimSet> {
    config.validate()?;
    let phantom = shepp_logan(&config.dims)?;
    let shape_velocity = synth_svf(config, config.shape_amp, config.shape_seed())?;
    let path_velocity = synth_svf(config, config.path_amp, config.path_seed())?;
    let gammas = sim_gammas(config.n_frames);
    let negated: Vec<f64> = gammas.iter().map(|g| -g).collect();
    let shaped = || -> Result<ScalarImage> { warp_image(&phantom, &exp_svf(&shape_velocity, 1.0)?) };

    let (base_j, gammas_j) = match set {
        SimSetId::ShapeOnly => (shaped()?, &gammas),
        SimSetId::PathOnly => (phantom.clone(), &negated),
        SimSetId::Both => (shaped()?, &negated),
    };
    let frames_i = path_series(&phantom, &path_velocity, &gammas)?;
    let frames_j = path_series(&base_j, &path_velocity, gammas_j)?;
    let times: Vec<f64> = (0..config.n_frames).map(|k| k as f64).collect();
    Ok(SimSet {
        frames_i,
        times_i: times.clone(),
        frames_j,
        times_j: times,
        generators: Generators {
            shape_velocity,
            path_velocity,
            gammas,
        },
    })
}
