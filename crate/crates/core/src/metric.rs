//! Shape distance, path distance and their sum for an aligned pair of models.
//!
//! All maps live in the reference model's (J) aligned shape frame. Path
//! velocities of I are transported into that frame before differencing, so
//! the per-voxel temporal maximum needs no further resampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align_pair, AlignedPair, ShiftConvention};
use crate::error::{Error, Result};
use crate::grid::{
    foreground_mask, magnitude_map, mean_over_mask, GridGeom, Mask, ScalarImage, VectorField,
};
use crate::model::{Side, TsModel};
use crate::registration::{register_svf, RegParams};
use crate::svf::{parallel_transport, TransportMethod};

/// Foreground threshold, as a fraction of each shape's maximum intensity.
pub const MASK_FRACTION: f64 = 0.01;
pub const DEFAULT_TIME_SAMPLES: usize = 101;

/// Which model's aligned shape carries the distance maps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    A,
    #[default]
    B,
}

#[derive(Clone, Debug)]
pub struct ShapeDistance {
    pub velocity: VectorField,
    pub map: ScalarImage,
    pub ds: f64,
    pub mask: Mask,
}

#[derive(Clone, Debug)]
pub struct PathDistance {
    pub map: ScalarImage,
    pub dp: f64,
    pub transport_fallbacks: usize,
}

/// Summary statistics of a distance map over the analysis mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapStats {
    pub mean: f64,
    pub max: f64,
    pub p95: f64,
}

impl MapStats {
    pub fn of(map: &ScalarImage, mask: &Mask) -> Result<Self> {
        let mean = mean_over_mask(map, mask)?;
        let mut vals: Vec<f64> = map
            .values()
            .iter()
            .zip(mask.values())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v as f64)
            .collect();
        vals.sort_by(f64::total_cmp);
        let max = *vals.last().unwrap();
        let rank = ((0.95 * vals.len() as f64).ceil() as usize).clamp(1, vals.len());
        Ok(Self {
            mean,
            max,
            p95: vals[rank - 1],
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportWarnings {
    pub transport_fallbacks: usize,
    pub gamma_non_monotone: Vec<String>,
    pub model_warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct DistanceReport {
    pub ds_map: ScalarImage,
    pub dp_map: ScalarImage,
    pub ds: f64,
    pub dp: f64,
    pub total: f64,
    pub interval: (f64, f64),
    pub aligned_time: f64,
    pub n_time_samples: usize,
    pub mask: Mask,
    pub reference: Reference,
    pub convention: ShiftConvention,
    pub transport: TransportMethod,
    pub ds_stats: MapStats,
    pub dp_stats: MapStats,
    pub warnings: ReportWarnings,
}

fn analysis_mask(pair: &AlignedPair) -> Result<Mask> {
    foreground_mask(&pair.model_i.shape, &pair.model_j.shape, MASK_FRACTION)
}

/// Registers the aligned I shape onto the aligned J shape; the velocity's
/// exponential maps J-frame coordinates into I's anatomy.
pub fn shape_distance(pair: &AlignedPair, reg: &RegParams) -> Result<ShapeDistance> {
    let velocity = register_svf(&pair.model_j.shape, &pair.model_i.shape, reg)?;
    let map = magnitude_map(&velocity);
    let mask = analysis_mask(pair)?;
    let ds = mean_over_mask(&map, &mask)?;
    Ok(ShapeDistance {
        velocity,
        map,
        ds,
        mask,
    })
}

/// Uniform sample times over `[ta, tb]`, endpoints exact.
pub fn sample_times(interval: (f64, f64), n: usize) -> Vec<f64> {
    let (ta, tb) = interval;
    (0..n)
        .map(|k| match k {
            0 => ta,
            k if k == n - 1 => tb,
            k => ta + (tb - ta) * k as f64 / (n - 1) as f64,
        })
        .collect()
}

fn within(range: (f64, f64), iv: (f64, f64)) -> bool {
    range.0 <= iv.0 && iv.1 <= range.1
}

/// Per-voxel maximum over time of `‖v̄ᴵ γᴵ(t) − vᴶ γᴶ(t)‖`, then its masked mean.
pub fn path_distance(
    pair: &AlignedPair,
    shape_velocity: &VectorField,
    n_samples: usize,
) -> Result<PathDistance> {
    if n_samples < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 time samples, got {n_samples}"
        )));
    }
    let (mi, mj) = (&pair.model_i, &pair.model_j);
    if !pair.extrapolation_allowed
        && !(within(mi.range, pair.interval) && within(mj.range, pair.interval))
    {
        return Err(Error::Invalid(format!(
            "interval [{}, {}] leaves a fitted range and extrapolation was not requested",
            pair.interval.0, pair.interval.1
        )));
    }
    let method = TransportMethod::ConjugatePushforward;
    let future_i = parallel_transport(&mi.future.velocity, shape_velocity, method)?;
    let past_i = parallel_transport(&mi.past.velocity, shape_velocity, method)?;

    let geom: &GridGeom = mj.geom();
    let d = geom.ndim();
    let times = sample_times(pair.interval, n_samples);
    // (γᴵ, γᴶ, side) per sample time
    let coeffs: Vec<(f64, f64, Side)> = times
        .iter()
        .map(|&t| {
            let side = if t >= pair.m() { Side::Future } else { Side::Past };
            (mi.path(side).gamma.eval(t), mj.path(side).gamma.eval(t), side)
        })
        .collect();

    let vi_f = future_i.field.data();
    let vi_p = past_i.field.data();
    let vj_f = mj.future.velocity.data();
    let vj_p = mj.past.velocity.data();
    let values: Vec<f64> = (0..geom.len())
        .into_par_iter()
        .map(|x| {
            let mut best = 0.0f64;
            for &(gi, gj, side) in &coeffs {
                let (a, b) = match side {
                    Side::Future => (vi_f, vj_f),
                    Side::Past => (vi_p, vj_p),
                };
                let sq: f64 = (0..d)
                    .map(|c| {
                        let diff = a[x * d + c] as f64 * gi - b[x * d + c] as f64 * gj;
                        diff * diff
                    })
                    .sum();
                best = best.max(sq.sqrt());
            }
            best
        })
        .collect();
    let map = ScalarImage::from_f64(geom.clone(), values)?;
    let mask = analysis_mask(pair)?;
    let dp = mean_over_mask(&map, &mask)?;
    Ok(PathDistance {
        map,
        dp,
        transport_fallbacks: future_i.fallbacks + past_i.fallbacks,
    })
}

/// Aligns two models and reports shape, path and total distance. With
/// `Reference::B` the second model's frame is the reference; `Reference::A`
/// swaps the roles.
pub fn total_distance(
    model_a: &TsModel,
    model_b: &TsModel,
    requested_interval: Option<(f64, f64)>,
    reg: &RegParams,
    n_samples: usize,
    reference: Reference,
) -> Result<DistanceReport> {
    let (mi, mj) = match reference {
        Reference::B => (model_a, model_b),
        Reference::A => (model_b, model_a),
    };
    let pair = align_pair(mi, mj, requested_interval)?;
    let shape = shape_distance(&pair, reg)?;
    let path = path_distance(&pair, &shape.velocity, n_samples)?;

    let mut gamma_non_monotone = Vec::new();
    for (label, model) in [("i", &pair.model_i), ("j", &pair.model_j)] {
        for (side, p) in [("future", &model.future), ("past", &model.past)] {
            if !p.degenerate && !p.gamma.is_monotone() {
                gamma_non_monotone.push(format!("{label}.{side}"));
            }
        }
    }
    let mut model_warnings: Vec<String> = pair.model_i.warnings.iter().map(|w| format!("i: {w}")).collect();
    model_warnings.extend(pair.model_j.warnings.iter().map(|w| format!("j: {w}")));

    Ok(DistanceReport {
        ds_stats: MapStats::of(&shape.map, &shape.mask)?,
        dp_stats: MapStats::of(&path.map, &shape.mask)?,
        total: shape.ds + path.dp,
        ds: shape.ds,
        dp: path.dp,
        ds_map: shape.map,
        dp_map: path.map,
        interval: pair.interval,
        aligned_time: pair.m(),
        n_time_samples: n_samples,
        mask: shape.mask,
        reference,
        convention: pair.convention,
        transport: TransportMethod::ConjugatePushforward,
        warnings: ReportWarnings {
            transport_fallbacks: path.transport_fallbacks,
            gamma_non_monotone,
            model_warnings,
        },
    })
}
