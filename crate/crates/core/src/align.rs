//! Temporal alignment of two series models to a common shape time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{warp_image, FieldRole, VectorField};
use crate::model::{path_from_fit, rank1_fit, GammaCurve, PathModel, Side, TsModel};
use crate::svf::{bch_combine, exp_svf};

/// Samples used to refit the cross path after re-anchoring.
pub const REFIT_SAMPLES: usize = 11;

/// Which midpoint shift is removed from each model's paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftConvention {
    /// Each model subtracts its own accumulated deformation at the common time
    /// from both of its paths.
    OwnMidpointShift,
}

#[derive(Clone, Debug)]
pub struct AlignedPair {
    pub model_i: TsModel,
    pub model_j: TsModel,
    pub interval: (f64, f64),
    /// Set when the caller asked for an interval; evaluation may then extrapolate γ.
    pub extrapolation_allowed: bool,
    pub convention: ShiftConvention,
}

impl AlignedPair {
    pub fn m(&self) -> f64 {
        self.model_i.m
    }
}

/// Intersection of the two fitted ranges.
pub fn common_interval(model_i: &TsModel, model_j: &TsModel) -> Result<(f64, f64)> {
    let lo = model_i.range.0.max(model_j.range.0);
    let hi = model_i.range.1.min(model_j.range.1);
    if lo > hi {
        return Err(Error::Invalid(format!(
            "series ranges [{}, {}] and [{}, {}] do not overlap; pass an explicit interval",
            model_i.range.0, model_i.range.1, model_j.range.0, model_j.range.1
        )));
    }
    Ok((lo, hi))
}

pub fn align_pair(
    model_i: &TsModel,
    model_j: &TsModel,
    requested: Option<(f64, f64)>,
) -> Result<AlignedPair> {
    model_i
        .geom()
        .check_same(model_j.geom(), "align_pair")?;
    let m = 0.5 * (model_i.m + model_j.m);
    let interval = match requested {
        Some(iv) => iv,
        None => common_interval(model_i, model_j)?,
    };
    let (ta, tb) = interval;
    if !(ta.is_finite() && tb.is_finite() && ta < tb) {
        return Err(Error::Invalid(format!("invalid analysis interval [{ta}, {tb}]")));
    }
    if !(ta <= m && m <= tb) {
        return Err(Error::Invalid(format!(
            "analysis interval [{ta}, {tb}] does not contain the common shape time {m}"
        )));
    }
    let (ai, aj) = rayon::join(|| reanchor(model_i, m), || reanchor(model_j, m));
    Ok(AlignedPair {
        model_i: ai?,
        model_j: aj?,
        interval,
        extrapolation_allowed: requested.is_some(),
        convention: ShiftConvention::OwnMidpointShift,
    })
}

/// Moves a model's shape to time `m_new` along its own path and rewrites both
/// paths relative to the new shape.
pub fn reanchor(model: &TsModel, m_new: f64) -> Result<TsModel> {
    let delta = m_new - model.m;
    if delta == 0.0 {
        return Ok(model.clone());
    }
    let side = if delta > 0.0 { Side::Future } else { Side::Past };
    let shared = model.path(side);
    let g_mid = shared.gamma.eval(m_new);
    let shape = warp_image(&model.shape, &exp_svf(&shared.velocity, g_mid)?)?;
    let shift = shared.velocity.scaled(g_mid);

    let (t0, tn) = model.range;
    let shared_new = shift_path(shared, side, m_new, g_mid, (t0, tn));
    let other_domain = match side {
        Side::Future => (t0.min(m_new), m_new),
        Side::Past => (m_new, tn.max(m_new)),
    };
    let other_new = refit_cross_path(model, &shift, m_new, other_domain)?;

    let (future, past) = match side {
        Side::Future => (shared_new, other_new),
        Side::Past => (other_new, shared_new),
    };
    let mut warnings = model.warnings.clone();
    if !future.degenerate && !future.gamma.is_monotone() {
        warnings.push("aligned future rate curve is not monotone".into());
    }
    if !past.degenerate && !past.gamma.is_monotone() {
        warnings.push("aligned past rate curve is not monotone".into());
    }
    let out = TsModel {
        shape,
        m: m_new,
        future,
        past,
        range: model.range,
        provenance: model.provenance,
        frame_times: model.frame_times.clone(),
        reg: model.reg.clone(),
        warnings,
    };
    out.validate()?;
    Ok(out)
}

/// The path that already carries the shift: same direction, γ lowered by `g_mid`.
fn shift_path(path: &PathModel, side: Side, m_new: f64, g_mid: f64, range: (f64, f64)) -> PathModel {
    let beyond = |t: f64| match side {
        Side::Future => t > m_new,
        Side::Past => t < m_new,
    };
    let mut knots: Vec<(f64, f64)> = path
        .gamma
        .knots()
        .iter()
        .filter(|(t, _)| beyond(*t))
        .map(|&(t, g)| (t, g - g_mid))
        .collect();
    if knots.is_empty() {
        // m_new lies past the last knot; keep the linear extension alive.
        let t = match side {
            Side::Future => m_new + 1.0,
            Side::Past => m_new - 1.0,
        };
        knots.push((t, path.gamma.eval(t) - g_mid));
    }
    knots.push((m_new, 0.0));
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    let domain = match side {
        Side::Future => (m_new, range.1.max(m_new)),
        Side::Past => (range.0.min(m_new), m_new),
    };
    PathModel {
        velocity: path.velocity.clone(),
        gamma: GammaCurve::new(knots, m_new).expect("shifted knots stay ordered and anchored"),
        domain,
        degenerate: path.degenerate,
    }
}

/// Samples the model velocity minus the midpoint shift over `domain` and
/// refits it to rank-1 form.
fn refit_cross_path(
    model: &TsModel,
    shift: &VectorField,
    m_new: f64,
    domain: (f64, f64),
) -> Result<PathModel> {
    let geom = model.geom().clone();
    let (lo, hi) = domain;
    if hi - lo <= 0.0 {
        return Ok(PathModel::degenerate(geom, m_new, domain));
    }
    let neg_shift = shift.scaled(-1.0);
    let mut times = Vec::with_capacity(REFIT_SAMPLES);
    let mut fields = Vec::with_capacity(REFIT_SAMPLES);
    for k in 0..REFIT_SAMPLES {
        let t = match k {
            0 => lo,
            k if k == REFIT_SAMPLES - 1 => hi,
            k => lo + (hi - lo) * k as f64 / (REFIT_SAMPLES - 1) as f64,
        };
        if t == m_new {
            continue;
        }
        fields.push(bch_combine(&model.velocity_at(t), &neg_shift)?);
        times.push(t);
    }
    debug_assert!(fields.iter().all(|f| f.role() == FieldRole::Velocity));
    let fit = rank1_fit(&fields, &times, m_new)?;
    path_from_fit(fit, &times, m_new, domain)
}
