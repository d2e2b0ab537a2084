//! Continuous model of one image time series: a shape image and two
//! one-directional paths `exp(v · γ(t))`, one on each side of the shape time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{warp_image, FieldRole, GridGeom, ScalarImage, VectorField};
use crate::registration::{register_svf, RegParams};
use crate::svf::exp_svf;

/// Rank-1 alternating fit iteration limit.
const RANK1_MAX_ITERS: usize = 10;
/// Rank-1 fit stops once no γ changes by more than this.
const RANK1_TOL: f64 = 1e-6;
/// Paths whose fitted direction stays below this many voxels are degenerate.
const DEGENERATE_NORM: f64 = 1e-6;

/// Piecewise-linear rate curve through `(t, γ)` knots, anchored at `γ(anchor) = 0`,
/// extended linearly past the first and last knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaCurve {
    knots: Vec<(f64, f64)>,
    anchor: f64,
}

impl GammaCurve {
    pub fn new(knots: Vec<(f64, f64)>, anchor: f64) -> Result<Self> {
        if knots.iter().any(|(t, g)| !t.is_finite() || !g.is_finite()) {
            return Err(Error::Invalid("gamma knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Invalid(
                "gamma knot times must be strictly increasing".into(),
            ));
        }
        if !knots.iter().any(|&(t, g)| t == anchor && g == 0.0) {
            return Err(Error::Invalid(format!(
                "gamma curve is missing its anchor knot ({anchor}, 0)"
            )));
        }
        Ok(Self { knots, anchor })
    }

    /// Curve that is zero everywhere.
    pub fn flat(anchor: f64) -> Self {
        Self {
            knots: vec![(anchor, 0.0)],
            anchor,
        }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        if k.len() == 1 {
            return 0.0;
        }
        let seg = match k.binary_search_by(|(kt, _)| kt.total_cmp(&t)) {
            Ok(i) => return k[i].1,
            Err(0) => 0,
            Err(i) if i >= k.len() => k.len() - 2,
            Err(i) => i - 1,
        };
        let (t0, g0) = k[seg];
        let (t1, g1) = k[seg + 1];
        g0 + (t - t0) / (t1 - t0) * (g1 - g0)
    }

    /// True when |γ| never decreases moving away from the anchor.
    pub fn is_monotone(&self) -> bool {
        let after: Vec<f64> = self
            .knots
            .iter()
            .filter(|(t, _)| *t >= self.anchor)
            .map(|(_, g)| g.abs())
            .collect();
        let before: Vec<f64> = self
            .knots
            .iter()
            .rev()
            .filter(|(t, _)| *t <= self.anchor)
            .map(|(_, g)| g.abs())
            .collect();
        [after, before]
            .iter()
            .all(|s| s.windows(2).all(|w| w[1] >= w[0]))
    }

    fn shifted(&self, dt: f64) -> Self {
        Self {
            knots: self.knots.iter().map(|&(t, g)| (t + dt, g)).collect(),
            anchor: self.anchor + dt,
        }
    }
}

pub fn gamma_eval(curve: &GammaCurve, t: f64) -> f64 {
    curve.eval(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Times at or after the shape time.
    Future,
    /// Times before the shape time.
    Past,
}

/// One branch of a model: direction field and rate curve over a time domain.
#[derive(Clone, Debug, PartialEq)]
pub struct PathModel {
    pub velocity: VectorField,
    pub gamma: GammaCurve,
    pub domain: (f64, f64),
    pub degenerate: bool,
}

impl PathModel {
    pub fn degenerate(geom: GridGeom, anchor: f64, domain: (f64, f64)) -> Self {
        Self {
            velocity: VectorField::zeros(geom, FieldRole::Velocity),
            gamma: GammaCurve::flat(anchor),
            domain,
            degenerate: true,
        }
    }

    /// Velocity `v · γ(t)`.
    pub fn velocity_at(&self, t: f64) -> VectorField {
        self.velocity.scaled(self.gamma.eval(t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Longitudinal,
    Template,
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "longitudinal" => Ok(Provenance::Longitudinal),
            "template" => Ok(Provenance::Template),
            other => Err(Error::Invalid(format!(
                "unknown mode {other:?} (expected longitudinal or template)"
            ))),
        }
    }
}

/// Shape `S` at time `m`, with `future` (φ₁) covering `[m, t_n]` and `past`
/// (φ₂) covering `[t_0, m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TsModel {
    pub shape: ScalarImage,
    pub m: f64,
    pub future: PathModel,
    pub past: PathModel,
    pub range: (f64, f64),
    pub provenance: Provenance,
    /// Times of the frames the model was fitted to.
    pub frame_times: Vec<f64>,
    pub reg: Option<RegParams>,
    pub warnings: Vec<String>,
}

impl TsModel {
    pub fn geom(&self) -> &GridGeom {
        self.shape.geom()
    }

    pub fn path(&self, side: Side) -> &PathModel {
        match side {
            Side::Future => &self.future,
            Side::Past => &self.past,
        }
    }

    pub fn side_of(&self, t: f64) -> Side {
        if t >= self.m {
            Side::Future
        } else {
            Side::Past
        }
    }

    /// The model velocity `v_side · γ_side(t)` relative to the shape.
    pub fn velocity_at(&self, t: f64) -> VectorField {
        self.path(self.side_of(t)).velocity_at(t)
    }

    /// Checks the structural invariants a model must satisfy.
    pub fn validate(&self) -> Result<()> {
        let (t0, tn) = self.range;
        if !(t0 <= self.m && self.m <= tn) {
            return Err(Error::Invalid(format!(
                "shape time {} outside range [{t0}, {tn}]",
                self.m
            )));
        }
        for (name, p) in [("future", &self.future), ("past", &self.past)] {
            p.velocity.geom().check_same(self.shape.geom(), name)?;
            p.velocity.expect_role(FieldRole::Velocity)?;
            if p.gamma.anchor() != self.m || p.gamma.eval(self.m) != 0.0 {
                return Err(Error::Invalid(format!(
                    "{name} path is not anchored at the shape time"
                )));
            }
        }
        Ok(())
    }

    /// Same model with every stored time moved by `dt`.
    pub fn time_shifted(&self, dt: f64) -> TsModel {
        let shift_path = |p: &PathModel| PathModel {
            velocity: p.velocity.clone(),
            gamma: p.gamma.shifted(dt),
            domain: (p.domain.0 + dt, p.domain.1 + dt),
            degenerate: p.degenerate,
        };
        TsModel {
            shape: self.shape.clone(),
            m: self.m + dt,
            future: shift_path(&self.future),
            past: shift_path(&self.past),
            range: (self.range.0 + dt, self.range.1 + dt),
            provenance: self.provenance,
            frame_times: self.frame_times.iter().map(|t| t + dt).collect(),
            reg: self.reg.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

fn check_series(frames: &[ScalarImage], times: &[f64]) -> Result<()> {
    if frames.len() != times.len() {
        return Err(Error::Invalid(format!(
            "{} frames but {} times",
            frames.len(),
            times.len()
        )));
    }
    if frames.len() < 3 {
        return Err(Error::Invalid(format!(
            "a series needs at least 3 frames, got {}",
            frames.len()
        )));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Invalid("frame times must be finite".into()));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(
            "frame times must be strictly increasing without duplicates".into(),
        ));
    }
    for f in &frames[1..] {
        f.geom().check_same(frames[0].geom(), "series frames")?;
    }
    Ok(())
}

/// Picks the shape of a series: the middle frame for longitudinal data, the
/// voxelwise mean for templates (timed at the median, snapped to a frame time).
pub fn select_shape(
    frames: &[ScalarImage],
    times: &[f64],
    mode: Provenance,
) -> Result<(ScalarImage, f64)> {
    check_series(frames, times)?;
    let n = frames.len();
    match mode {
        Provenance::Longitudinal => Ok((frames[n / 2].clone(), times[n / 2])),
        Provenance::Template => {
            let geom = frames[0].geom().clone();
            let mut acc = vec![0.0f64; geom.len()];
            for f in frames {
                for (a, &v) in acc.iter_mut().zip(f.values()) {
                    *a += v as f64;
                }
            }
            let mean = acc.into_iter().map(|s| s / n as f64).collect();
            let shape = ScalarImage::from_f64(geom, mean)?;
            Ok((shape, snapped_median(times)))
        }
    }
}

/// Median time snapped to the nearest frame time; exact ties go to index `n / 2`.
fn snapped_median(times: &[f64]) -> f64 {
    let n = times.len();
    if n % 2 == 1 {
        return times[n / 2];
    }
    let median = 0.5 * (times[n / 2 - 1] + times[n / 2]);
    let below = median - times[n / 2 - 1];
    let above = times[n / 2] - median;
    if below < above {
        times[n / 2 - 1]
    } else {
        times[n / 2]
    }
}

/// Rank-1 factorization `fields[k] ≈ v · γ[k]`, normalized so that the
/// sample farthest from `anchor` has `γ = 1`.
#[derive(Clone, Debug)]
pub struct Rank1Fit {
    pub velocity: VectorField,
    pub gammas: Vec<f64>,
    pub degenerate: bool,
}

pub fn rank1_fit(fields: &[VectorField], times: &[f64], anchor: f64) -> Result<Rank1Fit> {
    if fields.is_empty() || fields.len() != times.len() {
        return Err(Error::Invalid(format!(
            "rank-1 fit needs matching non-empty inputs ({} fields, {} times)",
            fields.len(),
            times.len()
        )));
    }
    let geom = fields[0].geom().clone();
    for f in fields {
        f.geom().check_same(&geom, "rank1_fit")?;
        f.expect_role(FieldRole::Velocity)?;
    }
    let far = times
        .iter()
        .enumerate()
        .max_by(|a, b| (a.1 - anchor).abs().total_cmp(&(b.1 - anchor).abs()))
        .map(|(i, _)| i)
        .unwrap();
    let span = times[far] - anchor;
    if span == 0.0 {
        return Err(Error::Invalid("rank-1 samples all sit at the anchor time".into()));
    }
    let linear: Vec<f64> = times.iter().map(|t| (t - anchor) / span).collect();

    let degenerate_fit = |gammas: Vec<f64>| Rank1Fit {
        velocity: VectorField::zeros(geom.clone(), FieldRole::Velocity),
        gammas,
        degenerate: true,
    };
    if fields.iter().all(|f| f.max_norm() < DEGENERATE_NORM) {
        return Ok(degenerate_fit(linear));
    }

    let len = fields[0].data().len();
    let mut gammas = linear.clone();
    let mut v = vec![0.0f64; len];
    for _ in 0..RANK1_MAX_ITERS {
        let gg: f64 = gammas.iter().map(|g| g * g).sum();
        if gg == 0.0 {
            return Ok(degenerate_fit(linear));
        }
        v.iter_mut().for_each(|x| *x = 0.0);
        for (f, g) in fields.iter().zip(&gammas) {
            for (x, &u) in v.iter_mut().zip(f.data()) {
                *x += g * u as f64;
            }
        }
        v.iter_mut().for_each(|x| *x /= gg);
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            return Ok(degenerate_fit(linear));
        }
        let next: Vec<f64> = fields
            .iter()
            .map(|f| f.data().iter().zip(&v).map(|(&u, x)| u as f64 * x).sum::<f64>() / vv)
            .collect();
        let change = next
            .iter()
            .zip(&gammas)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        gammas = next;
        if change < RANK1_TOL {
            break;
        }
    }

    let scale = gammas[far];
    if scale == 0.0 {
        return Ok(degenerate_fit(linear));
    }
    gammas.iter_mut().for_each(|g| *g /= scale);
    let data: Vec<f32> = v.iter().map(|x| (x * scale) as f32).collect();
    let velocity = VectorField::new(geom.clone(), FieldRole::Velocity, data)?;
    if velocity.max_norm() < DEGENERATE_NORM {
        return Ok(degenerate_fit(linear));
    }
    Ok(Rank1Fit {
        velocity,
        gammas,
        degenerate: false,
    })
}

/// Builds a path from a rank-1 fit; `domain` must have the anchor at one end.
pub(crate) fn path_from_fit(
    fit: Rank1Fit,
    times: &[f64],
    anchor: f64,
    domain: (f64, f64),
) -> Result<PathModel> {
    let mut knots: Vec<(f64, f64)> = times.iter().copied().zip(fit.gammas).collect();
    knots.push((anchor, 0.0));
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(PathModel {
        velocity: fit.velocity,
        gamma: GammaCurve::new(knots, anchor)?,
        domain,
        degenerate: fit.degenerate,
    })
}

/// Fits the path on one side of `m` from the frames strictly on that side.
pub fn fit_path(
    shape: &ScalarImage,
    frames: &[ScalarImage],
    times: &[f64],
    m: f64,
    side: Side,
    reg: &RegParams,
) -> Result<PathModel> {
    let picked: Vec<(&ScalarImage, f64)> = frames
        .iter()
        .zip(times.iter().copied())
        .filter(|(_, t)| match side {
            Side::Future => *t > m,
            Side::Past => *t < m,
        })
        .collect();
    if picked.is_empty() {
        return Err(Error::Invalid(format!(
            "no frames strictly on the {side:?} side of t = {m}"
        )));
    }
    for (f, _) in &picked {
        f.geom().check_same(shape.geom(), "fit_path")?;
    }
    let fields: Vec<VectorField> = picked
        .par_iter()
        .map(|(frame, _)| register_svf(frame, shape, reg))
        .collect::<Result<_>>()?;
    let ts: Vec<f64> = picked.iter().map(|(_, t)| *t).collect();
    let far = match side {
        Side::Future => ts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Side::Past => ts.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let domain = match side {
        Side::Future => (m, far),
        Side::Past => (far, m),
    };
    let fit = rank1_fit(&fields, &ts, m)?;
    path_from_fit(fit, &ts, m, domain)
}

pub fn fit_ts_model(
    frames: &[ScalarImage],
    times: &[f64],
    mode: Provenance,
    reg: &RegParams,
) -> Result<TsModel> {
    reg.validate()?;
    let (shape, m) = select_shape(frames, times, mode)?;
    let t0 = times[0];
    let tn = *times.last().unwrap();
    let side = |s: Side, has: bool| -> Result<PathModel> {
        if has {
            fit_path(&shape, frames, times, m, s, reg)
        } else {
            let domain = match s {
                Side::Future => (m, tn),
                Side::Past => (t0, m),
            };
            Ok(PathModel::degenerate(shape.geom().clone(), m, domain))
        }
    };
    let (future, past) = rayon::join(
        || side(Side::Future, times.iter().any(|&t| t > m)),
        || side(Side::Past, times.iter().any(|&t| t < m)),
    );
    let (future, past) = (future?, past?);
    let mut warnings = Vec::new();
    for (name, p) in [("future", &future), ("past", &past)] {
        if p.degenerate {
            warnings.push(format!("{name} path is degenerate (no measurable motion)"));
        } else if !p.gamma.is_monotone() {
            warnings.push(format!("{name} path rate curve is not monotone"));
        }
    }
    let model = TsModel {
        shape,
        m,
        future,
        past,
        range: (t0, tn),
        provenance: mode,
        frame_times: times.to_vec(),
        reg: Some(reg.clone()),
        warnings,
    };
    model.validate()?;
    Ok(model)
}

/// The model image at time `t`; outside the fitted range γ is extended linearly.
pub fn evaluate(model: &TsModel, t: f64) -> Result<ScalarImage> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("non-finite evaluation time {t}")));
    }
    let path = model.path(model.side_of(t));
    let g = path.gamma.eval(t);
    if g == 0.0 {
        return Ok(model.shape.clone());
    }
    warp_image(&model.shape, &exp_svf(&path.velocity, g)?)
}
