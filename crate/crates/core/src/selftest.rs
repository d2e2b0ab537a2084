//! Quick property checks behind `tsmetric selftest`: self distance, SVF
//! algebra, rank-1 exactness and temporal-max stability, on small phantoms.

use std::time::Instant;

use crate::error::Result;
use crate::grid::{compose_disp, interp_vector, FieldRole, GridGeom, Vec3, VectorField};
use crate::metric::{path_distance, shape_distance, total_distance, Reference};
use crate::model::{fit_ts_model, rank1_fit, Provenance};
use crate::phantom::{build_sim_set, synth_svf, SimConfig, SimSetId, BORDER};
use crate::registration::RegParams;
use crate::svf::{exp_svf, invert_svf};
use crate::align::align_pair;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

fn small_config() -> SimConfig {
    SimConfig {
        dims: vec![64, 64],
        path_amp: 2.0,
        shape_amp: 2.0,
        sigma: 6.0,
        ..SimConfig::default()
    }
}

/// Integrates `dx/dt = v(x)` over unit time with classical RK4.
pub fn rk4_flow(v: &VectorField, start: Vec3, steps: usize) -> Result<Vec3> {
    let d = v.ndim();
    let h = 1.0 / steps as f64;
    let eval = |p: Vec3| -> Result<Vec3> {
        let w = interp_vector(v, &p[..d])?;
        let mut out = [0.0; 3];
        out[..d].copy_from_slice(&w);
        Ok(out)
    };
    let add = |p: Vec3, k: Vec3, s: f64| [p[0] + s * k[0], p[1] + s * k[1], p[2] + s * k[2]];
    let mut x = start;
    for _ in 0..steps {
        let k1 = eval(x)?;
        let k2 = eval(add(x, k1, h / 2.0))?;
        let k3 = eval(add(x, k2, h / 2.0))?;
        let k4 = eval(add(x, k3, h))?;
        for c in 0..3 {
            x[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
    }
    Ok(x)
}

fn mean_norm_interior(f: &VectorField, margin: usize) -> (f64, f64) {
    let g = f.geom();
    let dims = g.dims3();
    let d = g.ndim();
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut n = 0;
    for i in 0..g.len() {
        let v = g.voxel(i);
        if (0..d).all(|a| v[a] >= margin && v[a] + margin < dims[a]) {
            let m = crate::grid::norm(f.vector(i));
            sum += m;
            max = max.max(m);
            n += 1;
        }
    }
    (sum / n as f64, max)
}

fn difference(a: &VectorField, b: &VectorField) -> VectorField {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    VectorField::new(a.geom().clone(), a.role(), data).expect("same geometry")
}

fn check_svf_algebra() -> Result<Vec<CheckOutcome>> {
    let cfg = small_config();
    let mut out = Vec::new();

    let zero = VectorField::zeros(GridGeom::with_dims(&cfg.dims)?, FieldRole::Velocity);
    let e0 = exp_svf(&zero, 1.0)?;
    out.push(CheckOutcome::new(
        "svf: exp(0) = id",
        e0.data().iter().all(|&c| c == 0.0),
        "exact zero displacement".into(),
    ));

    let v = synth_svf(&cfg, 4.0, 11)?;
    let whole = exp_svf(&v, 1.0)?;
    let parts = compose_disp(&exp_svf(&v, 0.4)?, &exp_svf(&v, 0.6)?)?;
    let (mean, _) = mean_norm_interior(&difference(&whole, &parts), 0);
    out.push(CheckOutcome::new(
        "svf: one-parameter subgroup",
        mean <= 0.05,
        format!("mean |exp(v) - exp(0.4v)∘exp(0.6v)| = {mean:.4} (<= 0.05)"),
    ));

    // Default smoothness; interior excludes the taper ramp next to the border.
    let wide = SimConfig::default();
    let v3 = synth_svf(&wide, 3.0, 12)?;
    let round = compose_disp(&exp_svf(&v3, 1.0)?, &invert_svf(&v3)?)?;
    let (_, max) = mean_norm_interior(&round, BORDER + wide.sigma as usize);
    out.push(CheckOutcome::new(
        "svf: exp/inverse round trip",
        max <= 0.1,
        format!("max interior |exp(v)∘exp(-v) - id| = {max:.4} (<= 0.1)"),
    ));

    let g = v.geom();
    let mut err = 0.0;
    for i in 0..g.len() {
        let vox = g.voxel(i);
        let start = [vox[0] as f64, vox[1] as f64, vox[2] as f64];
        let end = rk4_flow(&v, start, 64)?;
        let u = whole.vector(i);
        err += crate::grid::norm([
            start[0] + u[0] - end[0],
            start[1] + u[1] - end[1],
            start[2] + u[2] - end[2],
        ]);
    }
    let mean = err / g.len() as f64;
    out.push(CheckOutcome::new(
        "svf: exp vs RK4 flow",
        mean <= 0.05,
        format!("mean endpoint error = {mean:.4} voxel (<= 0.05)"),
    ));
    Ok(out)
}

fn check_rank1() -> Result<CheckOutcome> {
    let cfg = small_config();
    let v = synth_svf(&cfg, 3.0, 21)?;
    let truth = [0.3, 0.7, 1.0];
    let times = [1.0, 2.0, 3.0];
    let fields: Vec<VectorField> = truth.iter().map(|&g| v.scaled(g)).collect();
    let fit = rank1_fit(&fields, &times, 0.0)?;
    let worst = fit
        .gammas
        .iter()
        .zip(truth)
        .map(|(g, t)| ((g - t) / t).abs())
        .fold(0.0, f64::max);
    Ok(CheckOutcome::new(
        "rank-1 fit exactness",
        worst <= 1e-6,
        format!("worst relative γ error = {worst:.2e} (<= 1e-6)"),
    ))
}

fn check_pipeline() -> Result<Vec<CheckOutcome>> {
    let cfg = small_config();
    let reg = RegParams::default();
    let set = build_sim_set(SimSetId::PathOnly, &cfg)?;
    let a = fit_ts_model(&set.frames_i, &set.times_i, Provenance::Longitudinal, &reg)?;
    let b = fit_ts_model(&set.frames_j, &set.times_j, Provenance::Longitudinal, &reg)?;

    let mut out = Vec::new();
    for (name, m) in [("self distance D(A, A)", &a), ("self distance D(B, B)", &b)] {
        let r = total_distance(m, m, None, &reg, 101, Reference::B)?;
        out.push(CheckOutcome::new(
            name,
            r.total <= 1e-6,
            format!("D = {:.3e} (<= 1e-6)", r.total),
        ));
    }

    let pair = align_pair(&a, &b, None)?;
    let shape = shape_distance(&pair, &reg)?;
    let coarse = path_distance(&pair, &shape.velocity, 101)?.dp;
    let fine = path_distance(&pair, &shape.velocity, 201)?.dp;
    let rel = (fine - coarse).abs() / coarse.max(f64::MIN_POSITIVE);
    out.push(CheckOutcome::new(
        "temporal max stability",
        rel <= 0.01,
        format!("dp(101) = {coarse:.4}, dp(201) = {fine:.4}, change {:.3}% (<= 1%)", 100.0 * rel),
    ));
    Ok(out)
}

/// Runs every check; errors inside a check are reported as failures.
pub fn run() -> Vec<CheckOutcome> {
    let started = Instant::now();
    let mut out = Vec::new();
    match check_svf_algebra() {
        Ok(v) => out.extend(v),
        Err(e) => out.push(CheckOutcome::new("svf algebra", false, e.to_string())),
    }
    match check_rank1() {
        Ok(c) => out.push(c),
        Err(e) => out.push(CheckOutcome::new("rank-1 fit exactness", false, e.to_string())),
    }
    match check_pipeline() {
        Ok(v) => out.extend(v),
        Err(e) => out.push(CheckOutcome::new("phantom pipeline", false, e.to_string())),
    }
    let secs = started.elapsed().as_secs_f64();
    out.push(CheckOutcome::new(
        "selftest runtime",
        secs <= 60.0,
        format!("{secs:.1} s (<= 60 s)"),
    ));
    out
}
