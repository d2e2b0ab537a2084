//! Stationary velocity field algebra: exponential by scaling and squaring,
//! inverse, Jacobians, first-order BCH and transport of velocities between
//! anatomies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{
    compose_disp, gradient_channel, resample_field, FieldRole, Vec3, VectorField,
};

/// Seed displacements are halved until their largest norm is at most this many voxels.
pub const SQUARING_THRESHOLD: f64 = 0.5;

/// Determinant magnitude below which a Jacobian is treated as singular.
pub const SINGULAR_DET: f64 = 1e-8;

/// Displacement of `exp(s * v)`.
pub fn exp_svf(v: &VectorField, s: f64) -> Result<VectorField> {
    v.expect_role(FieldRole::Velocity)?;
    if !s.is_finite() {
        return Err(crate::Error::Domain(format!("non-finite exponential scale {s}")));
    }
    let max = v.max_norm() * s.abs();
    let steps = if max <= SQUARING_THRESHOLD {
        0
    } else {
        (max / SQUARING_THRESHOLD).log2().ceil() as i32
    };
    let seed_scale = s / 2f64.powi(steps);
    let seed = v.scaled(seed_scale);
    let mut disp = VectorField::new(seed.geom().clone(), FieldRole::Displacement, seed.data().to_vec())?;
    for _ in 0..steps {
        disp = compose_disp(&disp, &disp)?;
    }
    Ok(disp)
}

/// Displacement of `exp(-v)`.
pub fn invert_svf(v: &VectorField) -> Result<VectorField> {
    exp_svf(v, -1.0)
}

/// First-order Baker-Campbell-Hausdorff combination, `a + b`.
pub fn bch_combine(a: &VectorField, b: &VectorField) -> Result<VectorField> {
    a.geom().check_same(b.geom(), "bch_combine")?;
    a.expect_role(FieldRole::Velocity)?;
    b.expect_role(FieldRole::Velocity)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 + y as f64) as f32)
        .collect();
    VectorField::new(a.geom().clone(), FieldRole::Velocity, data)
}

/// Per-voxel 3x3 matrices; 2D grids keep the unused row and column at identity.
#[derive(Clone, Debug)]
pub struct JacobianField {
    ndim: usize,
    mats: Vec<[[f64; 3]; 3]>,
}

impl JacobianField {
    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn matrix(&self, idx: usize) -> [[f64; 3]; 3] {
        self.mats[idx]
    }

    pub fn det(&self, idx: usize) -> f64 {
        det3(&self.mats[idx])
    }

    pub fn min_det(&self) -> f64 {
        (0..self.mats.len()).map(|i| self.det(i)).fold(f64::INFINITY, f64::min)
    }
}

/// Jacobian of `id + disp`, by central differences inside and one-sided
/// differences on the boundary.
pub fn jacobian(disp: &VectorField) -> JacobianField {
    let geom = disp.geom();
    let d = disp.ndim();
    let data = disp.data();
    // rows[c][i] = gradient of component c at voxel i
    let rows: Vec<Vec<Vec3>> = (0..d)
        .map(|c| gradient_channel(geom, |i| data[i * d + c] as f64))
        .collect();
    let mats = (0..geom.len())
        .into_par_iter()
        .map(|i| {
            let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            for (c, row) in rows.iter().enumerate() {
                for a in 0..d {
                    m[c][a] += row[i][a];
                }
            }
            m
        })
        .collect();
    JacobianField { ndim: d, mats }
}

pub(crate) fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Solves `m x = b` by Cramer's rule; `None` when `|det m| < SINGULAR_DET`.
pub(crate) fn solve3(m: &[[f64; 3]; 3], b: Vec3) -> Option<Vec3> {
    let det = det3(m);
    if det.abs() < SINGULAR_DET {
        return None;
    }
    let mut x = [0.0; 3];
    for (col, xc) in x.iter_mut().enumerate() {
        let mut r = *m;
        for row in 0..3 {
            r[row][col] = b[row];
        }
        *xc = det3(&r) / det;
    }
    Some(x)
}

/// How velocities are carried from one anatomy to another.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportMethod {
    /// `(Dφ)^-1 · u∘φ` with `φ = exp(V_S)`.
    #[default]
    ConjugatePushforward,
}

#[derive(Clone, Debug)]
pub struct Transported {
    pub field: VectorField,
    /// Voxels whose Jacobian was singular and were only resampled.
    pub fallbacks: usize,
}

/// Re-expresses velocity `u` in the frame reached through `exp(shape_velocity)`.
pub fn parallel_transport(
    u: &VectorField,
    shape_velocity: &VectorField,
    method: TransportMethod,
) -> Result<Transported> {
    u.geom().check_same(shape_velocity.geom(), "parallel_transport")?;
    u.expect_role(FieldRole::Velocity)?;
    shape_velocity.expect_role(FieldRole::Velocity)?;
    match method {
        TransportMethod::ConjugatePushforward => conjugate_pushforward(u, shape_velocity),
    }
}

fn conjugate_pushforward(u: &VectorField, shape_velocity: &VectorField) -> Result<Transported> {
    let phi = exp_svf(shape_velocity, 1.0)?;
    let jac = jacobian(&phi);
    let moved = resample_field(u, &phi)?;
    let solved: Vec<(Vec3, bool)> = (0..u.geom().len())
        .into_par_iter()
        .map(|i| {
            let w = moved.vector(i);
            match solve3(&jac.mats[i], w) {
                Some(x) => (x, false),
                None => (w, true),
            }
        })
        .collect();
    let fallbacks = solved.iter().filter(|(_, f)| *f).count();
    let vectors: Vec<Vec3> = solved.into_iter().map(|(v, _)| v).collect();
    Ok(Transported {
        field: VectorField::from_vectors(u.geom().clone(), FieldRole::Velocity, &vectors)?,
        fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeom;

    fn constant(g: &GridGeom, role: FieldRole, c: Vec3) -> VectorField {
        VectorField::from_fn(g.clone(), role, move |_| c).unwrap()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let g = GridGeom::with_dims(&[8, 8]).unwrap();
        let v = VectorField::zeros(g.clone(), FieldRole::Velocity);
        for s in [0.0, 1.0, -3.5] {
            let d = exp_svf(&v, s).unwrap();
            assert_eq!(d.role(), FieldRole::Displacement);
            assert!(d.data().iter().all(|&c| c == 0.0));
        }
        let w = constant(&g, FieldRole::Velocity, [2.0, 1.0, 0.0]);
        assert!(exp_svf(&w, 0.0).unwrap().data().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn exp_of_constant_is_translation() {
        let g = GridGeom::with_dims(&[10, 9]).unwrap();
        let v = constant(&g, FieldRole::Velocity, [1.5, -0.75, 0.0]);
        let d = exp_svf(&v, 2.0).unwrap();
        for i in 0..g.len() {
            assert_eq!(d.vector(i), [3.0, -1.5, 0.0]);
        }
        let inv = invert_svf(&v).unwrap();
        for i in 0..g.len() {
            assert_eq!(inv.vector(i), [-1.5, 0.75, 0.0]);
        }
    }

    #[test]
    fn exp_requires_velocity() {
        let g = GridGeom::with_dims(&[4, 4]).unwrap();
        let d = VectorField::zeros(g, FieldRole::Displacement);
        assert!(exp_svf(&d, 1.0).is_err());
    }

    #[test]
    fn jacobian_cases() {
        let g = GridGeom::with_dims(&[7, 6]).unwrap();
        let zero = VectorField::zeros(g.clone(), FieldRole::Displacement);
        let j = jacobian(&zero);
        for i in 0..g.len() {
            assert_eq!(j.matrix(i), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        }
        let shift = constant(&g, FieldRole::Displacement, [0.3, 2.0, 0.0]);
        assert_eq!(jacobian(&shift).min_det(), 1.0);

        // A = [[0.25, -0.5], [0.125, 0.375]]: dyadic entries keep f32 storage exact.
        let lin = VectorField::from_fn(g.clone(), FieldRole::Displacement, |v| {
            let (x, y) = (v[0] as f64, v[1] as f64);
            [0.25 * x - 0.5 * y, 0.125 * x + 0.375 * y, 0.0]
        })
        .unwrap();
        let j = jacobian(&lin);
        for i in 0..g.len() {
            let m = j.matrix(i);
            assert_eq!(m[0][0], 1.25);
            assert_eq!(m[0][1], -0.5);
            assert_eq!(m[1][0], 0.125);
            assert_eq!(m[1][1], 1.375);
        }
    }

    #[test]
    fn solve_matches_inverse() {
        let m = [[2.0, 1.0, 0.0], [0.5, 3.0, 0.0], [0.0, 0.0, 1.0]];
        let x = solve3(&m, [1.0, 2.0, 0.0]).unwrap();
        let back = [
            m[0][0] * x[0] + m[0][1] * x[1],
            m[1][0] * x[0] + m[1][1] * x[1],
        ];
        assert!((back[0] - 1.0).abs() < 1e-12 && (back[1] - 2.0).abs() < 1e-12);
        assert!(solve3(&[[0.0; 3]; 3], [1.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn transport_identity_and_translation() {
        let g = GridGeom::with_dims(&[12, 10]).unwrap();
        let u = VectorField::from_fn(g.clone(), FieldRole::Velocity, |v| {
            [(v[0] as f64 * 0.4).sin(), (v[1] as f64 * 0.3).cos(), 0.0]
        })
        .unwrap();
        let zero = VectorField::zeros(g.clone(), FieldRole::Velocity);
        let t = parallel_transport(&u, &zero, TransportMethod::ConjugatePushforward).unwrap();
        assert_eq!(t.field, u);
        assert_eq!(t.fallbacks, 0);

        let cu = constant(&g, FieldRole::Velocity, [0.5, -1.0, 0.0]);
        let cv = constant(&g, FieldRole::Velocity, [1.25, 0.5, 0.0]);
        let t = parallel_transport(&cu, &cv, TransportMethod::default()).unwrap();
        assert_eq!(t.field, cu);
    }

    #[test]
    fn bch_is_sum() {
        let g = GridGeom::with_dims(&[5, 5]).unwrap();
        let a = constant(&g, FieldRole::Velocity, [1.0, 2.0, 0.0]);
        let z = VectorField::zeros(g.clone(), FieldRole::Velocity);
        assert_eq!(bch_combine(&a, &z).unwrap(), a);
        let b = constant(&g, FieldRole::Velocity, [-0.5, 0.25, 0.0]);
        let ab = bch_combine(&a, &b).unwrap();
        let composed = compose_disp(&exp_svf(&a, 1.0).unwrap(), &exp_svf(&b, 1.0).unwrap()).unwrap();
        assert_eq!(exp_svf(&ab, 1.0).unwrap(), composed);
    }
}
