use proptest::prelude::*;
use tsmetric::selftest::rk4_flow;
use tsmetric::*;

fn small(dims: &[usize]) -> SimConfig {
    SimConfig {
        dims: dims.to_vec(),
        sigma: 6.0,
        ..SimConfig::default()
    }
}

fn sub(a: &VectorField, b: &VectorField) -> VectorField {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    VectorField::new(a.geom().clone(), a.role(), data).unwrap()
}

fn interior(geom: &GridGeom, margin: usize) -> Mask {
    let dims = geom.dims3();
    let d = geom.ndim();
    let values = (0..geom.len())
        .map(|i| {
            let v = geom.voxel(i);
            (0..d).all(|a| v[a] >= margin && v[a] + margin < dims[a])
        })
        .collect();
    Mask::new(geom.clone(), values).unwrap()
}

fn masked_max(map: &ScalarImage, mask: &Mask) -> f64 {
    map.values()
        .iter()
        .zip(mask.values())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v as f64)
        .fold(0.0, f64::max)
}

#[test]
fn warp_round_trip_preserves_image() {
    let cfg = small(&[64, 64]);
    let img = shepp_logan(&cfg.dims).unwrap().gaussian_smooth(2.0).unwrap();
    let v = synth_svf(&cfg, 1.0, 3).unwrap();
    let there = warp_image(&img, &exp_svf(&v, 1.0).unwrap()).unwrap();
    let back = warp_image(&there, &invert_svf(&v).unwrap()).unwrap();
    let err: f64 = back
        .values()
        .iter()
        .zip(img.values())
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / img.values().len() as f64;
    let range = img.max();
    assert!(err <= 0.005 * range, "mean abs diff {err} vs range {range}");
}

/// Interior means outside the zeroed band and the taper ramp of the field.
#[test]
fn compose_with_inverse_is_identity() {
    let cfg = SimConfig::default();
    let margin = tsmetric::phantom::BORDER + cfg.sigma as usize;
    for seed in 1..5 {
        let v = synth_svf(&cfg, 3.0, seed).unwrap();
        let round = compose_disp(&exp_svf(&v, 1.0).unwrap(), &invert_svf(&v).unwrap()).unwrap();
        let worst = masked_max(&magnitude_map(&round), &interior(v.geom(), margin));
        assert!(worst <= 0.1, "seed {seed}: max interior residual {worst}");
    }
}

#[test]
fn interpolation_reproduces_constants_and_clamps() {
    let geom = GridGeom::with_dims(&[5, 4, 3]).unwrap();
    let img = ScalarImage::filled(geom.clone(), 2.5);
    for p in [[0.3, 1.7, 0.2], [-4.0, 9.0, 1.5], [4.0, 3.0, 2.0]] {
        assert_eq!(interp_scalar(&img, &p).unwrap(), 2.5);
    }
    let ramp = ScalarImage::from_fn(geom, |v| v[0] as f64).unwrap();
    assert_eq!(interp_scalar(&ramp, &[2.25, 1.0, 1.0]).unwrap(), 2.25);
    assert_eq!(interp_scalar(&ramp, &[-3.0, 1.0, 1.0]).unwrap(), 0.0);
    assert_eq!(interp_scalar(&ramp, &[7.0, 1.0, 1.0]).unwrap(), 4.0);
}

proptest! {
    #[test]
    fn magnitude_matches_scalar_loop(
        nx in 2usize..6,
        ny in 2usize..6,
        three in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let dims = if three { vec![nx, ny, 2] } else { vec![nx, ny] };
        let geom = GridGeom::with_dims(&dims).unwrap();
        let d = dims.len();
        let mut state = seed | 1;
        let data: Vec<f32> = (0..geom.len() * d)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 20001) as f32 / 1000.0 - 10.0
            })
            .collect();
        let field = VectorField::new(geom.clone(), FieldRole::Velocity, data.clone()).unwrap();
        let map = magnitude_map(&field);
        for i in 0..geom.len() {
            let mut s = 0.0f64;
            for c in 0..d {
                let x = data[i * d + c] as f64;
                s += x * x;
            }
            prop_assert_eq!(map.values()[i], s.sqrt() as f32);
        }
    }
}

#[test]
fn foreground_mask_matches_brute_force() {
    let a = shepp_logan(&[48, 48]).unwrap();
    let b = ScalarImage::from_fn(a.geom().clone(), |v| 0.5 * a.at(v)).unwrap();
    let mask = foreground_mask(&a, &b, 0.3).unwrap();
    let (ta, tb) = (0.3 * a.max(), 0.3 * b.max());
    for i in 0..a.values().len() {
        let want = a.get(i) > ta || b.get(i) > tb;
        assert_eq!(mask.values()[i], want, "voxel {i}");
    }
    assert!(foreground_mask(&a, &b, 1.0).is_err());
}

#[test]
fn one_parameter_subgroup() {
    let cfg = small(&[64, 64]);
    let v = synth_svf(&cfg, 4.0, 9).unwrap();
    for (s1, s2) in [(0.4, 0.6), (0.25, 0.75), (0.5, 0.5)] {
        let whole = exp_svf(&v, s1 + s2).unwrap();
        let parts = compose_disp(&exp_svf(&v, s1).unwrap(), &exp_svf(&v, s2).unwrap()).unwrap();
        let full = Mask::full(v.geom().clone());
        let mean = mean_over_mask(&magnitude_map(&sub(&whole, &parts)), &full).unwrap();
        assert!(mean <= 0.05, "s1 = {s1}: mean {mean}");
    }
}

#[test]
fn exp_agrees_with_rk4() {
    let cfg = small(&[48, 48]);
    let v = synth_svf(&cfg, 4.0, 17).unwrap();
    let disp = exp_svf(&v, 1.0).unwrap();
    let geom = v.geom();
    let mut total = 0.0;
    for i in 0..geom.len() {
        let vox = geom.voxel(i);
        let start = [vox[0] as f64, vox[1] as f64, vox[2] as f64];
        let end = rk4_flow(&v, start, 64).unwrap();
        let u = disp.vector(i);
        let e: f64 = (0..3).map(|c| (start[c] + u[c] - end[c]).powi(2)).sum();
        total += e.sqrt();
    }
    let mean = total / geom.len() as f64;
    assert!(mean <= 0.05, "mean endpoint error {mean}");
}

#[test]
fn exp_agrees_with_rk4_in_3d() {
    let cfg = SimConfig {
        dims: vec![20, 20, 20],
        sigma: 4.0,
        ..SimConfig::default()
    };
    let v = synth_svf(&cfg, 2.0, 4).unwrap();
    let disp = exp_svf(&v, 1.0).unwrap();
    let geom = v.geom();
    let mut total = 0.0;
    for i in (0..geom.len()).step_by(7) {
        let vox = geom.voxel(i);
        let start = [vox[0] as f64, vox[1] as f64, vox[2] as f64];
        let end = rk4_flow(&v, start, 64).unwrap();
        let u = disp.vector(i);
        let e: f64 = (0..3).map(|c| (start[c] + u[c] - end[c]).powi(2)).sum();
        total += e.sqrt();
    }
    let mean = total / geom.len().div_ceil(7) as f64;
    assert!(mean <= 0.05, "mean endpoint error {mean}");
}

#[test]
fn transport_along_own_flow_is_identity() {
    let cfg = small(&[64, 64]);
    let v = synth_svf(&cfg, 2.0, 23).unwrap();
    let out = parallel_transport(&v, &v, TransportMethod::ConjugatePushforward).unwrap();
    let rel = sub(&out.field, &v).l2() / v.l2();
    assert!(rel <= 0.05, "relative L2 {rel}");
    assert_eq!(out.fallbacks, 0);
}

#[test]
fn transport_under_translation_is_resampling() {
    let geom = GridGeom::with_dims(&[32, 32]).unwrap();
    let u = VectorField::from_fn(geom.clone(), FieldRole::Velocity, |v| {
        let x = v[0] as f64 / 31.0;
        [x, 1.0 - x, 0.0]
    })
    .unwrap();
    let shift = VectorField::from_fn(geom.clone(), FieldRole::Velocity, |_| [0.5, 0.0, 0.0]).unwrap();
    let out = parallel_transport(&u, &shift, TransportMethod::ConjugatePushforward).unwrap();
    for i in 0..geom.len() {
        let vox = geom.voxel(i);
        let want = interp_vector(&u, &[vox[0] as f64 + 0.5, vox[1] as f64]).unwrap();
        let got = out.field.vector(i);
        assert!((got[0] - want[0]).abs() < 1e-6 && (got[1] - want[1]).abs() < 1e-6);
    }
}

#[test]
fn bch_approximates_composition() {
    let cfg = small(&[64, 64]);
    let a = synth_svf(&cfg, 1.0, 31).unwrap();
    let b = synth_svf(&cfg, 1.0, 32).unwrap();
    let lhs = exp_svf(&bch_combine(&a, &b).unwrap(), 1.0).unwrap();
    let rhs = compose_disp(&exp_svf(&a, 1.0).unwrap(), &exp_svf(&b, 1.0).unwrap()).unwrap();
    let full = Mask::full(a.geom().clone());
    let mean = mean_over_mask(&magnitude_map(&sub(&lhs, &rhs)), &full).unwrap();
    assert!(mean <= 0.05, "mean {mean}");
}

#[test]
fn jacobian_of_flow_is_positive() {
    let cfg = SimConfig::default();
    let v = synth_svf(&cfg, 3.0, 42).unwrap();
    let jac = jacobian(&exp_svf(&v, 1.0).unwrap());
    assert!(jac.min_det() > 0.05, "min det {}", jac.min_det());
}

#[test]
fn geometry_mismatch_is_rejected() {
    let a = VectorField::zeros(GridGeom::with_dims(&[8, 8]).unwrap(), FieldRole::Displacement);
    let b = VectorField::zeros(GridGeom::with_dims(&[8, 9]).unwrap(), FieldRole::Displacement);
    assert!(matches!(compose_disp(&a, &b), Err(Error::Geometry(_))));
    let img = ScalarImage::filled(GridGeom::with_dims(&[8, 9]).unwrap(), 1.0);
    assert!(warp_image(&img, &a).is_err());
}
