use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::Tensor;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn zero_in_zero_out() {
    let g = Geometry::new(16, 12, 25).unwrap();
    assert_eq!(project(&Tensor::zeros(&[16, 16]), &g).unwrap().max_abs(), 0.0);
    assert_eq!(backproject(&Tensor::zeros(&[12, 25]), &g).unwrap().max_abs(), 0.0);
    assert_eq!(fbp(&Tensor::zeros(&[12, 25]), &g).unwrap().max_abs(), 0.0);
}

#[test]
fn shape_mismatch_rejected() {
    let g = Geometry::new(16, 12, 25).unwrap();
    assert!(project(&Tensor::zeros(&[15, 16]), &g).is_err());
    assert!(backproject(&Tensor::zeros(&[12, 24]), &g).is_err());
    assert!(fbp(&Tensor::zeros(&[11, 25]), &g).is_err());
}

#[test]
fn center_pixel_chord_at_angle_zero() {
    // odd grid so one pixel sits on the rotation axis
    let n = 33;
    let g = Geometry::new(n, 4, 47).unwrap();
    let mut img = Tensor::zeros(&[n, n]);
    *img.at_mut(16, 16) = 1.0;
    let s = project(&img, &g).unwrap();
    let central = 23;
    // a vertical ray through a unit pixel has chord length 1
    assert!((s.at(0, central) - 1.0).abs() < 1e-14);
    for d in 0..47 {
        if d != central {
            assert!(s.at(0, d).abs() < 1e-14, "detector {d} reads {}", s.at(0, d));
        }
    }
    // at 45 degrees the support is limited to neighbouring detectors
    let v45 = 1;
    for d in 0..47 {
        if (d as isize - central as isize).abs() > 1 {
            assert_eq!(s.at(v45, d), 0.0);
        }
    }
    // axis-aligned views integrate the unit mass over unit detector spacing
    for v in [0, 2] {
        let total: f64 = s.row(v).iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "view {v} mass {total}");
    }
}

#[test]
fn projector_is_homogeneous_and_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = Geometry::new(24, 18, 37).unwrap();
    let x = Tensor::randn(&[24, 24], &mut rng);
    let y = Tensor::randn(&[24, 24], &mut rng);
    let a = 2.75;
    let px = project(&x, &g).unwrap();
    let pax = project(&x.scale(a), &g).unwrap();
    assert!(pax.sub(&px.scale(a)).max_abs() <= 1e-12 * px.max_abs());
    let pxy = project(&x.add(&y), &g).unwrap();
    let sum = px.add(&project(&y, &g).unwrap());
    assert!(pxy.sub(&sum).max_abs() <= 1e-12 * sum.max_abs());
    let f = fbp(&px, &g).unwrap();
    let fa = fbp(&px.scale(a), &g).unwrap();
    assert!(fa.sub(&f.scale(a)).max_abs() <= 1e-12 * fa.max_abs());
}

#[test]
fn projector_adjoint_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = Geometry::new(32, 60, 47).unwrap();
    for _ in 0..10 {
        let x = Tensor::randn(&[32, 32], &mut rng);
        let y = Tensor::randn(&[60, 47], &mut rng);
        let lhs = project(&x, &g).unwrap().dot(&y);
        let rhs = x.dot(&backproject(&y, &g).unwrap());
        assert!(rel(lhs, rhs) <= 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn impulse_backprojects_along_ray() {
    let n = 33;
    let g = Geometry::new(n, 2, 47).unwrap();
    // view 0 is θ = 0 (vertical rays), view 1 is θ = π/2 (horizontal rays)
    let mut s = Tensor::zeros(&[2, 47]);
    *s.at_mut(0, 23) = 1.0;
    let b = backproject(&s, &g).unwrap();
    for i in 0..n {
        for j in 0..n {
            let expect = if j == 16 { 1.0 } else { 0.0 };
            assert!((b.at(i, j) - expect).abs() < 1e-14);
        }
    }
    let mut s = Tensor::zeros(&[2, 47]);
    *s.at_mut(1, 23) = 1.0;
    let b = backproject(&s, &g).unwrap();
    for i in 0..n {
        for j in 0..n {
            let expect = if i == 16 { 1.0 } else { 0.0 };
            assert!((b.at(i, j) - expect).abs() < 1e-14);
        }
    }
}

#[test]
fn select_embed_are_adjoint_and_partial_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let sel = ViewSelector::new(4, 1).unwrap();
    let s = Tensor::randn(&[60, 9], &mut rng);
    let t = Tensor::randn(&[15, 9], &mut rng);
    let lhs = select_views(&s, &sel).unwrap().dot(&t);
    let rhs = s.dot(&embed_views(&t, &sel, 60).unwrap());
    assert!(rel(lhs, rhs) <= 1e-12);
    let round = select_views(&embed_views(&t, &sel, 60).unwrap(), &sel).unwrap();
    assert_eq!(round, t);
    let id = ViewSelector::new(1, 0).unwrap();
    assert_eq!(select_views(&s, &id).unwrap(), s);
    assert_eq!(embed_views(&s, &id, 60).unwrap(), s);
}

#[test]
fn non_dividing_rate_rejected() {
    let sel = ViewSelector::new(7, 0).unwrap();
    assert!(select_views(&Tensor::zeros(&[60, 3]), &sel).is_err());
    assert!(ViewSelector::new(4, 4).is_err());
    assert!(ViewSelector::new(0, 0).is_err());
}

#[test]
fn phantom_basic_properties() {
    assert!(shepp_logan(15).is_err());
    let p = shepp_logan(64).unwrap();
    assert_eq!(p.at(0, 0), 0.0);
    assert_eq!(p.at(63, 63), 0.0);
    assert_eq!(p.at(0, 63), 0.0);
    assert!(p.min() >= 0.0 && p.max() <= 1.0);
    assert_eq!(p.max(), 1.0);
}

/// Independent membership test in matrix form: the ellipse is
/// `{ q : (q - q0)ᵀ M (q - q0) ≤ 1 }`.
fn oracle_phantom(n: usize) -> Tensor {
    let table = [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
        [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
        [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
        [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
        [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
        [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
        [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
        [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
        [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
    ];
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let x = -1.0 + (2 * j + 1) as f64 / n as f64;
            let y = 1.0 - (2 * i + 1) as f64 / n as f64;
            let mut v = 0.0;
            for [amp, a, b, x0, y0, deg] in table {
                let th: f64 = deg * std::f64::consts::PI / 180.0;
                let (s, c) = (th.sin(), th.cos());
                let m11 = c * c / (a * a) + s * s / (b * b);
                let m22 = s * s / (a * a) + c * c / (b * b);
                let m12 = c * s * (1.0 / (a * a) - 1.0 / (b * b));
                let (dx, dy) = (x - x0, y - y0);
                if m11 * dx * dx + 2.0 * m12 * dx * dy + m22 * dy * dy <= 1.0 {
                    v += amp;
                }
            }
            *out.at_mut(i, j) = f64::clamp(v, 0.0, 1.0);
        }
    }
    out
}

#[test]
fn phantom_matches_ellipse_membership_oracle() {
    let p = shepp_logan(128).unwrap();
    let o = oracle_phantom(128);
    let count = |t: &Tensor| t.data().iter().filter(|&&v| v > 0.0).count();
    assert_eq!(count(&p), count(&o));
    assert!((p.sum() - o.sum()).abs() < 1e-9, "{} vs {}", p.sum(), o.sum());
    assert!(p.sub(&o).max_abs() < 1e-12);
}

#[test]
fn fbp_recovers_disc_interior() {
    // a uniform disc reconstructs to ~1 in its interior
    let n = 64;
    let g = Geometry::new(n, 180, Geometry::covering_detectors(n)).unwrap();
    let mut disc = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (j as f64 - 31.5, 31.5 - i as f64);
            if x * x + y * y <= 20.0 * 20.0 {
                *disc.at_mut(i, j) = 1.0;
            }
        }
    }
    let rec = fbp(&project(&disc, &g).unwrap(), &g).unwrap();
    for (i, j) in [(32, 32), (25, 35), (40, 28)] {
        assert!((rec.at(i, j) - 1.0).abs() < 0.03, "pixel ({i},{j}) = {}", rec.at(i, j));
    }
    assert!(rec.at(2, 2).abs() < 0.03);
    let hann = fbp_with(&project(&disc, &g).unwrap(), &g, RampWindow::Hann).unwrap();
    assert!((hann.at(32, 32) - 1.0).abs() < 0.05);
}
