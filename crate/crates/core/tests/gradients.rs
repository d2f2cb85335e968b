//! Analytic gradients against central finite differences.

use lama_core::conv::{ConvLayer, LayerStack};
use lama_core::objective::{fidelity, grad_phi_eps, grad_x_f, grad_z_f, phi_eps, FidelityModel};
use lama_core::regularizer::{position_norms, Regularizer, Role};
use lama_core::tomo::{Geometry, ViewSelector};
use lama_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-6;

/// Relative error of `⟨grad, dir⟩` against a central difference of `f`.
fn directional_error(f: impl Fn(&Tensor) -> f64, at: &Tensor, grad: &Tensor, dir: &Tensor) -> f64 {
    let plus = at.add(&dir.scale(H));
    let minus = at.sub(&dir.scale(H));
    let fd = (f(&plus) - f(&minus)) / (2.0 * H);
    let an = grad.dot(dir);
    (fd - an).abs() / (grad.norm() * dir.norm()).max(1e-12)
}

fn two_layer(in_ch: usize, rng: &mut ChaCha8Rng) -> LayerStack {
    LayerStack::random(&[in_ch, 3, 2], (3, 3), 0.5, true, rng).unwrap()
}

/// True when no position norm sits within `margin` of `eps`.
fn clear_of_band(reg: &Regularizer, y: &Tensor, eps: f64, margin: f64) -> bool {
    position_norms(&reg.features(y).unwrap())
        .iter()
        .all(|n| (n - eps).abs() > margin)
}

fn instance(seed: u64) -> (FidelityModel, Regularizer, Regularizer, Tensor, Tensor, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Geometry::new(8, 6, 13).unwrap();
    let sel = ViewSelector::new(2, 1).unwrap();
    let s0 = Tensor::randn(&[3, 13], &mut rng);
    let model = FidelityModel::new(g, sel, s0, 0.7).unwrap();
    let r = Regularizer::new(two_layer(1, &mut rng), Role::Image).unwrap();
    let q = Regularizer::new(two_layer(1, &mut rng), Role::Sinogram).unwrap();
    let x = Tensor::randn(&[8, 8], &mut rng);
    let z = Tensor::randn(&[6, 13], &mut rng);
    (model, r, q, x, z, 0.8)
}

fn seeds() -> impl Iterator<Item = u64> {
    // draw until 20 instances avoid the ‖g_i‖ ≈ ε band
    (0..200u64)
        .filter(|&s| {
            let (_, r, q, x, z, eps) = instance(s);
            clear_of_band(&r, &x, eps, 1e-3) && clear_of_band(&q, &z, eps, 1e-3)
        })
        .take(20)
}

#[test]
fn smoothed_grad_matches_finite_differences() {
    let mut count = 0;
    for s in seeds() {
        let (_, r, _, x, _, eps) = instance(s);
        let dir = Tensor::randn(x.shape(), &mut ChaCha8Rng::seed_from_u64(1000 + s));
        let g = r.smoothed_grad(&x, eps).unwrap();
        let err = directional_error(|y| r.smoothed_value(y, eps).unwrap().0, &x, &g, &dir);
        assert!(err <= TOL, "seed {s}: {err}");
        count += 1;
    }
    assert_eq!(count, 20);
}

#[test]
fn fidelity_gradients_match_finite_differences() {
    for s in seeds() {
        let (model, _, _, x, z, _) = instance(s);
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + s);
        let dx = Tensor::randn(x.shape(), &mut rng);
        let dz = Tensor::randn(z.shape(), &mut rng);
        let gx = grad_x_f(&model, &x, &z).unwrap();
        let gz = grad_z_f(&model, &x, &z).unwrap();
        let ex = directional_error(|y| fidelity(&model, y, &z).unwrap(), &x, &gx, &dx);
        let ez = directional_error(|y| fidelity(&model, &x, y).unwrap(), &z, &gz, &dz);
        assert!(ex <= TOL && ez <= TOL, "seed {s}: {ex} {ez}");
    }
}

#[test]
fn full_gradient_matches_finite_differences() {
    for s in seeds() {
        let (model, r, q, x, z, eps) = instance(s);
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + s);
        let dx = Tensor::randn(x.shape(), &mut rng);
        let dz = Tensor::randn(z.shape(), &mut rng);
        let (gx, gz) = grad_phi_eps(&model, &r, &q, &x, &z, eps).unwrap();
        let f = |x: &Tensor, z: &Tensor| phi_eps(&model, &r, &q, x, z, eps).unwrap();
        let fd = (f(&x.add(&dx.scale(H)), &z.add(&dz.scale(H)))
            - f(&x.sub(&dx.scale(H)), &z.sub(&dz.scale(H))))
            / (2.0 * H);
        let an = gx.dot(&dx) + gz.dot(&dz);
        let scale = (gx.norm_sq() + gz.norm_sq()).sqrt() * (dx.norm_sq() + dz.norm_sq()).sqrt();
        assert!((fd - an).abs() / scale <= TOL, "seed {s}");
    }
}

/// Zero-padded same-size correlation, summed directly.
fn naive_layer(input: &[Vec<Vec<f64>>], kernel: &Tensor, activate: bool, delta: f64) -> Vec<Vec<Vec<f64>>> {
    let s = kernel.shape();
    let (co, ci, kh, kw) = (s[0], s[1], s[2], s[3]);
    let (h, w) = (input[0].len(), input[0][0].len());
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let k = |o: usize, c: usize, u: usize, v: usize| kernel.data()[((o * ci + c) * kh + u) * kw + v];
    let mut out = vec![vec![vec![0.0; w]; h]; co];
    for o in 0..co {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for c in 0..ci {
                    for u in 0..kh {
                        for v in 0..kw {
                            let (y, x) = (i as isize + u as isize - ph as isize, j as isize + v as isize - pw as isize);
                            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                acc += k(o, c, u, v) * input[c][y as usize][x as usize];
                            }
                        }
                    }
                }
                out[o][i][j] = if activate { lama_core::conv::smoothed_relu(acc, delta) } else { acc };
            }
        }
    }
    out
}

#[test]
fn forward_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let stack = LayerStack::new(
        vec![
            ConvLayer::new(Tensor::randn(&[4, 1, 3, 5], &mut rng), 0.05).unwrap(),
            ConvLayer::new(Tensor::randn(&[2, 4, 3, 3], &mut rng), 0.05).unwrap(),
        ],
        true,
    )
    .unwrap();
    let x = Tensor::randn(&[8, 8], &mut rng);
    let mut cur = vec![(0..8).map(|i| x.row(i).to_vec()).collect::<Vec<_>>()];
    let n = stack.layers().len();
    for (l, layer) in stack.layers().iter().enumerate() {
        cur = naive_layer(&cur, layer.kernel(), l + 1 < n, 0.05);
    }
    let fast = stack.forward(&x).unwrap();
    let flat: Vec<f64> = cur.into_iter().flatten().flatten().collect();
    for (a, b) in fast.data().iter().zip(&flat) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn input_vjp_is_adjoint_of_finite_difference_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..5 {
        let stack = LayerStack::random(&[1, 4, 3], (3, 3), 0.7, false, &mut rng).unwrap();
        let x = Tensor::randn(&[8, 8], &mut rng);
        let u = Tensor::randn(&[8, 8], &mut rng);
        let v = Tensor::randn(&[3, 8, 8], &mut rng);
        let ju = stack
            .forward(&x.add(&u.scale(H)))
            .unwrap()
            .sub(&stack.forward(&x.sub(&u.scale(H))).unwrap())
            .scale(1.0 / (2.0 * H));
        let jtv = stack.input_vjp(&x, &v).unwrap();
        let err = (ju.dot(&v) - u.dot(&jtv)).abs() / (u.norm() * v.norm());
        assert!(err <= TOL, "{err}");
    }
}

#[test]
fn weight_vjp_matches_per_entry_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stack = LayerStack::random(&[1, 1], (3, 3), 0.7, true, &mut rng).unwrap();
    let x = Tensor::randn(&[6, 7], &mut rng);
    let cot = Tensor::randn(&[1, 6, 7], &mut rng);
    let g = &stack.weight_vjp(&x, &cot).unwrap()[0];
    for e in 0..9 {
        let bump = |s: f64| {
            let mut st = stack.clone();
            st.layers_mut()[0].kernel_mut().data_mut()[e] += s;
            st.forward(&x).unwrap().dot(&cot)
        };
        let fd = (bump(H) - bump(-H)) / (2.0 * H);
        assert!((fd - g.data()[e]).abs() <= TOL * g.norm(), "entry {e}");
    }
}
