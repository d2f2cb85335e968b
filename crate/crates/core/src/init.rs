//! Sinogram completion from sparse views and the initial image pair.
//!
//! A view-advance map `Ψ` takes the `V = n_views / p` acquired rows and
//! estimates the same sinogram one full-resolution angular step later.
//! Composing it `p - 1` times and interleaving fills in every missing view.

use serde::{Deserialize, Serialize};

use crate::conv::LayerStack;
use crate::error::{Error, Result};
use crate::tensor::{Sinogram, Tensor};
use crate::tomo::{fbp, select_views, Geometry, ViewSelector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvanceKind {
    Interpolation,
    Convolutional,
}

#[derive(Clone, Debug, PartialEq)]
enum Mapping {
    Interpolation,
    Convolutional { stack: LayerStack, skip: bool },
}

/// The view-advance map `Ψ`, bound to a full view count and a rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewAdvanceMap {
    n_views: usize,
    rate: usize,
    mapping: Mapping,
}

impl ViewAdvanceMap {
    fn check_rate(n_views: usize, rate: usize) -> Result<()> {
        if rate < 2 {
            return Err(Error::InvalidParam(format!(
                "view advance needs rate >= 2, got {rate}"
            )));
        }
        if !n_views.is_multiple_of(rate) {
            return Err(Error::InvalidParam(format!(
                "rate {rate} does not divide {n_views} views"
            )));
        }
        Ok(())
    }

    /// Angular linear interpolation between consecutive acquired views.
    pub fn interpolation(n_views: usize, rate: usize) -> Result<Self> {
        Self::check_rate(n_views, rate)?;
        Ok(ViewAdvanceMap {
            n_views,
            rate,
            mapping: Mapping::Interpolation,
        })
    }

    /// `Ψ(s) = g(s)`, or `s + g(s)` with `skip`, for a single-channel
    /// in/out stack `g`.
    pub fn convolutional(n_views: usize, rate: usize, stack: LayerStack, skip: bool) -> Result<Self> {
        Self::check_rate(n_views, rate)?;
        if stack.in_channels() != 1 || stack.out_channels() != 1 {
            return Err(Error::InvalidParam(format!(
                "advance stack must map 1 channel to 1, got {} -> {}",
                stack.in_channels(),
                stack.out_channels()
            )));
        }
        Ok(ViewAdvanceMap {
            n_views,
            rate,
            mapping: Mapping::Convolutional { stack, skip },
        })
    }

    pub fn kind(&self) -> AdvanceKind {
        match self.mapping {
            Mapping::Interpolation => AdvanceKind::Interpolation,
            Mapping::Convolutional { .. } => AdvanceKind::Convolutional,
        }
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn rate(&self) -> usize {
        self.rate
    }

    pub fn sparse_views(&self) -> usize {
        self.n_views / self.rate
    }

    pub fn stack(&self) -> Option<&LayerStack> {
        match &self.mapping {
            Mapping::Convolutional { stack, .. } => Some(stack),
            Mapping::Interpolation => None,
        }
    }

    pub fn skip(&self) -> bool {
        matches!(self.mapping, Mapping::Convolutional { skip: true, .. })
    }

    fn check_input(&self, s: &Sinogram) -> Result<()> {
        if s.shape().len() != 2 || s.rows() != self.sparse_views() {
            return Err(Error::Shape(format!(
                "advance expects {} views, got shape {:?}",
                self.sparse_views(),
                s.shape()
            )));
        }
        Ok(())
    }
}

/// Reverses detector order: the parallel-beam view at `θ + π`.
fn conjugate(row: &[f64]) -> Vec<f64> {
    row.iter().rev().copied().collect()
}

/// Cyclic shift by one acquired view, the last row taken from the conjugate
/// of the first.
pub fn wrap_shift(s: &Sinogram) -> Sinogram {
    let (v, d) = (s.rows(), s.cols());
    let mut data = Vec::with_capacity(v * d);
    for j in 1..v {
        data.extend_from_slice(s.row(j));
    }
    data.extend(conjugate(s.row(0)));
    Tensor::from_vec(&[v, d], data).expect("same shape")
}

/// Rows `-r..V+r` of the view-periodic extension of `s`: past either end
/// the views continue as conjugates, as in [`wrap_shift`].
pub fn wrap_pad(s: &Sinogram, r: usize) -> Sinogram {
    let (v, d) = (s.rows() as isize, s.cols());
    let mut data = Vec::with_capacity((s.rows() + 2 * r) * d);
    for j in -(r as isize)..v + r as isize {
        let row = s.row(j.rem_euclid(v) as usize);
        if j.div_euclid(v) % 2 == 0 {
            data.extend_from_slice(row);
        } else {
            data.extend(conjugate(row));
        }
    }
    Tensor::from_vec(&[s.rows() + 2 * r, d], data).expect("padded shape")
}

/// Row half-extent of the stack's receptive field.
fn view_radius(stack: &LayerStack) -> usize {
    stack.kernels().iter().map(|k| (k.shape()[2] - 1) / 2).sum()
}

/// Middle `v` rows of a `[1, v + 2r, d]` stack output.
fn crop_views(t: &Tensor, r: usize, v: usize) -> Sinogram {
    let d = t.shape()[2];
    Tensor::from_vec(&[v, d], t.data()[r * d..(r + v) * d].to_vec()).expect("cropped shape")
}

/// `[1, v + 2r, d]` cotangent for a cropped `[v, d]` residual.
fn uncrop_views(t: &Sinogram, r: usize) -> Tensor {
    let d = t.cols();
    let mut data = vec![0.0; (t.rows() + 2 * r) * d];
    data[r * d..(r + t.rows()) * d].copy_from_slice(t.data());
    Tensor::from_vec(&[1, t.rows() + 2 * r, d], data).expect("padded shape")
}

/// The stack applied along the view-periodic extension of `s`.
fn conv_advance(stack: &LayerStack, s: &Sinogram) -> Result<Sinogram> {
    let r = view_radius(stack);
    Ok(crop_views(&stack.forward(&wrap_pad(s, r))?, r, s.rows()))
}

/// `Ψ(s)`: the sinogram one full-resolution angular step ahead.
pub fn advance(map: &ViewAdvanceMap, s: &Sinogram) -> Result<Sinogram> {
    map.check_input(s)?;
    match &map.mapping {
        Mapping::Interpolation => {
            let t = 1.0 / map.rate as f64;
            let next = wrap_shift(s);
            Ok(s.zip_with(&next, |a, b| (1.0 - t) * a + t * b))
        }
        Mapping::Convolutional { stack, skip } => {
            let g = conv_advance(stack, s)?;
            Ok(if *skip { s.add(&g) } else { g })
        }
    }
}

fn interleave(parts: &[Sinogram]) -> Sinogram {
    let p = parts.len();
    let (v, d) = (parts[0].rows(), parts[0].cols());
    let mut out = Tensor::zeros(&[v * p, d]);
    for j in 0..v {
        for (i, part) in parts.iter().enumerate() {
            out.row_mut(j * p + i).copy_from_slice(part.row(j));
        }
    }
    out
}

/// Pseudo full-view sinogram: row `j p + i` is row `j` of `Ψ^i(s0)`.
/// With `p = 1` the input is returned unchanged.
pub fn complete_sinogram(map: Option<&ViewAdvanceMap>, s0: &Sinogram, p: usize) -> Result<Sinogram> {
    if p == 1 {
        return Ok(s0.clone());
    }
    let map = map.ok_or_else(|| Error::InvalidParam(format!("rate {p} needs a view-advance map")))?;
    if map.rate != p {
        return Err(Error::InvalidParam(format!(
            "map was built for rate {}, asked for {p}",
            map.rate
        )));
    }
    let mut parts = vec![s0.clone()];
    for i in 1..p {
        let next = advance(map, &parts[i - 1])?;
        parts.push(next);
    }
    Ok(interleave(&parts))
}

/// `(z_init, x_init)`: the completed sinogram and its FBP.
pub fn init_pair(
    map: Option<&ViewAdvanceMap>,
    s0: &Sinogram,
    p: usize,
    geom: &Geometry,
) -> Result<(Sinogram, Tensor)> {
    let z = complete_sinogram(map, s0, p)?;
    z.expect_shape(&geom.sinogram_shape(), "completed sinogram/geometry mismatch")?;
    let x = fbp(&z, geom)?;
    Ok((z, x))
}

/// Training settings for a convolutional map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub step_size: f64,
    /// Also fit `Ψ(s_{p-1}) ≈ s_p`, the wrapped shift of `s0`.
    pub include_wrap: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 100,
            step_size: 1e-3,
            include_wrap: true,
        }
    }
}

/// Training pairs `(s_{i-1}, s_i)` from full sinograms.
pub fn training_pairs(dataset: &[Sinogram], p: usize, include_wrap: bool) -> Result<Vec<(Sinogram, Sinogram)>> {
    if dataset.is_empty() {
        return Err(Error::InvalidParam("empty training dataset".into()));
    }
    let mut pairs = Vec::new();
    for full in dataset {
        if full.shape().len() != 2 || full.rows() % p != 0 {
            return Err(Error::InvalidParam(format!(
                "rate {p} does not divide sinogram shape {:?}",
                full.shape()
            )));
        }
        let subs = (0..p)
            .map(|i| select_views(full, &ViewSelector::new(p, i)?))
            .collect::<Result<Vec<_>>>()?;
        for i in 1..p {
            pairs.push((subs[i - 1].clone(), subs[i].clone()));
        }
        if include_wrap {
            pairs.push((subs[p - 1].clone(), wrap_shift(&subs[0])));
        }
    }
    Ok(pairs)
}

/// Mean squared advance error over `pairs` and, optionally, its kernel
/// gradients.
fn training_loss(map: &ViewAdvanceMap, pairs: &[(Sinogram, Sinogram)], with_grad: bool) -> Result<(f64, Vec<Tensor>)> {
    let stack = map.stack().expect("convolutional map");
    let r = view_radius(stack);
    let scale = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Tensor> = stack.kernels().iter().map(|k| Tensor::zeros(k.shape())).collect();
    for (src, dst) in pairs {
        let res = advance(map, src)?.sub(dst);
        loss += scale * res.norm_sq();
        if with_grad {
            let cot = uncrop_views(&res.scale(2.0 * scale), r);
            for (g, w) in grads.iter_mut().zip(stack.weight_vjp(&wrap_pad(src, r), &cot)?) {
                g.add_assign(&w);
            }
        }
    }
    Ok((loss, grads))
}

/// Advance-map loss `(1/#pairs) Σ ‖Ψ(s_{i-1}) − s_i‖²`.
pub fn advance_loss(map: &ViewAdvanceMap, pairs: &[(Sinogram, Sinogram)]) -> Result<f64> {
    Ok(training_loss(map, pairs, false)?.0)
}

/// Top eigenvalue of the advance loss Hessian in the kernel entries, for a
/// map whose stack is a single linear layer (the loss is then quadratic).
/// Power iteration on Hessian-vector products from an all-ones start.
pub fn advance_curvature(map: &ViewAdvanceMap, pairs: &[(Sinogram, Sinogram)], iters: usize) -> Result<f64> {
    let stack = match &map.mapping {
        Mapping::Convolutional { stack, .. } if stack.layers().len() == 1 && stack.final_linear() => stack,
        _ => {
            return Err(Error::InvalidParam(
                "curvature needs a single linear convolutional layer".into(),
            ))
        }
    };
    if pairs.is_empty() {
        return Err(Error::InvalidParam("no training pairs".into()));
    }
    let r = view_radius(stack);
    let scale = 2.0 / pairs.len() as f64;
    let padded: Vec<Sinogram> = pairs.iter().map(|(src, _)| wrap_pad(src, r)).collect();
    let mut probe = stack.clone();
    let mut v = Tensor::filled(stack.kernels()[0].shape(), 1.0);
    let mut lam = 0.0;
    for _ in 0..iters {
        let norm = v.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.scale_in_place(1.0 / norm);
        *probe.layers_mut()[0].kernel_mut() = v.clone();
        let mut hv = Tensor::zeros(v.shape());
        for src in &padded {
            let y = probe.forward(src)?;
            let cot = uncrop_views(&crop_views(&y, r, src.rows() - 2 * r).scale(scale), r);
            hv.add_assign(&probe.weight_vjp(src, &cot)?[0]);
        }
        lam = v.dot(&hv);
        v = hv;
    }
    Ok(lam)
}

/// Full-batch gradient descent on the advance loss. Returns the trained
/// map and the loss before every step plus the final loss.
pub fn train_advance(
    map: &ViewAdvanceMap,
    dataset: &[Sinogram],
    params: &TrainParams,
) -> Result<(ViewAdvanceMap, Vec<f64>)> {
    if map.kind() != AdvanceKind::Convolutional {
        return Err(Error::InvalidParam("only convolutional maps are trainable".into()));
    }
    if !(params.step_size > 0.0 && params.step_size.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "step size must be positive, got {}",
            params.step_size
        )));
    }
    let pairs = training_pairs(dataset, map.rate, params.include_wrap)?;
    let mut map = map.clone();
    let mut curve = Vec::with_capacity(params.epochs + 1);
    for _ in 0..params.epochs {
        let (loss, grads) = training_loss(&map, &pairs, true)?;
        curve.push(loss);
        if let Mapping::Convolutional { stack, .. } = &mut map.mapping {
            for (layer, g) in stack.layers_mut().iter_mut().zip(&grads) {
                layer.kernel_mut().axpy(-params.step_size, g);
            }
        }
    }
    curve.push(advance_loss(&map, &pairs)?);
    if curve.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("train_advance loss"));
    }
    Ok((map, curve))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::conv::ConvLayer;
    use crate::tomo::{embed_views, project, shepp_logan};

    fn rmse(a: &Tensor, b: &Tensor) -> f64 {
        (a.distance_sq(b) / a.len() as f64).sqrt()
    }

    fn linear_map(n_views: usize, rate: usize, kernel: Tensor) -> ViewAdvanceMap {
        let stack = LayerStack::new(vec![ConvLayer::new(kernel, 1e-3).unwrap()], true).unwrap();
        ViewAdvanceMap::convolutional(n_views, rate, stack, false).unwrap()
    }

    #[test]
    fn rate_one_is_rejected() {
        assert!(ViewAdvanceMap::interpolation(8, 1).is_err());
        assert!(ViewAdvanceMap::interpolation(9, 2).is_err());
    }

    #[test]
    fn constant_sinogram_is_fixed_by_interpolation() {
        let map = ViewAdvanceMap::interpolation(12, 3).unwrap();
        let s = Tensor::filled(&[4, 7], 2.5);
        assert_eq!(advance(&map, &s).unwrap(), s);
    }

    #[test]
    fn last_row_interpolates_against_reversed_first_row() {
        let map = ViewAdvanceMap::interpolation(6, 2).unwrap();
        let s = Tensor::from_vec(&[3, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 5.0, 5.0, 5.0]).unwrap();
        let out = advance(&map, &s).unwrap();
        assert_eq!(out.row(0), &[0.5, 1.0, 1.5]);
        assert_eq!(out.row(2), &[4.0, 3.5, 3.0]);
    }

    #[test]
    fn conjugate_row_is_the_half_turn_view() {
        // rotating the object by π is the same as viewing it from θ + π
        let n = 32;
        let g = Geometry::new(n, 8, Geometry::covering_detectors(n)).unwrap();
        let x = shepp_logan(n).unwrap();
        let mut rotated = x.clone();
        rotated.data_mut().reverse();
        let a = project(&x, &g).unwrap();
        let b = project(&rotated, &g).unwrap();
        for v in 0..8 {
            for (p, q) in conjugate(a.row(v)).iter().zip(b.row(v)) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complete_preserves_acquired_rows_and_inverts_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s0 = Tensor::randn(&[4, 5], &mut rng);
        let map = ViewAdvanceMap::interpolation(12, 3).unwrap();
        let full = complete_sinogram(Some(&map), &s0, 3).unwrap();
        assert_eq!(full.shape(), &[12, 5]);
        assert_eq!(select_views(&full, &ViewSelector::new(3, 0).unwrap()).unwrap(), s0);
        let once = advance(&map, &s0).unwrap();
        let twice = advance(&map, &once).unwrap();
        assert_eq!(select_views(&full, &ViewSelector::new(3, 1).unwrap()).unwrap(), once);
        assert_eq!(select_views(&full, &ViewSelector::new(3, 2).unwrap()).unwrap(), twice);
    }

    #[test]
    fn complete_rejects_rate_mismatch() {
        let map = ViewAdvanceMap::interpolation(12, 3).unwrap();
        let s0 = Tensor::zeros(&[6, 5]);
        assert!(complete_sinogram(Some(&map), &s0, 2).is_err());
        assert!(complete_sinogram(None, &s0, 2).is_err());
    }

    #[test]
    fn full_view_init_is_plain_fbp() {
        let g = Geometry::new(32, 32, 47).unwrap();
        let s = project(&shepp_logan(32).unwrap(), &g).unwrap();
        let (z, x) = init_pair(None, &s, 1, &g).unwrap();
        assert_eq!(z, s);
        assert_eq!(x, fbp(&s, &g).unwrap());
    }

    #[test]
    fn interpolation_beats_zero_fill_on_phantom() {
        let n = 64;
        let g = Geometry::new(n, 64, Geometry::covering_detectors(n)).unwrap();
        let full = project(&shepp_logan(n).unwrap(), &g).unwrap();
        let sel = ViewSelector::new(2, 0).unwrap();
        let s0 = select_views(&full, &sel).unwrap();
        let map = ViewAdvanceMap::interpolation(64, 2).unwrap();
        let completed = complete_sinogram(Some(&map), &s0, 2).unwrap();
        let zero_fill = embed_views(&s0, &sel, 64).unwrap();
        assert!(rmse(&completed, &full) < 0.25 * rmse(&zero_fill, &full));
    }

    #[test]
    fn zero_dataset_gives_zero_loss_and_no_update() {
        let map = linear_map(8, 2, Tensor::zeros(&[1, 1, 3, 3]));
        let data = vec![Tensor::zeros(&[8, 5]); 3];
        let params = TrainParams {
            epochs: 5,
            ..TrainParams::default()
        };
        let (trained, curve) = train_advance(&map, &data, &params).unwrap();
        assert!(curve.iter().all(|&l| l == 0.0));
        assert_eq!(trained, map);
    }

    /// Full sinograms whose odd rows are `c` times the preceding even row.
    fn scaling_dataset(c: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<Sinogram> {
        (0..count)
            .map(|_| {
                let even = Tensor::randn(&[6, 9], rng);
                let mut full = Tensor::zeros(&[12, 9]);
                for j in 0..6 {
                    full.row_mut(2 * j).copy_from_slice(even.row(j));
                    let scaled: Vec<f64> = even.row(j).iter().map(|v| c * v).collect();
                    full.row_mut(2 * j + 1).copy_from_slice(&scaled);
                }
                full
            })
            .collect()
    }

    #[test]
    fn linear_map_learns_scaling_kernel() {
        let c = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = scaling_dataset(c, 4, &mut rng);
        let map = linear_map(12, 2, Tensor::zeros(&[1, 1, 3, 3]));
        let params = TrainParams {
            epochs: 200,
            step_size: 0.008,
            include_wrap: false,
        };
        let (trained, curve) = train_advance(&map, &data, &params).unwrap();
        assert!(curve[200] < 1e-2 * curve[0], "{} vs {}", curve[200], curve[0]);
        for pair in curve.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12 * curve[0]);
        }
        // the least-squares optimum is c at the kernel center
        let k = trained.stack().unwrap().layers()[0].kernel();
        let mut oracle = Tensor::zeros(&[1, 1, 3, 3]);
        oracle.data_mut()[4] = c;
        assert!(k.sub(&oracle).max_abs() < 0.05);
    }

    #[test]
    fn wrap_pad_continues_with_conjugates() {
        let s = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = wrap_pad(&s, 3);
        assert_eq!(p.shape(), &[8, 2]);
        assert_eq!(p.data(), &[3.0, 4.0, 2.0, 1.0, 4.0, 3.0, 1.0, 2.0, 3.0, 4.0, 2.0, 1.0, 4.0, 3.0, 1.0, 2.0][..]);
        assert_eq!(wrap_pad(&s, 0), s);
    }

    #[test]
    fn interpolation_stencil_matches_interpolation_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Tensor::randn(&[5, 7], &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = -0.25;
        k.data_mut()[7] = 0.25;
        let stack = LayerStack::new(vec![ConvLayer::new(k, 1e-3).unwrap()], true).unwrap();
        let conv = ViewAdvanceMap::convolutional(20, 4, stack, true).unwrap();
        let interp = ViewAdvanceMap::interpolation(20, 4).unwrap();
        let (a, b) = (advance(&conv, &s).unwrap(), advance(&interp, &s).unwrap());
        assert!(a.sub(&b).max_abs() < 1e-14);
    }

    #[test]
    fn training_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<Sinogram> = (0..2).map(|_| Tensor::randn(&[8, 6], &mut rng)).collect();
        let pairs = training_pairs(&data, 2, true).unwrap();
        let map = linear_map(8, 2, Tensor::randn(&[1, 1, 3, 5], &mut rng));
        let (_, grads) = training_loss(&map, &pairs, true).unwrap();
        let h = 1e-6;
        for idx in 0..15 {
            let shifted = |d: f64| {
                let mut k = map.stack().unwrap().layers()[0].kernel().clone();
                k.data_mut()[idx] += d;
                advance_loss(&linear_map(8, 2, k), &pairs).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            assert!((fd - grads[0].data()[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "{idx}: {fd}");
        }
    }

    #[test]
    fn curvature_is_the_top_hessian_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<Sinogram> = (0..3).map(|_| Tensor::randn(&[6, 5], &mut rng)).collect();
        let pairs = training_pairs(&data, 3, true).unwrap();
        let map = linear_map(6, 3, Tensor::zeros(&[1, 1, 3, 3]));
        // the loss is quadratic: column j of the Hessian is the gradient
        // difference along the unit kernel e_j
        let grad_at = |k: Tensor| training_loss(&linear_map(6, 3, k), &pairs, true).unwrap().1[0].clone();
        let g0 = grad_at(Tensor::zeros(&[1, 1, 3, 3]));
        let mut hess = vec![vec![0.0; 9]; 9];
        for j in 0..9 {
            let mut e = Tensor::zeros(&[1, 1, 3, 3]);
            e.data_mut()[j] = 1.0;
            let gj = grad_at(e).sub(&g0);
            for i in 0..9 {
                hess[i][j] = gj.data()[i];
            }
        }
        // dense power iteration on the assembled Hessian
        let mut v = vec![1.0; 9];
        let mut lam = 0.0;
        for _ in 0..5000 {
            let hv: Vec<f64> = hess.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            let n = hv.iter().map(|a| a * a).sum::<f64>().sqrt();
            lam = hv.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            v = hv.iter().map(|a| a / n).collect();
        }
        let est = advance_curvature(&map, &pairs, 500).unwrap();
        assert!((est - lam).abs() < 1e-8 * lam, "{est} vs {lam}");
        assert!(advance_curvature(&ViewAdvanceMap::interpolation(6, 3).unwrap(), &pairs, 5).is_err());
    }

    #[test]
    fn training_pairs_count_and_wrap() {
        let data = vec![Tensor::zeros(&[12, 3]); 2];
        assert_eq!(training_pairs(&data, 3, true).unwrap().len(), 6);
        assert_eq!(training_pairs(&data, 3, false).unwrap().len(), 4);
        assert!(training_pairs(&data, 5, true).is_err());
        assert!(training_pairs(&[], 2, true).is_err());
    }
}
