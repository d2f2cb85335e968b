//! Learnable (2,1)-norm regularizers `r(y) = Σ_i ‖g_i(y)‖` and their
//! ε-smoothing.
//!
//! Position `i` indexes a spatial location of the extractor output and
//! `g_i(y)` is the vector of all channels at that location. The smoothed
//! version replaces each norm by `‖g_i‖² / (2ε)` when `‖g_i‖ ≤ ε` (the set
//! `I0`) and by `‖g_i‖ - ε/2` otherwise (`I1`), which makes it C¹ with a
//! gradient that is `O(1/ε)`-Lipschitz.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{ConvLayer, LayerStack, Tape, DEFAULT_RELU_DELTA};
use crate::error::{Error, Result};
use crate::objective::{grad_phi_eps, FidelityModel};
use crate::tensor::Tensor;

/// Which domain a regularizer acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Image,
    Sinogram,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Regularizer {
    extractor: LayerStack,
    role: Role,
}

/// The `I0 / I1` split used by one smoothed evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothingState {
    pub epsilon: f64,
    in_i0: Vec<bool>,
}

impl SmoothingState {
    pub fn positions(&self) -> usize {
        self.in_i0.len()
    }

    pub fn is_i0(&self, i: usize) -> bool {
        self.in_i0[i]
    }

    /// Positions with `‖g_i‖ ≤ ε`.
    pub fn i0(&self) -> impl Iterator<Item = usize> + '_ {
        self.in_i0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// Positions with `‖g_i‖ > ε`.
    pub fn i1(&self) -> impl Iterator<Item = usize> + '_ {
        self.in_i0.iter().enumerate().filter(|(_, &b)| !b).map(|(i, _)| i)
    }
}

/// Result of a combined value/gradient evaluation.
#[derive(Clone, Debug)]
pub struct SmoothedEval {
    pub value: f64,
    pub grad: Tensor,
    pub state: SmoothingState,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "smoothing epsilon must be positive, got {eps}"
        )));
    }
    Ok(())
}

/// Per-position Euclidean norms of a `[d, H, W]` feature map.
pub fn position_norms(features: &Tensor) -> Vec<f64> {
    let d = features.shape()[0];
    let m = features.len() / d;
    let data = features.data();
    let mut sq = vec![0.0; m];
    for c in 0..d {
        for (s, v) in sq.iter_mut().zip(&data[c * m..(c + 1) * m]) {
            *s += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

impl Regularizer {
    pub fn new(extractor: LayerStack, role: Role) -> Result<Self> {
        if extractor.in_channels() != 1 {
            return Err(Error::Layer {
                layer: 0,
                msg: format!(
                    "regularizer input is single-channel, extractor expects {}",
                    extractor.in_channels()
                ),
            });
        }
        Ok(Regularizer { extractor, role })
    }

    /// Smoothed isotropic total variation with weight `weight`: a single
    /// linear 3×3 layer whose two channels are the forward differences along
    /// columns and rows.
    pub fn total_variation(weight: f64) -> Self {
        let mut k = Tensor::zeros(&[2, 1, 3, 3]);
        let d = k.data_mut();
        // channel 0: x[i, j+1] - x[i, j]
        d[4] = -weight;
        d[5] = weight;
        // channel 1: x[i+1, j] - x[i, j]
        d[9 + 4] = -weight;
        d[9 + 7] = weight;
        let layer = ConvLayer::new(k, DEFAULT_RELU_DELTA).expect("valid kernel");
        Regularizer {
            extractor: LayerStack::new(vec![layer], true).expect("single layer"),
            role: Role::Image,
        }
    }

    /// Default sinogram-domain regularizer: a single linear 3×7 layer with
    /// an angular difference averaged over seven detectors by a triangular
    /// window, and a plain detector difference.
    pub fn sinogram_default(weight: f64) -> Self {
        const WINDOW: [f64; 7] = [1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0];
        let mut k = Tensor::zeros(&[2, 1, 3, 7]);
        let d = k.data_mut();
        for (col, w) in WINDOW.iter().enumerate() {
            d[7 + col] = -weight * w / 16.0;
            d[14 + col] = weight * w / 16.0;
        }
        d[21 + 7 + 3] = -weight;
        d[21 + 7 + 4] = weight;
        let layer = ConvLayer::new(k, DEFAULT_RELU_DELTA).expect("valid kernel");
        Regularizer {
            extractor: LayerStack::new(vec![layer], true).expect("single layer"),
            role: Role::Sinogram,
        }
    }

    /// A regularizer that is identically zero.
    pub fn zero(role: Role) -> Self {
        let layer = ConvLayer::new(Tensor::zeros(&[1, 1, 1, 1]), DEFAULT_RELU_DELTA)
            .expect("valid kernel");
        Regularizer {
            extractor: LayerStack::new(vec![layer], true).expect("single layer"),
            role,
        }
    }

    pub fn extractor(&self) -> &LayerStack {
        &self.extractor
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// `(m_r, d_r)`: number of feature positions and channels for an input
    /// of the given shape.
    pub fn dims(&self, input_shape: &[usize]) -> Result<(usize, usize)> {
        let out = self.extractor.output_shape(input_shape)?;
        Ok((out[1] * out[2], out[0]))
    }

    pub fn positions(&self, input_shape: &[usize]) -> Result<usize> {
        Ok(self.dims(input_shape)?.0)
    }

    pub fn features(&self, y: &Tensor) -> Result<Tensor> {
        self.extractor.forward(y)
    }

    /// `Σ_i ‖g_i(y)‖`.
    pub fn norm21(&self, y: &Tensor) -> Result<f64> {
        Ok(position_norms(&self.features(y)?).iter().sum())
    }

    fn smoothed_from_norms(norms: &[f64], eps: f64) -> (f64, SmoothingState) {
        let mut value = 0.0;
        let mut in_i0 = Vec::with_capacity(norms.len());
        for &n in norms {
            if n <= eps {
                value += n * n / (2.0 * eps);
                in_i0.push(true);
            } else {
                value += n - eps / 2.0;
                in_i0.push(false);
            }
        }
        (
            value,
            SmoothingState {
                epsilon: eps,
                in_i0,
            },
        )
    }

    /// `r_ε(y)` and the partition it used.
    pub fn smoothed_value(&self, y: &Tensor, eps: f64) -> Result<(f64, SmoothingState)> {
        check_eps(eps)?;
        let norms = position_norms(&self.features(y)?);
        Ok(Self::smoothed_from_norms(&norms, eps))
    }

    /// Per-position cotangent `g_i / max(ε, ‖g_i‖)`.
    fn cotangent(features: &Tensor, norms: &[f64], eps: f64) -> Tensor {
        let m = norms.len();
        let scale: Vec<f64> = norms.iter().map(|&n| 1.0 / n.max(eps)).collect();
        let mut cot = features.clone();
        for chunk in cot.data_mut().chunks_mut(m) {
            for (v, s) in chunk.iter_mut().zip(&scale) {
                *v *= s;
            }
        }
        cot
    }

    fn eval_from_tape(&self, y: &Tensor, tape: &Tape, eps: f64) -> Result<SmoothedEval> {
        let features = tape.output();
        let norms = position_norms(features);
        let (value, state) = Self::smoothed_from_norms(&norms, eps);
        let cot = Self::cotangent(features, &norms, eps);
        let grad = self
            .extractor
            .input_vjp_from_tape(tape, &cot)?
            .reshape(y.shape())?;
        Ok(SmoothedEval { value, grad, state })
    }

    /// `∇r_ε(y)`, shaped like `y`.
    pub fn smoothed_grad(&self, y: &Tensor, eps: f64) -> Result<Tensor> {
        Ok(self.smoothed_eval(y, eps)?.grad)
    }

    /// Value, gradient and partition from a single forward pass.
    pub fn smoothed_eval(&self, y: &Tensor, eps: f64) -> Result<SmoothedEval> {
        check_eps(eps)?;
        let tape = self.extractor.forward_with_tape(y)?;
        self.eval_from_tape(y, &tape, eps)
    }
}

/// Sampled constants of the Lipschitz bound `√m·L_g + M²/ε` for `∇r_ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub positions: usize,
    /// Estimated Lipschitz constant of `y ↦ ∇g(y)`.
    pub l_g: f64,
    /// Estimated `sup_y ‖∇g(y)‖₂`.
    pub m: f64,
    pub eps: f64,
}

impl LipschitzEstimate {
    pub fn value(&self) -> f64 {
        (self.positions as f64).sqrt() * self.l_g + self.m * self.m / self.eps
    }

    /// The same sampled constants at another smoothing level.
    pub fn at_eps(&self, eps: f64) -> Self {
        LipschitzEstimate { eps, ..*self }
    }
}

const POWER_ITERS: usize = 100;

/// Spectral norm of `∇g(y)` by power iteration on `∇gᵀ∇g`.
fn jacobian_norm<R: Rng + ?Sized>(stack: &LayerStack, y: &Tensor, rng: &mut R) -> Result<f64> {
    let mut v = Tensor::randn(y.shape(), rng);
    let mut sigma_sq = 0.0;
    for _ in 0..POWER_ITERS {
        let nv = v.norm();
        if nv == 0.0 {
            return Ok(0.0);
        }
        v.scale_in_place(1.0 / nv);
        let jv = stack.input_jvp(y, &v)?;
        let jtjv = stack.input_vjp(y, &jv)?;
        sigma_sq = v.dot(&jtjv);
        v = jtjv;
    }
    Ok(sigma_sq.max(0.0).sqrt())
}

/// Estimates the Lipschitz bound of `∇r_ε` by sampling
/// `samples` standard-normal inputs of shape `input_shape`. The constants are
/// estimates, not certified bounds.
pub fn lipschitz_estimate<R: Rng + ?Sized>(
    reg: &Regularizer,
    input_shape: &[usize],
    eps: f64,
    samples: usize,
    rng: &mut R,
) -> Result<LipschitzEstimate> {
    check_eps(eps)?;
    if samples < 2 {
        return Err(Error::InvalidParam(format!(
            "lipschitz estimate needs at least 2 samples, got {samples}"
        )));
    }
    let stack = reg.extractor();
    let positions = reg.positions(input_shape)?;
    let out_shape = stack.output_shape(input_shape)?;
    let mut m: f64 = 0.0;
    let mut l_g: f64 = 0.0;
    let mut prev: Option<Tensor> = None;
    for _ in 0..samples {
        let y = Tensor::randn(input_shape, rng);
        m = m.max(jacobian_norm(stack, &y, rng)?);
        if let Some(p) = &prev {
            let mut w = Tensor::randn(&out_shape, rng);
            let nw = w.norm();
            w.scale_in_place(1.0 / nw);
            let diff = stack.input_vjp(&y, &w)?.sub(&stack.input_vjp(p, &w)?);
            let dy = y.sub(p).norm();
            if dy > 0.0 {
                l_g = l_g.max(diff.norm() / dy);
            }
        }
        prev = Some(y);
    }
    Ok(LipschitzEstimate {
        positions,
        l_g,
        m,
        eps,
    })
}

/// `‖∇_{x,z} Φ_ε(x, z)‖`. Along a run with `ε ↓ 0` its vanishing certifies
/// approximate Clarke stationarity of the unsmoothed objective.
pub fn stationarity_residual(
    reg_r: &Regularizer,
    reg_q: &Regularizer,
    x: &Tensor,
    z: &Tensor,
    eps: f64,
    model: &FidelityModel,
) -> Result<f64> {
    let (gx, gz) = grad_phi_eps(model, reg_r, reg_q, x, z, eps)?;
    Ok((gx.norm_sq() + gz.norm_sq()).sqrt())
}
