//! Convolutional feature extractors `g(y) = w_l * a(... a(w_1 * y))` and their
//! derivatives.
//!
//! Layers are stride-1 cross-correlations with zero same-padding and no bias.
//! Every layer except (optionally) the last is followed by the smoothed ReLU
//! [`smoothed_relu`]. Besides the forward pass this module provides the three
//! linearizations the solver and trainers need: the input-directed
//! vector-Jacobian product (`∇g(y)ᵀ v`), the forward tangent (`∇g(y) u`) and
//! the kernel gradients of `⟨g(y), v⟩`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default width of the quadratic band of the smoothed ReLU.
pub const DEFAULT_RELU_DELTA: f64 = 1e-3;

/// C¹ piecewise-quadratic ReLU: 0 below `-delta`, `(x + delta)² / (4 delta)`
/// inside the band and `x` above `delta`.
#[inline]
pub fn smoothed_relu(x: f64, delta: f64) -> f64 {
    if x <= -delta {
        0.0
    } else if x >= delta {
        x
    } else {
        (x + delta) * (x + delta) / (4.0 * delta)
    }
}

/// Derivative of [`smoothed_relu`]; always in `[0, 1]`.
#[inline]
pub fn smoothed_relu_grad(x: f64, delta: f64) -> f64 {
    if x <= -delta {
        0.0
    } else if x >= delta {
        1.0
    } else {
        (x + delta) / (2.0 * delta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    kernel: Tensor,
    padding: (usize, usize),
    smoothing_delta: f64,
}

impl ConvLayer {
    /// `kernel` has extents `(out_channels, in_channels, kh, kw)`; both kernel
    /// extents must be odd so that the implied padding `(k - 1) / 2` keeps the
    /// spatial extents unchanged.
    pub fn new(kernel: Tensor, smoothing_delta: f64) -> Result<Self> {
        if kernel.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "kernel must be 4-D (out, in, kh, kw), got {:?}",
                kernel.shape()
            )));
        }
        let (kh, kw) = (kernel.shape()[2], kernel.shape()[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidParam(format!(
                "kernel extents {kh}x{kw} cannot preserve spatial size at stride 1"
            )));
        }
        if !(smoothing_delta > 0.0 && smoothing_delta.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "smoothing delta must be positive, got {smoothing_delta}"
            )));
        }
        Ok(ConvLayer {
            kernel,
            padding: ((kh - 1) / 2, (kw - 1) / 2),
            smoothing_delta,
        })
    }

    /// Builds a layer with explicit padding, which must equal `(k - 1) / 2`.
    pub fn with_padding(kernel: Tensor, padding: (usize, usize), delta: f64) -> Result<Self> {
        let layer = ConvLayer::new(kernel, delta)?;
        if layer.padding != padding {
            return Err(Error::InvalidParam(format!(
                "padding {padding:?} does not preserve spatial extents (need {:?})",
                layer.padding
            )));
        }
        Ok(layer)
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut Tensor {
        &mut self.kernel
    }

    pub fn padding(&self) -> (usize, usize) {
        self.padding
    }

    pub fn smoothing_delta(&self) -> f64 {
        self.smoothing_delta
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.shape()[2], self.kernel.shape()[3])
    }

    #[inline]
    fn weight(&self, o: usize, c: usize, u: usize, v: usize) -> f64 {
        let s = self.kernel.shape();
        self.kernel.data()[((o * s[1] + c) * s[2] + u) * s[3] + v]
    }

    /// Linear part of the layer on a `[C, H, W]` tensor.
    fn correlate(&self, input: &Tensor) -> Tensor {
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let (kh, kw) = self.kernel_size();
        let (ph, pw) = self.padding;
        let plane = h * w;
        let mut out = Tensor::zeros(&[self.out_channels(), h, w]);
        let src = input.data();
        let dst = out.data_mut();
        for o in 0..self.out_channels() {
            let out_plane = &mut dst[o * plane..(o + 1) * plane];
            for c in 0..self.in_channels() {
                let in_plane = &src[c * plane..(c + 1) * plane];
                for u in 0..kh {
                    for v in 0..kw {
                        let coef = self.weight(o, c, u, v);
                        if coef != 0.0 {
                            shift_acc(
                                out_plane,
                                in_plane,
                                h,
                                w,
                                u as isize - ph as isize,
                                v as isize - pw as isize,
                                coef,
                            );
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::correlate`].
    fn correlate_transpose(&self, cot: &Tensor) -> Tensor {
        let (h, w) = (cot.shape()[1], cot.shape()[2]);
        let (kh, kw) = self.kernel_size();
        let (ph, pw) = self.padding;
        let plane = h * w;
        let mut out = Tensor::zeros(&[self.in_channels(), h, w]);
        let src = cot.data();
        let dst = out.data_mut();
        for c in 0..self.in_channels() {
            let in_plane = &mut dst[c * plane..(c + 1) * plane];
            for o in 0..self.out_channels() {
                let g = &src[o * plane..(o + 1) * plane];
                for u in 0..kh {
                    for v in 0..kw {
                        let coef = self.weight(o, c, u, v);
                        if coef != 0.0 {
                            shift_acc(
                                in_plane,
                                g,
                                h,
                                w,
                                ph as isize - u as isize,
                                pw as isize - v as isize,
                                coef,
                            );
                        }
                    }
                }
            }
        }
        out
    }

    /// Kernel gradient of `⟨correlate(input), cot⟩`.
    fn kernel_grad(&self, input: &Tensor, cot: &Tensor) -> Tensor {
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let (kh, kw) = self.kernel_size();
        let (ph, pw) = self.padding;
        let plane = h * w;
        let mut grad = Tensor::zeros(self.kernel.shape());
        let gd = grad.data_mut();
        let mut idx = 0;
        for o in 0..self.out_channels() {
            let g = &cot.data()[o * plane..(o + 1) * plane];
            for c in 0..self.in_channels() {
                let x = &input.data()[c * plane..(c + 1) * plane];
                for u in 0..kh {
                    for v in 0..kw {
                        gd[idx] = shift_dot(
                            g,
                            x,
                            h,
                            w,
                            u as isize - ph as isize,
                            v as isize - pw as isize,
                        );
                        idx += 1;
                    }
                }
            }
        }
        grad
    }
}

/// `dst[i, j] += coef * src[i + dy, j + dx]` wherever the source index is in
/// range (zero padding elsewhere).
fn shift_acc(dst: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, coef: f64) {
    let (i0, i1) = valid_range(h, dy);
    let (j0, j1) = valid_range(w, dx);
    if j0 >= j1 {
        return;
    }
    for i in i0..i1 {
        let si = (i as isize + dy) as usize;
        let d = &mut dst[i * w + j0..i * w + j1];
        let s0 = (j0 as isize + dx) as usize;
        let s = &src[si * w + s0..si * w + s0 + (j1 - j0)];
        for (a, b) in d.iter_mut().zip(s) {
            *a += coef * b;
        }
    }
}

/// `Σ g[i, j] * x[i + dy, j + dx]` over the in-range positions.
fn shift_dot(g: &[f64], x: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let (i0, i1) = valid_range(h, dy);
    let (j0, j1) = valid_range(w, dx);
    let mut acc = 0.0;
    if j0 >= j1 {
        return acc;
    }
    for i in i0..i1 {
        let si = (i as isize + dy) as usize;
        let s0 = (j0 as isize + dx) as usize;
        let a = &g[i * w + j0..i * w + j1];
        let b = &x[si * w + s0..si * w + s0 + (j1 - j0)];
        acc += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

/// Indices `i` in `[0, n)` with `i + d` also in `[0, n)`.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

/// Intermediate values recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input of each layer, `[C, H, W]`.
    inputs: Vec<Tensor>,
    /// Linear response of each layer before activation.
    pre: Vec<Tensor>,
    output: Tensor,
}

impl Tape {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn into_output(self) -> Tensor {
        self.output
    }
}

/// An ordered stack of same-padding convolution layers.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    layers: Vec<ConvLayer>,
    final_linear: bool,
}

impl LayerStack {
    pub fn new(layers: Vec<ConvLayer>, final_linear: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParam("layer stack must be non-empty".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(Error::Layer {
                    layer: i + 1,
                    msg: format!(
                        "expects {} input channels but layer {i} produces {}",
                        pair[1].in_channels(),
                        pair[0].out_channels()
                    ),
                });
            }
        }
        Ok(LayerStack {
            layers,
            final_linear,
        })
    }

    /// Random kernels with entries `N(0, scale²)`; `channels` lists the
    /// channel count at every interface, so `channels.len() - 1` layers.
    pub fn random<R: Rng + ?Sized>(
        channels: &[usize],
        kernel: (usize, usize),
        scale: f64,
        final_linear: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if channels.len() < 2 {
            return Err(Error::InvalidParam(
                "need at least input and output channel counts".into(),
            ));
        }
        let layers = channels
            .windows(2)
            .map(|p| {
                let k = Tensor::randn(&[p[1], p[0], kernel.0, kernel.1], rng).scale(scale);
                ConvLayer::new(k, DEFAULT_RELU_DELTA)
            })
            .collect::<Result<Vec<_>>>()?;
        LayerStack::new(layers, final_linear)
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.layers
    }

    pub fn final_linear(&self) -> bool {
        self.final_linear
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels()
    }

    pub fn kernels(&self) -> Vec<&Tensor> {
        self.layers.iter().map(|l| &l.kernel).collect()
    }

    /// Total number of kernel weights.
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.len()).sum()
    }

    fn activated(&self, layer: usize) -> bool {
        !(self.final_linear && layer + 1 == self.layers.len())
    }

    /// Checks `input` and returns it as `[C, H, W]`.
    fn as_chw(&self, input: &Tensor) -> Result<Tensor> {
        let chw = match input.shape() {
            [h, w] => input.clone().reshape(&[1, *h, *w])?,
            [_, _, _] => input.clone(),
            other => {
                return Err(Error::Layer {
                    layer: 0,
                    msg: format!("input must be [H, W] or [C, H, W], got {other:?}"),
                })
            }
        };
        if chw.shape()[0] != self.in_channels() {
            return Err(Error::Layer {
                layer: 0,
                msg: format!(
                    "expects {} input channels, got {}",
                    self.in_channels(),
                    chw.shape()[0]
                ),
            });
        }
        Ok(chw)
    }

    /// Output shape for an input of the given shape.
    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        let (h, w) = match input_shape {
            [h, w] => (*h, *w),
            [_, h, w] => (*h, *w),
            other => {
                return Err(Error::Shape(format!(
                    "input must be [H, W] or [C, H, W], got {other:?}"
                )))
            }
        };
        Ok(vec![self.out_channels(), h, w])
    }

    pub fn forward_with_tape(&self, input: &Tensor) -> Result<Tape> {
        let mut cur = self.as_chw(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let lin = layer.correlate(&cur);
            let next = if self.activated(i) {
                let d = layer.smoothing_delta;
                lin.map(|v| smoothed_relu(v, d))
            } else {
                lin.clone()
            };
            inputs.push(cur);
            pre.push(lin);
            cur = next;
        }
        if !cur.is_finite() {
            return Err(Error::NonFinite("conv_forward"));
        }
        Ok(Tape {
            inputs,
            pre,
            output: cur,
        })
    }

    /// `g(input)`, shaped `[out_channels, H, W]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_tape(input)?.into_output())
    }

    fn check_cotangent(&self, tape: &Tape, cot: &Tensor) -> Result<()> {
        if cot.shape() != tape.output.shape() {
            return Err(Error::Layer {
                layer: self.layers.len() - 1,
                msg: format!(
                    "cotangent shape {:?} does not match output {:?}",
                    cot.shape(),
                    tape.output.shape()
                ),
            });
        }
        Ok(())
    }

    /// Backpropagates `cot` to the output of every layer's linear part,
    /// calling `visit(layer, grad_wrt_pre)` from the last layer down, and
    /// returns the gradient with respect to the stack input (`[C, H, W]`).
    fn backward(
        &self,
        tape: &Tape,
        cot: &Tensor,
        mut visit: impl FnMut(usize, &Tensor),
    ) -> Tensor {
        let mut g = cot.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if self.activated(i) {
                let d = layer.smoothing_delta;
                g = g.zip_with(&tape.pre[i], |gv, p| gv * smoothed_relu_grad(p, d));
            }
            visit(i, &g);
            g = layer.correlate_transpose(&g);
        }
        g
    }

    /// `∇g(input)ᵀ cot` given a recorded forward pass; shaped like the stack
    /// input in `[C, H, W]` form.
    pub fn input_vjp_from_tape(&self, tape: &Tape, cot: &Tensor) -> Result<Tensor> {
        self.check_cotangent(tape, cot)?;
        Ok(self.backward(tape, cot, |_, _| {}))
    }

    /// `∇g(input)ᵀ cot`, shaped like `input`.
    pub fn input_vjp(&self, input: &Tensor, cot: &Tensor) -> Result<Tensor> {
        let tape = self.forward_with_tape(input)?;
        let g = self.input_vjp_from_tape(&tape, cot)?;
        g.reshape(input.shape())
    }

    /// Gradients of `⟨g(input), cot⟩` with respect to every kernel, in layer
    /// order.
    pub fn weight_vjp(&self, input: &Tensor, cot: &Tensor) -> Result<Vec<Tensor>> {
        let tape = self.forward_with_tape(input)?;
        self.check_cotangent(&tape, cot)?;
        let mut grads = vec![None; self.layers.len()];
        self.backward(&tape, cot, |i, g| {
            grads[i] = Some(self.layers[i].kernel_grad(&tape.inputs[i], g));
        });
        Ok(grads.into_iter().map(|g| g.expect("visited")).collect())
    }

    /// Forward tangent `∇g(input) tangent`, shaped like the output.
    pub fn input_jvp(&self, input: &Tensor, tangent: &Tensor) -> Result<Tensor> {
        if tangent.shape() != input.shape() {
            return Err(Error::Shape(format!(
                "tangent {:?} does not match input {:?}",
                tangent.shape(),
                input.shape()
            )));
        }
        let tape = self.forward_with_tape(input)?;
        let mut t = self.as_chw(tangent)?;
        for (i, layer) in self.layers.iter().enumerate() {
            t = layer.correlate(&t);
            if self.activated(i) {
                let d = layer.smoothing_delta;
                t = t.zip_with(&tape.pre[i], |tv, p| tv * smoothed_relu_grad(p, d));
            }
        }
        Ok(t)
    }
}
