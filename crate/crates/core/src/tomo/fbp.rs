use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::Result;
use crate::tensor::{Sinogram, Tensor};

use super::{embed_views, Geometry, ViewSelector};

/// Apodization applied to the ramp filter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RampWindow {
    /// Plain Ram-Lak.
    #[default]
    None,
    /// Ram-Lak multiplied by a Hann window; for display only.
    Hann,
}

/// Filtered backprojection with the unwindowed Ram-Lak filter.
pub fn fbp(sino: &Sinogram, geom: &Geometry) -> Result<Tensor> {
    fbp_with(sino, geom, RampWindow::None)
}

/// FBP of sparse data: the acquired rows are embedded in a zero sinogram and
/// the result is rescaled by the rate so that the angular sum is normalized
/// by the number of acquired views.
pub fn zero_fill_fbp(s0: &Sinogram, geom: &Geometry, sel: &ViewSelector) -> Result<Tensor> {
    let full = embed_views(s0, sel, geom.n_views)?;
    let mut x = fbp(&full, geom)?;
    x.scale_in_place(sel.rate() as f64);
    Ok(x)
}

pub fn fbp_with(sino: &Sinogram, geom: &Geometry, window: RampWindow) -> Result<Tensor> {
    geom.validate()?;
    sino.expect_shape(&geom.sinogram_shape(), "sinogram/geometry mismatch")?;
    let filtered = ramp_filter(sino, geom, window);
    Ok(pixel_backproject(&filtered, geom))
}

/// Frequency response of the band-limited ramp, built from the spatial
/// Ram-Lak kernel so the DC term is exact.
fn ramp_response(len: usize, tau: f64, window: RampWindow) -> Vec<Complex<f64>> {
    let mut h = vec![Complex::new(0.0, 0.0); len];
    h[0].re = 1.0 / (4.0 * tau * tau);
    for k in 1..len / 2 + 1 {
        if k % 2 == 1 {
            let v = -1.0 / (PI * PI * (k * k) as f64 * tau * tau);
            h[k].re = v;
            h[len - k].re = v;
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut h);
    if window == RampWindow::Hann {
        for (k, hk) in h.iter_mut().enumerate() {
            let f = k.min(len - k) as f64 / len as f64; // in [0, 1/2]
            *hk *= 0.5 * (1.0 + (2.0 * PI * f).cos());
        }
    }
    h
}

fn ramp_filter(sino: &Sinogram, geom: &Geometry, window: RampWindow) -> Tensor {
    let d = geom.n_detectors;
    let len = (2 * d).next_power_of_two();
    let tau = geom.detector_spacing;
    let response = ramp_response(len, tau, window);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut out = Tensor::zeros(sino.shape());
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    // tau for the convolution sum, 1/len for the unnormalized inverse
    let scale = tau / len as f64;
    for v in 0..geom.n_views {
        buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
        for (b, &s) in buf.iter_mut().zip(sino.row(v)) {
            b.re = s;
        }
        fwd.process(&mut buf);
        for (b, h) in buf.iter_mut().zip(&response) {
            *b *= h;
        }
        inv.process(&mut buf);
        for (o, b) in out.row_mut(v).iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }
    out
}

/// Pixel-driven backprojection with linear interpolation on the detector,
/// scaled by `π / n_views`.
fn pixel_backproject(filtered: &Tensor, geom: &Geometry) -> Tensor {
    let n = geom.image_size;
    let nd = geom.n_detectors;
    let center = (n as f64 - 1.0) / 2.0;
    let det_center = (nd as f64 - 1.0) / 2.0;
    let mut image = Tensor::zeros(&geom.image_shape());
    for v in 0..geom.n_views {
        let (s, c) = geom.angle(v).sin_cos();
        let row = filtered.row(v);
        let px = image.data_mut();
        for i in 0..n {
            let y = center - i as f64;
            for j in 0..n {
                let x = j as f64 - center;
                let u = (x * c + y * s) / geom.detector_spacing + det_center;
                if u < 0.0 || u > (nd - 1) as f64 {
                    continue;
                }
                let lo = u.floor() as usize;
                let frac = u - lo as f64;
                let val = if lo + 1 < nd {
                    row[lo] * (1.0 - frac) + row[lo + 1] * frac
                } else {
                    row[lo]
                };
                px[i * n + j] += val;
            }
        }
    }
    image.scale_in_place(PI / geom.n_views as f64);
    image
}
