//! Joseph (linear interpolation) line integration.
//!
//! Pixel `(i, j)` has center `x = j - c`, `y = c - i` with `c = (n - 1) / 2`.
//! The ray for angle `θ` and detector offset `t` is `x cos θ + y sin θ = t`.
//! Rays closer to horizontal are sampled once per column, the others once per
//! row; each sample linearly interpolates between the two nearest pixel
//! centers along the other axis and is weighted by the path length per step.
//! [`backproject`] runs the same loop as a scatter, so it is the exact
//! transpose of [`project`].

use crate::error::Result;
use crate::tensor::{Sinogram, Tensor};

use super::Geometry;

/// Calls `visit(pixel_index, weight)` for every nonzero coefficient of one ray.
#[inline]
fn for_each_ray_weight(n: usize, (s, c): (f64, f64), t: f64, mut visit: impl FnMut(usize, f64)) {
    let center = (n as f64 - 1.0) / 2.0;
    // the interpolation position along the minor axis is affine in the
    // major-axis index k: pos = a + b k
    let (a, b, step, per_column) = if s.abs() >= c.abs() {
        let b = c / s;
        (center - t / s - center * b, b, 1.0 / s.abs(), true)
    } else {
        let b = s / c;
        (t / c - center * b + center, b, 1.0 / c.abs(), false)
    };
    let (lo, hi) = if b == 0.0 {
        (0.0, n as f64)
    } else {
        let k1 = (-1.0 - a) / b;
        let k2 = (n as f64 - a) / b;
        (k1.min(k2).floor().max(0.0), (k1.max(k2).ceil() + 1.0).min(n as f64))
    };
    for k in lo as usize..hi as usize {
        let pos = a + b * k as f64;
        if per_column {
            interp(n, pos, step, |i, w| visit(i * n + k, w));
        } else {
            interp(n, pos, step, |j, w| visit(k * n + j, w));
        }
    }
}

/// Splits `weight` between the two grid indices around fractional position
/// `pos`, dropping indices outside `[0, n)`.
#[inline]
fn interp(n: usize, pos: f64, weight: f64, mut visit: impl FnMut(usize, f64)) {
    if pos <= -1.0 || pos >= n as f64 {
        return;
    }
    // pos + 1 > 0, so truncation is floor
    let shifted = (pos + 1.0) as usize;
    let frac = pos + 1.0 - shifted as f64;
    if shifted >= 1 && frac < 1.0 {
        visit(shifted - 1, weight * (1.0 - frac));
    }
    if shifted < n && frac > 0.0 {
        visit(shifted, weight * frac);
    }
}

fn check_image(image: &Tensor, geom: &Geometry) -> Result<()> {
    geom.validate()?;
    image.expect_shape(&geom.image_shape(), "image/geometry mismatch")
}

/// Discrete Radon transform `A x`, shaped `[n_views, n_detectors]`.
pub fn project(image: &Tensor, geom: &Geometry) -> Result<Sinogram> {
    check_image(image, geom)?;
    let n = geom.image_size;
    let px = image.data();
    let mut sino = Tensor::zeros(&geom.sinogram_shape());
    for v in 0..geom.n_views {
        let sc = geom.angle(v).sin_cos();
        let row = sino.row_mut(v);
        for (d, out) in row.iter_mut().enumerate() {
            let t = geom.detector_offset(d);
            let mut acc = 0.0;
            for_each_ray_weight(n, sc, t, |p, w| acc += w * px[p]);
            *out = acc;
        }
    }
    Ok(sino)
}

/// Exact adjoint `Aᵀ y` of [`project`].
pub fn backproject(sino: &Sinogram, geom: &Geometry) -> Result<Tensor> {
    geom.validate()?;
    sino.expect_shape(&geom.sinogram_shape(), "sinogram/geometry mismatch")?;
    let n = geom.image_size;
    let mut image = Tensor::zeros(&geom.image_shape());
    let px = image.data_mut();
    for v in 0..geom.n_views {
        let sc = geom.angle(v).sin_cos();
        for (d, &val) in sino.row(v).iter().enumerate() {
            if val == 0.0 {
                continue;
            }
            let t = geom.detector_offset(d);
            for_each_ray_weight(n, sc, t, |p, w| px[p] += w * val);
        }
    }
    Ok(image)
}
