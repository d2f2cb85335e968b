use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ellipse on the `[-1, 1]²` canvas with additive intensity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    /// Semi-axis along the rotated x direction.
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    /// Rotation in degrees, counter-clockwise.
    pub phi_deg: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

const fn e(intensity: f64, a: f64, b: f64, x0: f64, y0: f64, phi_deg: f64) -> Ellipse {
    Ellipse {
        intensity,
        a,
        b,
        x0,
        y0,
        phi_deg,
    }
}

/// Ten-ellipse Shepp-Logan head with the high-contrast intensities, so
/// values lie in `[0, 1]`.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    e(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    e(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    e(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    e(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    e(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    e(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    e(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    e(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    e(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    e(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Canvas coordinate of pixel `(i, j)` on an `n × n` grid; `y` points up.
pub(crate) fn canvas_coords(n: usize, i: usize, j: usize) -> (f64, f64) {
    let nf = n as f64;
    let x = (2.0 * j as f64 - (nf - 1.0)) / nf;
    let y = ((nf - 1.0) - 2.0 * i as f64) / nf;
    (x, y)
}

fn rasterize(n: usize, ellipses: &[Ellipse]) -> Tensor {
    let mut img = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = canvas_coords(n, i, j);
            let v: f64 = ellipses
                .iter()
                .filter(|el| el.contains(x, y))
                .map(|el| el.intensity)
                .sum();
            *img.at_mut(i, j) = v.clamp(0.0, 1.0);
        }
    }
    img
}

pub fn shepp_logan(n: usize) -> Result<Tensor> {
    if n < 16 {
        return Err(Error::InvalidParam(format!(
            "phantom size must be at least 16, got {n}"
        )));
    }
    Ok(rasterize(n, &SHEPP_LOGAN))
}

/// A head-like random phantom: an outer ellipse plus `count` random interior
/// ellipses with intensities in `[-0.3, 0.5]`, clamped to `[0, 1]`.
pub fn random_ellipse_phantom<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Result<Tensor> {
    if n < 16 {
        return Err(Error::InvalidParam(format!(
            "phantom size must be at least 16, got {n}"
        )));
    }
    let mut ellipses = vec![e(
        rng.random_range(0.4..0.7),
        rng.random_range(0.6..0.75),
        rng.random_range(0.75..0.9),
        0.0,
        0.0,
        rng.random_range(-15.0..15.0),
    )];
    for _ in 0..count {
        ellipses.push(e(
            rng.random_range(-0.3..0.5),
            rng.random_range(0.04..0.3),
            rng.random_range(0.04..0.3),
            rng.random_range(-0.45..0.45),
            rng.random_range(-0.55..0.55),
            rng.random_range(0.0..180.0),
        ));
    }
    Ok(rasterize(n, &ellipses))
}
