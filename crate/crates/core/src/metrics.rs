//! Image quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR in dB; `Infinite` when the images are identical.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Psnr {
    Finite(f64),
    Infinite(InfiniteMarker),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfiniteMarker {
    #[serde(rename = "inf")]
    Inf,
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite(_) => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite(_))
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4} dB"),
            Psnr::Infinite(_) => write!(f, "inf"),
        }
    }
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "metric operands differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.is_empty() {
        return Err(Error::Shape("metric operands are empty".into()));
    }
    Ok(())
}

fn check_peak(peak: f64) -> Result<()> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::InvalidParam(format!("peak must be positive, got {peak}")));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.distance_sq(b) / a.len() as f64)
}

pub fn rmse(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<Psnr> {
    check_peak(peak)?;
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        Psnr::Infinite(InfiniteMarker::Inf)
    } else {
        Psnr::Finite(10.0 * (peak * peak / m).log10())
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable weighted average over every valid window position.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = taps.iter().enumerate().map(|(t, g)| g * img[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = taps.iter().enumerate().map(|(t, g)| g * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM of two 2D images over valid 11×11 Gaussian
/// windows (σ = 1.5), with `C1 = (0.01 peak)²`, `C2 = (0.03 peak)²`.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    check_pair(a, b)?;
    check_peak(peak)?;
    if a.shape().len() != 2 || a.rows() < SSIM_WINDOW || a.cols() < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs a 2D image at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {:?}",
            a.shape()
        )));
    }
    let (h, w) = (a.rows(), a.cols());
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..x.len()).map(f).collect() };
    let mu_x = filter_valid(x, h, w, &taps);
    let mu_y = filter_valid(y, h, w, &taps);
    let xx = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &taps);
    let yy = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &taps);
    let xy = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &taps);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}
