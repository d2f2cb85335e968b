use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parallel-beam scan geometry.
///
/// The image is `image_size × image_size` with unit pixel pitch, centered on
/// the rotation axis. Views are evenly spaced on `[0, π)` and the detector
/// array is centered on the axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub image_size: usize,
    pub n_views: usize,
    pub n_detectors: usize,
    #[serde(default = "default_spacing")]
    pub detector_spacing: f64,
}

fn default_spacing() -> f64 {
    1.0
}

impl Geometry {
    pub fn new(image_size: usize, n_views: usize, n_detectors: usize) -> Result<Self> {
        let g = Geometry {
            image_size,
            n_views,
            n_detectors,
            detector_spacing: 1.0,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.n_views == 0 || self.n_detectors == 0 {
            return Err(Error::InvalidParam(format!(
                "geometry extents must be positive: {self:?}"
            )));
        }
        if !(self.detector_spacing > 0.0 && self.detector_spacing.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "detector spacing must be positive, got {}",
                self.detector_spacing
            )));
        }
        Ok(())
    }

    pub fn angle(&self, view: usize) -> f64 {
        PI * view as f64 / self.n_views as f64
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.n_views).map(|v| self.angle(v)).collect()
    }

    /// Signed distance of detector `d` from the rotation axis.
    pub fn detector_offset(&self, d: usize) -> f64 {
        (d as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    pub fn image_shape(&self) -> [usize; 2] {
        [self.image_size, self.image_size]
    }

    pub fn sinogram_shape(&self) -> [usize; 2] {
        [self.n_views, self.n_detectors]
    }

    /// Smallest centered detector count that covers the image diagonal.
    pub fn covering_detectors(image_size: usize) -> usize {
        let d = (image_size as f64 * std::f64::consts::SQRT_2).ceil() as usize + 2;
        d | 1
    }
}
