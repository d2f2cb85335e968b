//! Perturbation stability experiment: a text stamp or Gaussian noise is
//! added to the phantom, the data are re-simulated and reconstructed, and the
//! result is compared with the perturbed ground truth.

use serde::{Deserialize, Serialize};

use lama_core::metrics::{psnr, Psnr};
use lama_core::Tensor;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{peak_of, reconstruct, rng, simulate, Reconstruction};

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

/// 5×7 bitmap rows, most significant of the low five bits on the left.
fn glyph(c: char) -> Option<[u8; GLYPH_H]> {
    Some(match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        ' ' => [0; GLYPH_H],
        _ => return None,
    })
}

/// Binary mask of `text` rendered at `scale` pixels per font cell, centered
/// in an `n × n` image.
pub fn stamp_mask(text: &str, scale: usize, n: usize) -> CliResult<Tensor> {
    let glyphs = text
        .chars()
        .map(|c| glyph(c).ok_or_else(|| CliError::Validation(format!("stamp text has no glyph for {c:?}"))))
        .collect::<CliResult<Vec<_>>>()?;
    if glyphs.is_empty() || scale == 0 {
        return Err(CliError::Validation("stamp text must be non-empty".into()));
    }
    let w = (glyphs.len() * (GLYPH_W + 1) - 1) * scale;
    let h = GLYPH_H * scale;
    if w > n || h > n {
        return Err(CliError::Validation(format!(
            "stamp of {w}×{h} pixels does not fit a {n}×{n} image"
        )));
    }
    let (top, left) = ((n - h) / 2, (n - w) / 2);
    let mut mask = Tensor::zeros(&[n, n]);
    for (g, rows) in glyphs.iter().enumerate() {
        for (r, bits) in rows.iter().enumerate() {
            for c in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - c) & 1 == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let i = top + r * scale + dy;
                        let j = left + (g * (GLYPH_W + 1) + c) * scale + dx;
                        *mask.at_mut(i, j) = 1.0;
                    }
                }
            }
        }
    }
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Perturbation {
    Gaussian { sigma: f64 },
    TextStamp,
}

impl Perturbation {
    pub fn label(&self) -> String {
        match self {
            Perturbation::Gaussian { sigma } => format!("gaussian-{sigma}"),
            Perturbation::TextStamp => "text-stamp".into(),
        }
    }
}

/// Outcome of one perturbed run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub perturbation: Perturbation,
    /// PSNR of the reconstruction against the perturbed ground truth.
    pub psnr_perturbed: Psnr,
    /// PSNR against the clean phantom.
    pub psnr_clean: Psnr,
    /// Maximum of the clean phantom.
    pub peak: f64,
    /// Mean of `|x* − clean|` over the stamp mask.
    pub mask_mean: Option<f64>,
    /// Half the stamp contrast.
    pub mask_threshold: Option<f64>,
}

impl Case {
    pub fn stamp_preserved(&self) -> Option<bool> {
        Some(self.mask_mean? > self.mask_threshold?)
    }
}

pub struct CaseRun {
    pub case: Case,
    pub perturbed: Tensor,
    pub recon: Reconstruction,
}

/// The perturbed ground truth.
pub fn perturb(cfg: &RunConfig, clean: &Tensor, pert: Perturbation) -> CliResult<(Tensor, Option<Tensor>)> {
    Ok(match pert {
        Perturbation::Gaussian { sigma } => {
            let noise = Tensor::randn(clean.shape(), &mut rng(cfg.seed)).scale(sigma);
            (clean.add(&noise), None)
        }
        Perturbation::TextStamp => {
            let st = &cfg.stability;
            let mask = stamp_mask(&st.text, st.stamp_scale, cfg.geometry.image_size)?;
            (clean.add(&mask.scale(st.contrast)), Some(mask))
        }
    })
}

pub fn run_case(cfg: &RunConfig, clean: &Tensor, pert: Perturbation) -> CliResult<CaseRun> {
    let peak = peak_of(clean)?;
    let (perturbed, mask) = perturb(cfg, clean, pert)?;
    let problem = simulate(cfg, perturbed.clone())?;
    let recon = reconstruct(cfg, &problem)?;
    let x = &recon.output.x;
    let mask_mean = mask.as_ref().map(|m| {
        let inside: f64 = m.data().iter().sum();
        let diff: f64 = m
            .data()
            .iter()
            .zip(x.data().iter().zip(clean.data()))
            .map(|(w, (a, b))| w * (a - b).abs())
            .sum();
        diff / inside
    });
    let case = Case {
        perturbation: pert,
        psnr_perturbed: psnr(x, &perturbed, peak)?,
        psnr_clean: psnr(x, clean, peak)?,
        peak,
        mask_mean,
        mask_threshold: mask.map(|_| cfg.stability.contrast / 2.0),
    };
    Ok(CaseRun { case, perturbed, recon })
}

/// Summary over all configured cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub cases: Vec<Case>,
    /// PSNR against the perturbed truth strictly decreases as σ grows.
    pub gaussian_monotone: bool,
    pub stamp_preserved: Option<bool>,
}

pub fn summarize(cases: Vec<Case>) -> StabilitySummary {
    let mut gauss: Vec<(f64, f64)> = cases
        .iter()
        .filter_map(|c| match c.perturbation {
            Perturbation::Gaussian { sigma } => Some((sigma, c.psnr_perturbed.db())),
            Perturbation::TextStamp => None,
        })
        .collect();
    gauss.sort_by(|a, b| a.0.total_cmp(&b.0));
    let gaussian_monotone = gauss.windows(2).all(|w| w[1].1 < w[0].1);
    let stamp_preserved = cases.iter().find_map(Case::stamp_preserved);
    StabilitySummary {
        cases,
        gaussian_monotone,
        stamp_preserved,
    }
}
