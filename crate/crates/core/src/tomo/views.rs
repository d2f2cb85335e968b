use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Sinogram, Tensor};

/// Keeps every `rate`-th view starting at `offset`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSelector {
    rate: usize,
    #[serde(default)]
    offset: usize,
}

impl ViewSelector {
    pub fn new(rate: usize, offset: usize) -> Result<Self> {
        let s = ViewSelector { rate, offset };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rate == 0 || self.offset >= self.rate {
            return Err(Error::InvalidParam(format!(
                "view selector needs rate > 0 and offset < rate, got rate {} offset {}",
                self.rate, self.offset
            )));
        }
        Ok(())
    }

    pub fn rate(&self) -> usize {
        self.rate
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Number of selected views out of `n_views`.
    pub fn count(&self, n_views: usize) -> Result<usize> {
        self.validate()?;
        if !n_views.is_multiple_of(self.rate) {
            return Err(Error::InvalidParam(format!(
                "rate {} does not divide {n_views} views",
                self.rate
            )));
        }
        Ok(n_views / self.rate)
    }

    /// Full-sinogram row indices of the selected views.
    pub fn indices(&self, n_views: usize) -> Result<Vec<usize>> {
        let count = self.count(n_views)?;
        Ok((0..count).map(|k| self.offset + k * self.rate).collect())
    }

    /// Whether full-sinogram row `view` is acquired.
    pub fn contains(&self, view: usize) -> bool {
        view % self.rate == self.offset
    }
}

/// `P_i s`: the rows `{offset, offset + rate, ...}` of `sino`.
pub fn select_views(sino: &Sinogram, sel: &ViewSelector) -> Result<Sinogram> {
    if sino.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "sinogram must be 2-D, got {:?}",
            sino.shape()
        )));
    }
    let idx = sel.indices(sino.rows())?;
    let d = sino.cols();
    let mut out = Tensor::zeros(&[idx.len(), d]);
    for (k, &r) in idx.iter().enumerate() {
        out.row_mut(k).copy_from_slice(sino.row(r));
    }
    Ok(out)
}

/// `P_iᵀ t`: places the rows of `sub` at the selected positions of a zero
/// sinogram with `n_views` rows.
pub fn embed_views(sub: &Sinogram, sel: &ViewSelector, n_views: usize) -> Result<Sinogram> {
    let idx = sel.indices(n_views)?;
    if sub.shape().len() != 2 || sub.rows() != idx.len() {
        return Err(Error::Shape(format!(
            "expected {} selected rows, got shape {:?}",
            idx.len(),
            sub.shape()
        )));
    }
    let d = sub.cols();
    let mut out = Tensor::zeros(&[n_views, d]);
    for (k, &r) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(sub.row(k));
    }
    Ok(out)
}
