//! The dual-domain objective
//! `Φ(x, z) = ½‖Ax − z‖² + (λ/2)‖P₀z − s₀‖² + R(x) + Q(z)`
//! and its ε-smoothed counterpart `Φ_ε` with `R_ε`, `Q_ε` in place of the
//! (2,1)-norms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizer::Regularizer;
use crate::tensor::{Sinogram, Tensor};
use crate::tomo::{backproject, embed_views, project, select_views, Geometry, ViewSelector};

/// Data-fidelity model: geometry `A`, view selection `P₀`, observed sparse
/// sinogram `s₀` and the weight `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FidelityModel {
    geometry: Geometry,
    selector: ViewSelector,
    s0: Sinogram,
    lambda: f64,
}

impl FidelityModel {
    pub fn new(geometry: Geometry, selector: ViewSelector, s0: Sinogram, lambda: f64) -> Result<Self> {
        geometry.validate()?;
        let rows = selector.count(geometry.n_views)?;
        s0.expect_shape(&[rows, geometry.n_detectors], "observed sparse sinogram")?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(FidelityModel {
            geometry,
            selector,
            s0,
            lambda,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn selector(&self) -> &ViewSelector {
        &self.selector
    }

    pub fn s0(&self) -> &Sinogram {
        &self.s0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn check(&self, x: &Tensor, z: &Tensor) -> Result<()> {
        x.expect_shape(&self.geometry.image_shape(), "image")?;
        z.expect_shape(&self.geometry.sinogram_shape(), "full sinogram")
    }

    /// `f` given a precomputed `Ax`.
    pub fn fidelity_with(&self, ax: &Sinogram, z: &Sinogram) -> Result<f64> {
        let data = 0.5 * ax.distance_sq(z);
        let sel = select_views(z, &self.selector)?;
        Ok(data + 0.5 * self.lambda * sel.distance_sq(&self.s0))
    }

    /// `∇_z f` given a precomputed `Ax`.
    pub fn grad_z_with(&self, ax: &Sinogram, z: &Sinogram) -> Result<Sinogram> {
        let mut g = z.sub(ax);
        let resid = select_views(z, &self.selector)?.sub(&self.s0);
        let embedded = embed_views(&resid, &self.selector, self.geometry.n_views)?;
        g.axpy(self.lambda, &embedded);
        Ok(g)
    }

    /// `∇_x f` given a precomputed `Ax`.
    pub fn grad_x_with(&self, ax: &Sinogram, z: &Sinogram) -> Result<Tensor> {
        backproject(&ax.sub(z), &self.geometry)
    }

    pub fn project(&self, x: &Tensor) -> Result<Sinogram> {
        project(x, &self.geometry)
    }
}

pub fn fidelity(model: &FidelityModel, x: &Tensor, z: &Sinogram) -> Result<f64> {
    model.check(x, z)?;
    model.fidelity_with(&model.project(x)?, z)
}

pub fn grad_x_f(model: &FidelityModel, x: &Tensor, z: &Sinogram) -> Result<Tensor> {
    model.check(x, z)?;
    model.grad_x_with(&model.project(x)?, z)
}

pub fn grad_z_f(model: &FidelityModel, x: &Tensor, z: &Sinogram) -> Result<Sinogram> {
    model.check(x, z)?;
    model.grad_z_with(&model.project(x)?, z)
}

/// `Φ = f + R + Q`.
pub fn phi(
    model: &FidelityModel,
    reg_r: &Regularizer,
    reg_q: &Regularizer,
    x: &Tensor,
    z: &Sinogram,
) -> Result<f64> {
    Ok(fidelity(model, x, z)? + reg_r.norm21(x)? + reg_q.norm21(z)?)
}

/// `Φ_ε = f + R_ε + Q_ε`.
pub fn phi_eps(
    model: &FidelityModel,
    reg_r: &Regularizer,
    reg_q: &Regularizer,
    x: &Tensor,
    z: &Sinogram,
    eps: f64,
) -> Result<f64> {
    Ok(fidelity(model, x, z)? + reg_r.smoothed_value(x, eps)?.0 + reg_q.smoothed_value(z, eps)?.0)
}

/// `(∇_x Φ_ε, ∇_z Φ_ε)`.
pub fn grad_phi_eps(
    model: &FidelityModel,
    reg_r: &Regularizer,
    reg_q: &Regularizer,
    x: &Tensor,
    z: &Sinogram,
    eps: f64,
) -> Result<(Tensor, Sinogram)> {
    model.check(x, z)?;
    let ax = model.project(x)?;
    let mut gx = model.grad_x_with(&ax, z)?;
    gx.add_assign(&reg_r.smoothed_grad(x, eps)?);
    let mut gz = model.grad_z_with(&ax, z)?;
    gz.add_assign(&reg_q.smoothed_grad(z, eps)?);
    Ok((gx, gz))
}

/// The full problem: fidelity plus both regularizers.
#[derive(Clone, Debug)]
pub struct Objective {
    pub model: FidelityModel,
    pub reg_r: Regularizer,
    pub reg_q: Regularizer,
}

/// A point `(x, z)` together with its projection `Ax`.
#[derive(Clone, Debug)]
pub struct Point {
    pub x: Tensor,
    pub z: Sinogram,
    pub ax: Sinogram,
}

/// Smoothed objective value at a point, split into its parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedValue {
    pub fidelity: f64,
    pub r: f64,
    pub q: f64,
}

impl SmoothedValue {
    pub fn total(&self) -> f64 {
        self.fidelity + self.r + self.q
    }
}

impl Objective {
    pub fn new(model: FidelityModel, reg_r: Regularizer, reg_q: Regularizer) -> Result<Self> {
        let g = model.geometry();
        reg_r.dims(&g.image_shape())?;
        reg_q.dims(&g.sinogram_shape())?;
        Ok(Objective {
            model,
            reg_r,
            reg_q,
        })
    }

    /// `m = m_R + m_Q`.
    pub fn total_positions(&self) -> usize {
        let g = self.model.geometry();
        self.reg_r.positions(&g.image_shape()).unwrap_or(0)
            + self.reg_q.positions(&g.sinogram_shape()).unwrap_or(0)
    }

    pub fn point(&self, x: Tensor, z: Sinogram) -> Result<Point> {
        self.model.check(&x, &z)?;
        let ax = self.model.project(&x)?;
        Ok(Point { x, z, ax })
    }

    /// Point with a new `z` and the same `x`.
    pub fn with_z(&self, p: &Point, z: Sinogram) -> Point {
        Point {
            x: p.x.clone(),
            z,
            ax: p.ax.clone(),
        }
    }

    pub fn phi_eps(&self, p: &Point, eps: f64) -> Result<SmoothedValue> {
        Ok(SmoothedValue {
            fidelity: self.model.fidelity_with(&p.ax, &p.z)?,
            r: self.reg_r.smoothed_value(&p.x, eps)?.0,
            q: self.reg_q.smoothed_value(&p.z, eps)?.0,
        })
    }

    pub fn phi(&self, p: &Point) -> Result<f64> {
        Ok(self.model.fidelity_with(&p.ax, &p.z)? + self.reg_r.norm21(&p.x)? + self.reg_q.norm21(&p.z)?)
    }

    pub fn grad_x_f(&self, p: &Point) -> Result<Tensor> {
        self.model.grad_x_with(&p.ax, &p.z)
    }

    pub fn grad_z_f(&self, p: &Point) -> Result<Sinogram> {
        self.model.grad_z_with(&p.ax, &p.z)
    }

    /// `(∇_x Φ_ε, ∇_z Φ_ε)` at a point.
    pub fn grad(&self, p: &Point, eps: f64) -> Result<(Tensor, Sinogram)> {
        let mut gx = self.grad_x_f(p)?;
        gx.add_assign(&self.reg_r.smoothed_grad(&p.x, eps)?);
        let mut gz = self.grad_z_f(p)?;
        gz.add_assign(&self.reg_q.smoothed_grad(&p.z, eps)?);
        Ok((gx, gz))
    }

    pub fn grad_norm(&self, p: &Point, eps: f64) -> Result<f64> {
        let (gx, gz) = self.grad(p, eps)?;
        Ok((gx.norm_sq() + gz.norm_sq()).sqrt())
    }

    /// Largest eigenvalue of the Hessian of `f` (a constant, since `f` is
    /// quadratic), by power iteration.
    pub fn fidelity_lipschitz(&self, iters: usize) -> Result<f64> {
        let g = self.model.geometry();
        let mut vx = Tensor::filled(&g.image_shape(), 1.0);
        let mut vz = Tensor::filled(&g.sinogram_shape(), 1.0);
        let mut lam = 0.0;
        for _ in 0..iters {
            let nv = (vx.norm_sq() + vz.norm_sq()).sqrt();
            vx.scale_in_place(1.0 / nv);
            vz.scale_in_place(1.0 / nv);
            // H (vx, vz) = (Aᵀ(A vx − vz), vz − A vx + λ P₀ᵀP₀ vz)
            let avx = self.model.project(&vx)?;
            let hx = self.model.grad_x_with(&avx, &vz)?;
            let mut hz = vz.sub(&avx);
            let sel = select_views(&vz, self.model.selector())?;
            hz.axpy(
                self.model.lambda(),
                &embed_views(&sel, self.model.selector(), g.n_views)?,
            );
            lam = vx.dot(&hx) + vz.dot(&hz);
            vx = hx;
            vz = hz;
        }
        Ok(lam)
    }

    /// Largest eigenvalue of `AᵀA` by power iteration.
    pub fn projector_norm_sq(&self, iters: usize) -> Result<f64> {
        let g = self.model.geometry();
        let mut v = Tensor::filled(&g.image_shape(), 1.0);
        let mut lam = 0.0;
        for _ in 0..iters {
            v.scale_in_place(1.0 / v.norm());
            let atav = backproject(&self.model.project(&v)?, g)?;
            lam = v.dot(&atav);
            v = atav;
        }
        Ok(lam)
    }
}
