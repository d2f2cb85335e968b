//! The linearized alternating minimization loop.
//!
//! Each outer iteration proposes a linearized proximal step `(u_x, u_z)`,
//! accepts it when it satisfies the sufficient descent conditions, and
//! otherwise falls back to a backtracked block-coordinate gradient step
//! `(v_x, v_z)`. After the step the smoothing level is reduced by `γ` whenever
//! `‖∇Φ_ε‖ < σγε` at the new point.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Objective, Point};
use crate::tensor::{Sinogram, Tensor};
use crate::tomo::backproject;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// z gradient step.
    pub alpha: f64,
    /// x gradient step.
    pub beta: f64,
    /// Proximal weight paired with `alpha`.
    pub p: f64,
    /// Proximal weight paired with `beta`.
    pub q: f64,
    /// Safeguard step for z, in `(0, 1)`.
    pub bar_alpha: f64,
    /// Safeguard step for x, in `(0, 1)`.
    pub bar_beta: f64,
    /// Backtracking factor.
    pub rho: f64,
    /// Safeguard descent constant.
    pub delta: f64,
    /// Sufficient-descent constant.
    pub eta: f64,
    /// Smoothing reduction factor.
    pub gamma: f64,
    /// Reduction threshold scale; `0` disables reductions.
    pub sigma: f64,
    pub eps0: f64,
    pub eps_tol: f64,
    pub max_outer_iters: usize,
    pub max_linesearch: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            alpha: 0.1,
            beta: 0.1,
            p: 0.1,
            q: 0.1,
            bar_alpha: 0.9,
            bar_beta: 0.9,
            rho: 0.5,
            delta: 1e-3,
            eta: 1e-3,
            gamma: 0.5,
            sigma: 1.0,
            eps0: 1.0,
            eps_tol: 1e-4,
            max_outer_iters: 2000,
            max_linesearch: 60,
        }
    }
}

fn in_open_unit(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl SolverParams {
    /// `α̂ = αp / (α + p)`.
    pub fn alpha_hat(&self) -> f64 {
        self.alpha * self.p / (self.alpha + self.p)
    }

    /// `β̂ = βq / (β + q)`.
    pub fn beta_hat(&self) -> f64 {
        self.beta * self.q / (self.beta + self.q)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidParam(format!("solver parameter {what} = {v} out of range")))
        };
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("p", self.p),
            ("q", self.q),
            ("eta", self.eta),
            ("eps0", self.eps0),
        ] {
            if !positive(v) {
                return bad(name, v);
            }
        }
        for (name, v) in [
            ("bar_alpha", self.bar_alpha),
            ("bar_beta", self.bar_beta),
            ("rho", self.rho),
            ("delta", self.delta),
            ("gamma", self.gamma),
        ] {
            if !in_open_unit(v) {
                return bad(name, v);
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma", self.sigma);
        }
        if !(self.eps_tol >= 0.0 && self.eps_tol.is_finite()) {
            return bad("eps_tol", self.eps_tol);
        }
        if self.max_outer_iters == 0 {
            return bad("max_outer_iters", 0.0);
        }
        Ok(())
    }

    /// Step sizes matched to block Lipschitz constants: `lx` and `lz` for the
    /// fidelity in x (largest eigenvalue of `AᵀA`) and z (`1 + λ`), `lr` and
    /// `lq` for the smoothed regularizer gradients at `eps0`. The prox weights
    /// are chosen so that `β̂ = 1/(lx + lr)` and `α̂ = 1/(lz + lq)`, and the
    /// sufficient-descent constant is tied to the smaller of those steps.
    pub fn with_auto_steps(mut self, lx: f64, lz: f64, lr: f64, lq: f64) -> Self {
        self.alpha = 1.0 / lz;
        self.beta = 1.0 / lx;
        self.p = if lq > 0.0 { 1.0 / lq } else { self.alpha };
        self.q = if lr > 0.0 { 1.0 / lr } else { self.beta };
        self.bar_alpha = (1.0 / (lz + lq)).min(0.9);
        self.bar_beta = (1.0 / (lx + lr)).min(0.9);
        self.eta = self.eta.min(0.5 * self.alpha_hat().min(self.beta_hat()));
        self
    }
}

/// Which candidate an iteration accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "u-accepted")]
    UAccepted,
    #[serde(rename = "v-fallback")]
    VFallback,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::UAccepted => "u-accepted",
            Branch::VFallback => "v-fallback",
        })
    }
}

/// One row of the iteration trace. Row `k` describes the move from
/// `(x_k, z_k)` to `(x_{k+1}, z_{k+1})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `ε_{k+1}`, after a possible reduction.
    pub eps: f64,
    /// `Φ_{ε_{k+1}}(x_{k+1}, z_{k+1})`.
    pub phi_eps: f64,
    /// `Φ(x_{k+1}, z_{k+1})`.
    pub phi: f64,
    /// `‖∇Φ_{ε_k}(x_{k+1}, z_{k+1})‖`, the quantity tested for reduction.
    pub grad_norm: f64,
    pub branch: Branch,
    pub linesearch_count: usize,
    pub reduced: bool,
}

/// Extra per-iteration quantities that are not part of the exported trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostics {
    /// `ε_k`.
    pub eps_before: f64,
    /// `Φ_{ε_k}(x_k, z_k)`.
    pub phi_eps_before: f64,
    /// `Φ_{ε_k}(x_{k+1}, z_{k+1})`.
    pub phi_eps_after: f64,
    /// `‖∇Φ_{ε_k}(x_k, z_k)‖`.
    pub grad_norm_before: f64,
    /// `‖x_{k+1} − x_k‖² + ‖z_{k+1} − z_k‖²`.
    pub step_sq: f64,
}

/// Gradient of `Φ_ε` at the current point, split into fidelity and
/// regularizer parts so it can be refreshed cheaply when `ε` changes.
#[derive(Clone, Debug)]
struct Gradient {
    fx: Tensor,
    fz: Sinogram,
    x: Tensor,
    z: Sinogram,
}

impl Gradient {
    fn norm(&self) -> f64 {
        (self.x.norm_sq() + self.z.norm_sq()).sqrt()
    }
}

/// Evolving iterate of a run.
#[derive(Clone, Debug)]
pub struct SolverState {
    point: Point,
    eps: f64,
    k: usize,
    bar_alpha: f64,
    bar_beta: f64,
    reductions: usize,
    phi_eps: f64,
    grad: Gradient,
}

impl SolverState {
    pub fn new(obj: &Objective, x0: Tensor, z0: Sinogram, params: &SolverParams) -> Result<Self> {
        params.validate()?;
        let point = obj.point(x0, z0)?;
        let phi_eps = obj.phi_eps(&point, params.eps0)?.total();
        let grad = gradient(obj, &point, params.eps0)?;
        Ok(SolverState {
            point,
            eps: params.eps0,
            k: 0,
            bar_alpha: params.bar_alpha,
            bar_beta: params.bar_beta,
            reductions: 0,
            phi_eps,
            grad,
        })
    }

    pub fn x(&self) -> &Tensor {
        &self.point.x
    }

    pub fn z(&self) -> &Sinogram {
        &self.point.z
    }

    pub fn point(&self) -> &Point {
        &self.point
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }

    /// Current safeguard steps `(ᾱ, β̄)`.
    pub fn bar_steps(&self) -> (f64, f64) {
        (self.bar_alpha, self.bar_beta)
    }

    /// `Φ_ε(x_k, z_k)` at the current `ε`.
    pub fn phi_eps(&self) -> f64 {
        self.phi_eps
    }

    /// `‖∇Φ_ε(x_k, z_k)‖` at the current `ε`.
    pub fn grad_norm(&self) -> f64 {
        self.grad.norm()
    }

    pub fn into_parts(self) -> (Tensor, Sinogram) {
        (self.point.x, self.point.z)
    }
}

fn gradient(obj: &Objective, p: &Point, eps: f64) -> Result<Gradient> {
    let fx = obj.grad_x_f(p)?;
    let fz = obj.grad_z_f(p)?;
    regularized(obj, p, fx, fz, eps)
}

fn regularized(obj: &Objective, p: &Point, fx: Tensor, fz: Sinogram, eps: f64) -> Result<Gradient> {
    let x = fx.add(&obj.reg_r.smoothed_grad(&p.x, eps)?);
    let z = fz.add(&obj.reg_q.smoothed_grad(&p.z, eps)?);
    Ok(Gradient { fx, fz, x, z })
}

fn step_sq(a: &Point, b: &Point) -> (f64, f64) {
    (b.x.distance_sq(&a.x), b.z.distance_sq(&a.z))
}

/// Linearized proximal candidate `(u_x, u_z)`: z first, then x.
pub fn u_update(state: &SolverState, params: &SolverParams, obj: &Objective) -> Result<(Tensor, Sinogram)> {
    let p = &state.point;
    let eps = state.eps;
    let b = p.z.minus_scaled(params.alpha, &state.grad.fz);
    let u_z = b.minus_scaled(params.alpha_hat(), &obj.reg_q.smoothed_grad(&b, eps)?);
    let c = p.x.minus_scaled(params.beta, &obj.model.grad_x_with(&p.ax, &u_z)?);
    let u_x = c.minus_scaled(params.beta_hat(), &obj.reg_r.smoothed_grad(&c, eps)?);
    Ok((u_x, u_z))
}

/// Outcome of the sufficient-descent test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdcOutcome {
    pub accepted: bool,
    pub phi_eps_candidate: f64,
    pub step_sq: f64,
}

fn sdc_eval(state: &SolverState, cand: &Point, params: &SolverParams, obj: &Objective) -> Result<SdcOutcome> {
    let phi_new = obj.phi_eps(cand, state.eps)?.total();
    let (dx, dz) = step_sq(&state.point, cand);
    let descent = phi_new - state.phi_eps <= -params.eta * (dx + dz);
    let gradient = state.grad.norm() <= (dx.sqrt() + dz.sqrt()) / params.eta;
    Ok(SdcOutcome {
        accepted: descent && gradient,
        phi_eps_candidate: phi_new,
        step_sq: dx + dz,
    })
}

/// Both sufficient descent conditions for a candidate `(u_x, u_z)`.
pub fn sdc_check(
    state: &SolverState,
    candidate: (&Tensor, &Sinogram),
    params: &SolverParams,
    obj: &Objective,
) -> Result<bool> {
    let cand = obj.point(candidate.0.clone(), candidate.1.clone())?;
    Ok(sdc_eval(state, &cand, params, obj)?.accepted)
}

/// Accepted safeguard step.
#[derive(Clone, Debug)]
pub struct SafeguardStep {
    pub x: Tensor,
    pub z: Sinogram,
    pub linesearch_count: usize,
    /// `(ᾱ, β̄)` that produced the accepted step.
    pub bar_steps: (f64, f64),
    pub phi_eps: f64,
}

fn safeguard(state: &SolverState, params: &SolverParams, obj: &Objective) -> Result<(Point, SafeguardStep)> {
    let p = &state.point;
    let (mut ba, mut bb) = (state.bar_alpha, state.bar_beta);
    // ∇_x f(x, v_z) + ∇R_ε(x) = ∇_xΦ_ε(x, z) + Aᵀ(z − v_z) and z − v_z = ᾱ ∇_zΦ_ε(x, z)
    let at_gz = backproject(&state.grad.z, obj.model.geometry())?;
    for ell in 0..=params.max_linesearch {
        let v_z = p.z.minus_scaled(ba, &state.grad.z);
        let mut dir_x = state.grad.x.clone();
        dir_x.axpy(ba, &at_gz);
        let v_x = p.x.minus_scaled(bb, &dir_x);
        let cand = obj.point(v_x, v_z)?;
        let phi_new = obj.phi_eps(&cand, state.eps)?.total();
        let (dx, dz) = step_sq(p, &cand);
        if phi_new - state.phi_eps <= -params.delta * (dx + dz) {
            let step = SafeguardStep {
                x: cand.x.clone(),
                z: cand.z.clone(),
                linesearch_count: ell,
                bar_steps: (ba, bb),
                phi_eps: phi_new,
            };
            return Ok((cand, step));
        }
        ba *= params.rho;
        bb *= params.rho;
    }
    Err(Error::LineSearch {
        max: params.max_linesearch,
        k: state.k,
        eps: state.eps,
        phi_eps: state.phi_eps,
        grad_norm: state.grad.norm(),
    })
}

/// Backtracked block-coordinate step from the current state.
pub fn bcd_safeguard(state: &SolverState, params: &SolverParams, obj: &Objective) -> Result<SafeguardStep> {
    Ok(safeguard(state, params, obj)?.1)
}

/// One outer iteration.
pub fn lama_step(
    state: SolverState,
    params: &SolverParams,
    obj: &Objective,
) -> Result<(SolverState, IterationRecord, StepDiagnostics)> {
    let (u_x, u_z) = u_update(&state, params, obj)?;
    let cand = obj.point(u_x, u_z)?;
    let sdc = sdc_eval(&state, &cand, params, obj)?;
    let (next, branch, ell, phi_after, step) = if sdc.accepted {
        (cand, Branch::UAccepted, 0, sdc.phi_eps_candidate, sdc.step_sq)
    } else {
        let (cand, sg) = safeguard(&state, params, obj)?;
        let (dx, dz) = step_sq(&state.point, &cand);
        (cand, Branch::VFallback, sg.linesearch_count, sg.phi_eps, dx + dz)
    };
    if !next.x.is_finite() || !next.z.is_finite() {
        return Err(Error::NonFinite("lama_step"));
    }

    let mut bar_alpha = state.bar_alpha;
    let mut bar_beta = state.bar_beta;
    if branch == Branch::VFallback {
        let f = params.rho.powi(ell as i32);
        bar_alpha *= f;
        bar_beta *= f;
    }

    let eps = state.eps;
    let grad = gradient(obj, &next, eps)?;
    let grad_norm = grad.norm();
    let reduced = grad_norm < params.sigma * params.gamma * eps;
    let (new_eps, grad, phi_eps, reductions) = if reduced {
        // from ε₀ directly so the schedule is exactly ε₀ γ^l for any γ
        let e = params.eps0 * params.gamma.powi(state.reductions as i32 + 1);
        let g = regularized(obj, &next, grad.fx, grad.fz, e)?;
        bar_alpha = params.bar_alpha;
        bar_beta = params.bar_beta;
        (e, g, obj.phi_eps(&next, e)?.total(), state.reductions + 1)
    } else {
        (eps, grad, phi_after, state.reductions)
    };
    let phi = obj.phi(&next)?;

    let record = IterationRecord {
        k: state.k,
        eps: new_eps,
        phi_eps,
        phi,
        grad_norm,
        branch,
        linesearch_count: ell,
        reduced,
    };
    let diag = StepDiagnostics {
        eps_before: eps,
        phi_eps_before: state.phi_eps,
        phi_eps_after: phi_after,
        grad_norm_before: state.grad.norm(),
        step_sq: step,
    };
    let next_state = SolverState {
        point: next,
        eps: new_eps,
        k: state.k + 1,
        bar_alpha,
        bar_beta,
        reductions,
        phi_eps,
        grad,
    };
    Ok((next_state, record, diag))
}

/// Stationarity certificate at termination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Smoothing level at which the reduction test last passed.
    pub eps: f64,
    /// `‖∇Φ_ε(x*, z*)‖` at that level.
    pub grad_norm: f64,
    /// `σγε`.
    pub threshold: f64,
    /// Whether the run stopped on the tolerance rather than the iteration cap.
    pub reached_tolerance: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub x: Tensor,
    pub z: Sinogram,
    pub trace: Vec<IterationRecord>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// `Φ_{ε₀}(x₀, z₀)`.
    pub initial_phi_eps: f64,
    /// `‖∇Φ_{ε₀}(x₀, z₀)‖`.
    pub initial_grad_norm: f64,
    pub certificate: Certificate,
    pub final_eps: f64,
}

/// Runs the loop from `(x0, z0)` until the iteration cap, or until the
/// reduction test passes at a smoothing level `ε ≤ eps_tol`.
pub fn run(
    x0: Tensor,
    z0: Sinogram,
    params: &SolverParams,
    obj: &Objective,
) -> Result<RunOutput> {
    run_with(x0, z0, params, obj, |_, _| {})
}

/// [`run`] with a callback invoked after every iteration.
pub fn run_with(
    x0: Tensor,
    z0: Sinogram,
    params: &SolverParams,
    obj: &Objective,
    mut observe: impl FnMut(&SolverState, &IterationRecord),
) -> Result<RunOutput> {
    let mut state = SolverState::new(obj, x0, z0, params)?;
    let initial_phi_eps = state.phi_eps;
    let initial_grad_norm = state.grad.norm();
    let mut trace = Vec::new();
    let mut diagnostics = Vec::new();
    let mut certificate = Certificate {
        eps: params.eps0,
        grad_norm: initial_grad_norm,
        threshold: params.sigma * params.gamma * params.eps0,
        reached_tolerance: false,
    };
    for _ in 0..params.max_outer_iters {
        let (next, rec, diag) = lama_step(state, params, obj)?;
        state = next;
        observe(&state, &rec);
        let eps_before = diag.eps_before;
        trace.push(rec);
        diagnostics.push(diag);
        if rec.reduced {
            certificate = Certificate {
                eps: eps_before,
                grad_norm: rec.grad_norm,
                threshold: params.sigma * params.gamma * eps_before,
                reached_tolerance: eps_before <= params.eps_tol,
            };
            if certificate.reached_tolerance {
                break;
            }
        }
    }
    let final_eps = state.eps;
    let (x, z) = state.into_parts();
    Ok(RunOutput {
        x,
        z,
        trace,
        diagnostics,
        initial_phi_eps,
        initial_grad_norm,
        certificate,
        final_eps,
    })
}

/// Upper bound on backtracking steps,
/// `max(0, ⌈log_ρ((δ + L/2)⁻¹ · max(ᾱ, β̄)⁻¹)⌉)`.
pub fn linesearch_bound(params: &SolverParams, lipschitz: f64) -> usize {
    let arg = 1.0 / ((params.delta + lipschitz / 2.0) * params.bar_alpha.max(params.bar_beta));
    let l = (arg.ln() / params.rho.ln()).ceil();
    if l.is_finite() && l > 0.0 {
        l as usize
    } else {
        0
    }
}

/// The constant `C₃ = max(2/η³, C₁L²)` of the fixed-ε telescoping bound
/// `Σ_k ‖∇Φ_ε(x_k, z_k)‖² ≤ C₃ (Φ_ε(x₀, z₀) − inf Φ_ε)`.
///
/// `C₁L²` is made explicit by choosing `μ` so that the cross term in the
/// safeguard decrease is at most half of the x term, and by the smallest
/// admissible backtracked step `t_min = min(ᾱ, β̄) ρ^{ℓ_max}`.
pub fn telescoping_constant(params: &SolverParams, lipschitz: f64) -> f64 {
    let lmax = linesearch_bound(params, lipschitz);
    let t_max = params.bar_alpha.max(params.bar_beta);
    let t_min = params.bar_alpha.min(params.bar_beta) * params.rho.powi(lmax as i32);
    let mu = 1.0 / (1.0 + 2.0 * t_max * t_max * lipschitz * lipschitz);
    let c1l2 = 1.0 / (params.delta * mu.min(0.5) * t_min * t_min);
    (2.0 / params.eta.powi(3)).max(c1l2)
}

#[cfg(test)]
mod tests;
