//! Problem setup and reconstruction runs shared by the commands.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use lama_core::init::{init_pair, ViewAdvanceMap};
use lama_core::io::{read_advance_map, read_array, read_regularizer};
use lama_core::metrics::{psnr, rmse, ssim, Psnr};
use lama_core::objective::{FidelityModel, Objective};
use lama_core::regularizer::{lipschitz_estimate, LipschitzEstimate, Regularizer, Role};
use lama_core::solver::{linesearch_bound, run, Branch, Certificate, RunOutput, SolverParams};
use lama_core::tomo::{
    embed_views, project, random_ellipse_phantom, select_views, shepp_logan, zero_fill_fbp, Geometry,
    ViewSelector,
};
use lama_core::{Sinogram, Tensor};

use crate::config::{InitSpec, PhantomKind, RegularizerSpec, RunConfig};
use crate::error::{CliError, CliResult};

pub const PHANTOM_FILE: &str = "phantom.bin";
pub const FULL_FILE: &str = "sinogram_full.bin";
pub const SPARSE_FILE: &str = "sinogram_sparse.bin";

/// Ground truth with its full and acquired sinograms.
#[derive(Clone, Debug)]
pub struct Problem {
    pub geometry: Geometry,
    pub selector: ViewSelector,
    pub truth: Tensor,
    pub full: Sinogram,
    pub s0: Sinogram,
}

impl Problem {
    pub fn sparse_geometry(&self) -> Geometry {
        Geometry {
            n_views: self.s0.rows(),
            ..self.geometry
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn phantom(cfg: &RunConfig) -> CliResult<Tensor> {
    let n = cfg.geometry.image_size;
    let img = match cfg.phantom.kind {
        PhantomKind::SheppLogan => shepp_logan(n)?,
        PhantomKind::RandomEllipses => random_ellipse_phantom(n, cfg.phantom.ellipses, &mut rng(cfg.seed))?,
    };
    Ok(img.scale(cfg.phantom.scale))
}

pub fn simulate(cfg: &RunConfig, truth: Tensor) -> CliResult<Problem> {
    let full = project(&truth, &cfg.geometry)?;
    let s0 = select_views(&full, &cfg.selector)?;
    Ok(Problem {
        geometry: cfg.geometry,
        selector: cfg.selector,
        truth,
        full,
        s0,
    })
}

/// Reads `simulate` outputs, checking them against the configured geometry.
pub fn load_problem(cfg: &RunConfig, dir: &Path) -> CliResult<Problem> {
    let (truth, _) = read_array(&dir.join(PHANTOM_FILE))?;
    let (full, fh) = read_array(&dir.join(FULL_FILE))?;
    let (s0, _) = read_array(&dir.join(SPARSE_FILE))?;
    if fh.geometry != Some(cfg.geometry) {
        return Err(CliError::Validation(format!(
            "{} was simulated with geometry {:?}, config has {:?}",
            dir.display(),
            fh.geometry,
            cfg.geometry
        )));
    }
    truth.expect_shape(&cfg.geometry.image_shape(), "phantom")?;
    let expected = select_views(&full, &cfg.selector)?;
    s0.expect_shape(expected.shape(), "sparse sinogram")?;
    Ok(Problem {
        geometry: cfg.geometry,
        selector: cfg.selector,
        truth,
        full,
        s0,
    })
}

/// The configured problem: loaded from `data_dir` or simulated.
pub fn problem(cfg: &RunConfig) -> CliResult<Problem> {
    match &cfg.data_dir {
        Some(dir) => load_problem(cfg, dir),
        None => simulate(cfg, phantom(cfg)?),
    }
}

pub fn regularizer(spec: &RegularizerSpec, role: Role) -> CliResult<Regularizer> {
    Ok(match (spec, role) {
        (RegularizerSpec::Tv { weight }, Role::Image) => Regularizer::total_variation(*weight),
        (RegularizerSpec::SinogramDefault { weight }, Role::Sinogram) => Regularizer::sinogram_default(*weight),
        (RegularizerSpec::Zero, role) => Regularizer::zero(role),
        (RegularizerSpec::File { path }, role) => read_regularizer(path, role)?,
        (spec, role) => {
            return Err(CliError::Validation(format!("{spec:?} cannot act as the {role:?} regularizer")));
        }
    })
}

pub fn objective(cfg: &RunConfig, problem: &Problem) -> CliResult<Objective> {
    let model = FidelityModel::new(problem.geometry, problem.selector, problem.s0.clone(), cfg.lambda)?;
    Ok(Objective::new(
        model,
        regularizer(&cfg.image_regularizer, Role::Image)?,
        regularizer(&cfg.sinogram_regularizer, Role::Sinogram)?,
    )?)
}

/// `(x0, z0)` for the configured init mode.
pub fn initial_point(cfg: &RunConfig, problem: &Problem) -> CliResult<(Tensor, Sinogram)> {
    let (g, sel) = (&problem.geometry, &problem.selector);
    let rate = sel.rate();
    let map = match &cfg.init {
        InitSpec::ZeroFillFbp => {
            return Ok((zero_fill_fbp(&problem.s0, g, sel)?, embed_views(&problem.s0, sel, g.n_views)?));
        }
        InitSpec::Interpolation => ViewAdvanceMap::interpolation(g.n_views, rate)?,
        InitSpec::Learned { map } => read_advance_map(map)?,
    };
    if map.n_views() != g.n_views || map.rate() != rate {
        return Err(CliError::Validation(format!(
            "advance map is for {} views at rate {}, problem has {} at rate {rate}",
            map.n_views(),
            map.rate(),
            g.n_views
        )));
    }
    let (z, x) = init_pair(Some(&map), &problem.s0, rate, g)?;
    Ok((x, z))
}

/// Everything the trace checker needs besides the trace itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub geometry: Geometry,
    pub selector: ViewSelector,
    pub lambda: f64,
    /// Effective parameters, after automatic step selection.
    pub params: SolverParams,
    /// `m = m_R + m_Q`.
    pub positions: usize,
    /// Largest Hessian eigenvalue of the fidelity.
    pub fidelity_lipschitz: f64,
    pub lipschitz_r: LipschitzEstimate,
    pub lipschitz_q: LipschitzEstimate,
    /// `Φ_{ε₀}(x₀, z₀)`.
    pub initial_phi_eps: f64,
    pub initial_grad_norm: f64,
    pub certificate: Certificate,
    pub final_eps: f64,
    pub iterations: usize,
    pub seed: u64,
    pub runtime_seconds: f64,
}

impl RunMeta {
    /// `L̂_ε = L_f + L̂_R(ε) + L̂_Q(ε)`.
    pub fn lipschitz_at(&self, eps: f64) -> f64 {
        self.fidelity_lipschitz + self.lipschitz_r.at_eps(eps).value() + self.lipschitz_q.at_eps(eps).value()
    }

    pub fn linesearch_bound_at(&self, eps: f64) -> usize {
        linesearch_bound(&self.params, self.lipschitz_at(eps))
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub x0: Tensor,
    pub z0: Sinogram,
    pub output: RunOutput,
    pub meta: RunMeta,
}

/// Solver parameters and Lipschitz estimates for a problem.
pub fn effective_params(
    cfg: &RunConfig,
    obj: &Objective,
) -> CliResult<(SolverParams, LipschitzEstimate, LipschitzEstimate)> {
    let g = obj.model.geometry();
    let mut r = rng(cfg.seed);
    let eps0 = cfg.solver.eps0;
    let lr = lipschitz_estimate(&obj.reg_r, &g.image_shape(), eps0, cfg.lipschitz_samples, &mut r)?;
    let lq = lipschitz_estimate(&obj.reg_q, &g.sinogram_shape(), eps0, cfg.lipschitz_samples, &mut r)?;
    let params = if cfg.auto_steps {
        // power iteration approaches the top eigenvalue from below
        let lx = 1.01 * obj.projector_norm_sq(cfg.power_iters)?;
        cfg.solver.with_auto_steps(lx, 1.0 + cfg.lambda, lr.value(), lq.value())
    } else {
        cfg.solver
    };
    params.validate()?;
    Ok((params, lr, lq))
}

pub fn reconstruct(cfg: &RunConfig, problem: &Problem) -> CliResult<Reconstruction> {
    let obj = objective(cfg, problem)?;
    let (params, lr, lq) = effective_params(cfg, &obj)?;
    let fidelity_lipschitz = obj.fidelity_lipschitz(cfg.power_iters)?;
    let (x0, z0) = initial_point(cfg, problem)?;
    let start = Instant::now();
    let output = run(x0.clone(), z0.clone(), &params, &obj)?;
    let meta = RunMeta {
        geometry: problem.geometry,
        selector: problem.selector,
        lambda: cfg.lambda,
        params,
        positions: obj.total_positions(),
        fidelity_lipschitz,
        lipschitz_r: lr,
        lipschitz_q: lq,
        initial_phi_eps: output.initial_phi_eps,
        initial_grad_norm: output.initial_grad_norm,
        certificate: output.certificate,
        final_eps: output.final_eps,
        iterations: output.trace.len(),
        seed: cfg.seed,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Reconstruction { x0, z0, output, meta })
}

/// Quality of a reconstruction against the ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: Psnr,
    pub ssim: f64,
    /// Zero-fill FBP baseline.
    pub psnr_fbp: Psnr,
    pub ssim_fbp: f64,
    /// The solver's starting image.
    pub psnr_init: Psnr,
    pub sinogram_rmse: f64,
    pub sinogram_rmse_init: f64,
    /// Peak used for PSNR and SSIM: the maximum of the ground truth.
    pub peak: f64,
    pub iterations: usize,
    pub fallbacks: usize,
    pub final_eps: f64,
    pub certificate: Certificate,
}

pub fn peak_of(truth: &Tensor) -> CliResult<f64> {
    let peak = truth.max();
    if peak.is_nan() || peak <= 0.0 {
        return Err(CliError::Validation("ground truth has no positive values".into()));
    }
    Ok(peak)
}

pub fn metrics(problem: &Problem, rec: &Reconstruction) -> CliResult<Metrics> {
    let peak = peak_of(&problem.truth)?;
    let t = &problem.truth;
    let fbp = zero_fill_fbp(&problem.s0, &problem.geometry, &problem.selector)?;
    let out = &rec.output;
    Ok(Metrics {
        psnr: psnr(&out.x, t, peak)?,
        ssim: ssim(&out.x, t, peak)?,
        psnr_fbp: psnr(&fbp, t, peak)?,
        ssim_fbp: ssim(&fbp, t, peak)?,
        psnr_init: psnr(&rec.x0, t, peak)?,
        sinogram_rmse: rmse(&out.z, &problem.full)?,
        sinogram_rmse_init: rmse(&rec.z0, &problem.full)?,
        peak,
        iterations: out.trace.len(),
        fallbacks: out.trace.iter().filter(|r| r.branch == Branch::VFallback).count(),
        final_eps: out.final_eps,
        certificate: out.certificate,
    })
}
