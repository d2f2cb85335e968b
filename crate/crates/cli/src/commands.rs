//! The batch commands. Each writes its outputs under a directory and returns
//! the in-memory results.

use std::path::Path;

use serde::{Deserialize, Serialize};

use lama_core::conv::{ConvLayer, LayerStack, DEFAULT_RELU_DELTA};
use lama_core::init::{advance, advance_curvature, train_advance, training_pairs, ViewAdvanceMap};
use lama_core::io::{
    write_advance_map, write_array, write_json, write_loss_curve, write_pgm, write_trace, ArrayKind,
};
use lama_core::tomo::{project, random_ellipse_phantom};
use lama_core::{Sinogram, Tensor};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    metrics, phantom, problem, reconstruct, rng, simulate, Metrics, Problem, Reconstruction, FULL_FILE,
    PHANTOM_FILE, SPARSE_FILE,
};
use crate::report::{report_dir, Report};
use crate::stability::{run_case, summarize, Perturbation, StabilitySummary};

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))
}

fn write_config(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    Ok(write_json(&dir.join("config.json"), cfg)?)
}

fn write_problem(p: &Problem, dir: &Path) -> CliResult<()> {
    write_array(&dir.join(PHANTOM_FILE), &p.truth, ArrayKind::Image, Some(&p.geometry))?;
    write_array(&dir.join(FULL_FILE), &p.full, ArrayKind::Sinogram, Some(&p.geometry))?;
    write_array(&dir.join(SPARSE_FILE), &p.s0, ArrayKind::Sinogram, Some(&p.sparse_geometry()))?;
    Ok(())
}

/// Phantom, full sinogram and acquired sinogram.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> CliResult<Problem> {
    cfg.validate()?;
    create_dir(out)?;
    let p = simulate(cfg, phantom(cfg)?)?;
    write_problem(&p, out)?;
    write_config(cfg, out)?;
    Ok(p)
}

fn write_reconstruction(p: &Problem, rec: &Reconstruction, m: &Metrics, dir: &Path) -> CliResult<()> {
    let g = Some(&p.geometry);
    write_array(&dir.join("x.bin"), &rec.output.x, ArrayKind::Image, g)?;
    write_array(&dir.join("z.bin"), &rec.output.z, ArrayKind::Sinogram, g)?;
    write_array(&dir.join("x0.bin"), &rec.x0, ArrayKind::Image, g)?;
    write_array(&dir.join("z0.bin"), &rec.z0, ArrayKind::Sinogram, g)?;
    write_array(&dir.join(PHANTOM_FILE), &p.truth, ArrayKind::Image, g)?;
    write_trace(&dir.join("trace.csv"), &rec.output.trace)?;
    write_json(&dir.join("run.json"), &rec.meta)?;
    write_json(&dir.join("metrics.json"), m)?;
    Ok(())
}

/// Runs the solver on the configured problem.
pub fn cmd_reconstruct(cfg: &RunConfig, out: &Path) -> CliResult<(Reconstruction, Metrics)> {
    cfg.validate()?;
    create_dir(out)?;
    let p = problem(cfg)?;
    let rec = reconstruct(cfg, &p)?;
    let m = metrics(&p, &rec)?;
    write_reconstruction(&p, &rec, &m, out)?;
    write_config(cfg, out)?;
    Ok((rec, m))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub pairs: usize,
    pub step_size: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Loss of the non-learned interpolation map on the same pairs.
    pub interpolation_loss: f64,
}

fn mean_advance_error(map: &ViewAdvanceMap, pairs: &[(Sinogram, Sinogram)]) -> CliResult<f64> {
    let mut total = 0.0;
    for (src, dst) in pairs {
        total += advance(map, src)?.distance_sq(dst);
    }
    Ok(total / pairs.len() as f64)
}

/// Trains a single-layer convolutional view-advance map with a skip path on
/// full sinograms of random-ellipse phantoms.
pub fn cmd_init_train(cfg: &RunConfig, out: &Path) -> CliResult<(ViewAdvanceMap, Vec<f64>, TrainSummary)> {
    cfg.validate()?;
    let rate = cfg.selector.rate();
    if rate < 2 {
        return Err(CliError::Validation("init-train needs rate >= 2".into()));
    }
    create_dir(out)?;
    let t = &cfg.train;
    let mut r = rng(cfg.seed);
    let n = cfg.geometry.image_size;
    let dataset = (0..t.dataset_size)
        .map(|_| Ok(project(&random_ellipse_phantom(n, t.ellipses, &mut r)?, &cfg.geometry)?))
        .collect::<CliResult<Vec<Tensor>>>()?;
    let pairs = training_pairs(&dataset, rate, t.include_wrap)?;
    let mut kernel = Tensor::zeros(&[1, 1, t.kernel, t.kernel]);
    if t.warm_start {
        let (c, w) = (t.kernel / 2, 1.0 / rate as f64);
        kernel.data_mut()[c * t.kernel + c] = -w;
        kernel.data_mut()[(c + 1) * t.kernel + c] = w;
    }
    let stack = LayerStack::new(vec![ConvLayer::new(kernel, DEFAULT_RELU_DELTA)?], true)?;
    let map = ViewAdvanceMap::convolutional(cfg.geometry.n_views, rate, stack, true)?;
    let mut params = cfg.train_params();
    params.step_size = match t.step_size {
        Some(step) => step,
        None => {
            let l = advance_curvature(&map, &pairs, cfg.power_iters)?;
            if !(l > 0.0 && l.is_finite()) {
                return Err(CliError::Validation("training data have no signal".into()));
            }
            1.0 / l
        }
    };
    let (trained, curve) = train_advance(&map, &dataset, &params)?;
    let interp = ViewAdvanceMap::interpolation(cfg.geometry.n_views, rate)?;
    let summary = TrainSummary {
        pairs: pairs.len(),
        step_size: params.step_size,
        initial_loss: curve[0],
        final_loss: *curve.last().expect("non-empty curve"),
        interpolation_loss: mean_advance_error(&interp, &pairs)?,
    };
    write_advance_map(&out.join("map.json"), &trained)?;
    write_loss_curve(&out.join("loss.csv"), &curve)?;
    write_json(&out.join("train.json"), &summary)?;
    write_config(cfg, out)?;
    Ok((trained, curve, summary))
}

/// Text-stamp and Gaussian perturbation runs; one subdirectory per case.
pub fn cmd_stability(cfg: &RunConfig, out: &Path) -> CliResult<StabilitySummary> {
    cfg.validate()?;
    create_dir(out)?;
    let clean = phantom(cfg)?;
    let mut perts = Vec::new();
    if cfg.stability.text_stamp {
        perts.push(Perturbation::TextStamp);
    }
    perts.extend(cfg.stability.sigmas.iter().map(|&sigma| Perturbation::Gaussian { sigma }));
    let mut cases = Vec::new();
    let g = Some(&cfg.geometry);
    for pert in perts {
        let run = run_case(cfg, &clean, pert)?;
        let dir = out.join(pert.label());
        create_dir(&dir)?;
        write_array(&dir.join("perturbed.bin"), &run.perturbed, ArrayKind::Image, g)?;
        write_array(&dir.join("x.bin"), &run.recon.output.x, ArrayKind::Image, g)?;
        write_trace(&dir.join("trace.csv"), &run.recon.output.trace)?;
        write_json(&dir.join("run.json"), &run.recon.meta)?;
        write_pgm(&dir.join("x.pgm"), &run.recon.output.x)?;
        write_pgm(&dir.join("diff.pgm"), &run.recon.output.x.sub(&clean).map(f64::abs))?;
        write_json(&dir.join("case.json"), &run.case)?;
        cases.push(run.case);
    }
    let summary = summarize(cases);
    write_json(&out.join("stability.json"), &summary)?;
    write_config(cfg, out)?;
    Ok(summary)
}

/// Re-verifies a reconstruct output directory. Fails with an invariant
/// error when any check fails, after writing the report.
pub fn cmd_report(run_dir: &Path, out: &Path) -> CliResult<Report> {
    let report = report_dir(run_dir, out)?;
    if !report.passed {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(CliError::Invariant(format!("{} failed: {}", run_dir.display(), failed.join(", "))));
    }
    Ok(report)
}
