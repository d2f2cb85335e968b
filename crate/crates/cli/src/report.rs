//! Independent re-verification of a run from its trace and metadata.
//!
//! Nothing here trusts the solver's own acceptance decisions: every invariant
//! is recomputed from the recorded numbers.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use lama_core::io::{read_array, read_trace, write_json, write_pgm};
use lama_core::solver::{Branch, IterationRecord};

use crate::error::{CliError, CliResult};
use crate::pipeline::RunMeta;

/// Relative slack for monotonicity and sandwich comparisons.
pub const SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: usize,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Largest backtracking count and its bound over the run.
    pub max_linesearch: usize,
    pub linesearch_bound: usize,
    pub reductions: usize,
}

impl Report {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rows: {}  reductions: {}", self.rows, self.reductions);
        for c in &self.checks {
            let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let _ = writeln!(s, "overall: {}", if self.passed { "PASS" } else { "FAIL" });
        s
    }
}

fn tol(reference: f64) -> f64 {
    SLACK * reference.abs().max(1.0)
}

/// First violation found by `f` over the rows, formatted for the report.
fn first_violation(
    trace: &[IterationRecord],
    mut f: impl FnMut(usize, &IterationRecord) -> Option<String>,
) -> Option<String> {
    trace.iter().enumerate().find_map(|(i, r)| f(i, r))
}

fn push(checks: &mut Vec<Check>, name: &str, violation: Option<String>, ok_detail: String) {
    checks.push(Check {
        name: name.into(),
        passed: violation.is_none(),
        detail: violation.unwrap_or(ok_detail),
    });
}

pub fn check_trace(trace: &[IterationRecord], meta: &RunMeta) -> Report {
    let p = &meta.params;
    let m = meta.positions as f64;
    let mut checks = Vec::new();

    push(
        &mut checks,
        "k-sequence",
        first_violation(trace, |i, r| (r.k != i).then(|| format!("row {i} has k = {}", r.k))),
        format!("k = 0..{}", trace.len()),
    );
    if trace.len() != meta.iterations {
        checks.push(Check {
            name: "row-count".into(),
            passed: false,
            detail: format!("trace has {} rows, metadata says {}", trace.len(), meta.iterations),
        });
    }

    push(
        &mut checks,
        "finite-values",
        first_violation(trace, |_, r| {
            let ok = [r.eps, r.phi_eps, r.phi, r.grad_norm].iter().all(|v| v.is_finite());
            (!ok || r.eps <= 0.0).then(|| format!("k = {}: non-finite or non-positive entry", r.k))
        }),
        "all entries finite, eps > 0".into(),
    );

    let mut prev = meta.initial_phi_eps + m * p.eps0 / 2.0;
    let mut total_drop = 0.0;
    let surrogate = first_violation(trace, |_, r| {
        let s = r.phi_eps + m * r.eps / 2.0;
        let bad = s > prev + tol(prev);
        let msg = format!("k = {}: surrogate rose from {prev:.12e} to {s:.12e}", r.k);
        total_drop += prev - s;
        prev = s;
        bad.then_some(msg)
    });
    push(
        &mut checks,
        "surrogate-descent",
        surrogate,
        format!("Φ_ε + mε/2 non-increasing, total decrease {total_drop:.6e}"),
    );

    push(
        &mut checks,
        "sandwich",
        first_violation(trace, |_, r| {
            let gap = r.phi - r.phi_eps;
            let hi = m * r.eps / 2.0;
            let t = tol(r.phi);
            (gap < -t || gap > hi + t).then(|| format!("k = {}: Φ − Φ_ε = {gap:e} outside [0, {hi:e}]", r.k))
        }),
        "0 ≤ Φ − Φ_ε ≤ mε/2 on every row".into(),
    );

    let mut eps_prev = p.eps0;
    let mut level = 0i32;
    let reduction = first_violation(trace, |_, r| {
        let threshold = p.sigma * p.gamma * eps_prev;
        let expected = r.grad_norm < threshold;
        let msg = (r.reduced != expected).then(|| {
            format!(
                "k = {}: grad_norm {:e} vs threshold {threshold:e} but reduced = {}",
                r.k, r.grad_norm, r.reduced
            )
        });
        eps_prev = r.eps;
        msg
    });
    push(
        &mut checks,
        "reduction-criterion",
        reduction,
        "reduced exactly when ‖∇Φ_ε‖ < σγε".into(),
    );
    let eps_law = first_violation(trace, |_, r| {
        if r.reduced {
            level += 1;
        }
        let expected = p.eps0 * p.gamma.powi(level);
        (r.eps != expected).then(|| format!("k = {}: eps = {:e}, expected ε₀γ^{level} = {expected:e}", r.k, r.eps))
    });
    let reductions = trace.iter().filter(|r| r.reduced).count();
    push(
        &mut checks,
        "eps-law",
        eps_law,
        format!("ε = ε₀γ^l exactly, {reductions} reductions"),
    );

    let mut eps_prev = p.eps0;
    let mut max_ls = 0;
    let mut max_bound = 0;
    let ls = first_violation(trace, |_, r| {
        let bound = meta.linesearch_bound_at(eps_prev);
        eps_prev = r.eps;
        max_ls = max_ls.max(r.linesearch_count);
        max_bound = max_bound.max(bound);
        if r.branch == Branch::UAccepted && r.linesearch_count != 0 {
            return Some(format!("k = {}: accepted u-step reports {} backtracks", r.k, r.linesearch_count));
        }
        (r.linesearch_count > bound)
            .then(|| format!("k = {}: {} backtracks exceed bound {bound}", r.k, r.linesearch_count))
    });
    push(
        &mut checks,
        "linesearch-bound",
        ls,
        format!("max ℓ = {max_ls}, bound ≤ {max_bound}"),
    );

    let c = &meta.certificate;
    let cert = if c.reached_tolerance {
        match trace.iter().rev().find(|r| r.reduced) {
            Some(last) if Some(last) != trace.last() => Some("run continued after reaching tolerance".to_string()),
            None => Some("tolerance claimed without any reduction".to_string()),
            Some(last) => {
                let bad = !(c.eps <= p.eps_tol && last.grad_norm == c.grad_norm && c.grad_norm < c.threshold);
                bad.then(|| format!("certificate {c:?} inconsistent with the final row"))
            }
        }
    } else if trace.len() < p.max_outer_iters {
        Some(format!("run stopped after {} of {} iterations without reaching tolerance", trace.len(), p.max_outer_iters))
    } else {
        None
    };
    push(
        &mut checks,
        "certificate",
        cert,
        format!(
            "(ε, ‖∇Φ_ε‖) = ({:e}, {:e}), tolerance reached: {}",
            c.eps, c.grad_norm, c.reached_tolerance
        ),
    );

    Report {
        rows: trace.len(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        max_linesearch: max_ls,
        linesearch_bound: max_bound,
        reductions,
    }
}

pub fn read_meta(dir: &Path) -> CliResult<RunMeta> {
    let path = dir.join("run.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Checks a reconstruct output directory and writes `report.json`,
/// `report.txt` and PGM renderings into `out`.
pub fn report_dir(run_dir: &Path, out: &Path) -> CliResult<Report> {
    let meta = read_meta(run_dir)?;
    let trace = read_trace(&run_dir.join("trace.csv"))?;
    let report = check_trace(&trace, &meta);
    std::fs::create_dir_all(out).map_err(|e| CliError::Validation(format!("{}: {e}", out.display())))?;
    write_json(&out.join("report.json"), &report)?;
    std::fs::write(out.join("report.txt"), report.to_text())
        .map_err(|e| CliError::Validation(format!("{}: {e}", out.display())))?;
    for name in ["x", "x0", "z", "phantom"] {
        let bin = run_dir.join(format!("{name}.bin"));
        if bin.is_file() {
            let (img, _) = read_array(&bin)?;
            write_pgm(&out.join(format!("{name}.pgm")), &img)?;
        }
    }
    let (x, truth) = (run_dir.join("x.bin"), run_dir.join("phantom.bin"));
    if x.is_file() && truth.is_file() {
        let (x, _) = read_array(&x)?;
        let (t, _) = read_array(&truth)?;
        if x.same_shape(&t) {
            write_pgm(&out.join("error.pgm"), &x.sub(&t).map(f64::abs))?;
        }
    }
    Ok(report)
}
