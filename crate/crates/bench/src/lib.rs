//! Fixtures shared by the benchmarks.

use lama_core::objective::{FidelityModel, Objective};
use lama_core::regularizer::Regularizer;
use lama_core::solver::{SolverParams, SolverState};
use lama_core::tomo::{embed_views, project, select_views, shepp_logan, zero_fill_fbp, Geometry, ViewSelector};

/// A smoothed-TV problem on an `n × n` Shepp-Logan phantom with `n` full
/// views at rate 2, with a fresh solver state at the zero-fill FBP start.
pub fn tv_problem(n: usize) -> (Objective, SolverParams, SolverState) {
    let g = Geometry::new(n, n, Geometry::covering_detectors(n)).expect("geometry");
    let sel = ViewSelector::new(2, 0).expect("selector");
    let truth = shepp_logan(n).expect("phantom");
    let s0 = select_views(&project(&truth, &g).expect("project"), &sel).expect("select");
    let model = FidelityModel::new(g, sel, s0.clone(), 1.0).expect("model");
    let obj = Objective::new(model, Regularizer::total_variation(3.0), Regularizer::sinogram_default(0.01))
        .expect("objective");
    let lx = 1.01 * obj.projector_norm_sq(30).expect("power iteration");
    let params = SolverParams {
        eps0: 0.01,
        ..SolverParams::default()
    }
    .with_auto_steps(lx, 2.0, 8.0 * 9.0 / 0.01, 1.0);
    let x0 = zero_fill_fbp(&s0, &g, &sel).expect("fbp");
    let z0 = embed_views(&s0, &sel, g.n_views).expect("embed");
    let state = SolverState::new(&obj, x0, z0, &params).expect("state");
    (obj, params, state)
}
