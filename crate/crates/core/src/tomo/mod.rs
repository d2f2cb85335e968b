//! Parallel-beam tomography: geometry, the Joseph projector and its exact
//! adjoint, filtered backprojection, view selection and phantoms.

mod fbp;
mod geometry;
mod phantom;
mod projector;
mod views;

pub use fbp::{fbp, fbp_with, zero_fill_fbp, RampWindow};
pub use geometry::Geometry;
pub use phantom::{random_ellipse_phantom, shepp_logan, Ellipse, SHEPP_LOGAN};
pub use projector::{backproject, project};
pub use views::{embed_views, select_views, ViewSelector};

#[cfg(test)]
mod tests;
