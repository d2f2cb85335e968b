pub mod conv;
pub mod error;
pub mod init;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod regularizer;
pub mod solver;
pub mod tensor;
pub mod tomo;

pub use error::{Error, Result};
pub use tensor::{Sinogram, Tensor};
