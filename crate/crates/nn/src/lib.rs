//! Reverse-mode tensor engine: a define-by-run [`Graph`], dense and 1-D
//! convolution layers, [`Adam`], parameter checkpoints and a finite-difference
//! gradient checker.

mod adam;
mod conv;
mod error;
mod gradcheck;
mod graph;
mod layers;
mod params;
mod real;
mod tensor;

pub use adam::Adam;
pub use error::{NnError, Result};
pub use gradcheck::{finite_diff_check, GradCheckReport, GRAD_FLOOR};
pub use graph::{Gradients, Graph, ParamVars, Var};
pub use layers::{Conv1d, Dense, ResidualConv};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
