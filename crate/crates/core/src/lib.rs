//! Risk-averse optimal design of porous thermal-insulation components.

pub mod affine;
pub mod error;
pub mod fem;
pub mod forward;
pub mod linalg;
pub mod mesh;
pub mod optimizer;
pub mod prior;
pub mod regularization;
pub mod risk;
pub mod sensitivities;
pub mod vtk;

pub use error::{Error, Result};
