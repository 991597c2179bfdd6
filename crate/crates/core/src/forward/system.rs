use nalgebra::DVector;

use crate::affine::{AffineMatrix, AffineVector};
use crate::error::Result;
use crate::linalg::FactoredMatrix;

/// A linear state equation `A(θ) x = b(θ)` with the quadratic output
/// `q(x, θ) = ½ xᵀ W(θ) x + c(θ)ᵀ x`, everything affine in the nodal
/// parameter `θ` (here the fluid volume fraction).
#[derive(Debug, Clone)]
pub struct ParametricSystem {
    pub operator: AffineMatrix,
    pub load: AffineVector,
    pub qoi_quadratic: AffineMatrix,
    pub qoi_linear: AffineVector,
    /// `A(θ)` symmetric positive-definite for admissible `θ`.
    pub spd: bool,
}

impl ParametricSystem {
    pub fn n_dofs(&self) -> usize {
        self.operator.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.operator.nparams()
    }

    pub fn factor(&self, theta: &DVector<f64>) -> Result<FactoredMatrix> {
        let a = self.operator.assemble(theta);
        if self.spd {
            FactoredMatrix::spd(a)
        } else {
            FactoredMatrix::general(a)
        }
    }

    pub fn solve(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor(theta)?.solve(&self.load.eval(theta))
    }

    pub fn qoi(&self, theta: &DVector<f64>, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&self.qoi_quadratic.apply(theta, x)) + self.qoi_linear.eval(theta).dot(x)
    }

    /// `∂q/∂x = W(θ) x + c(θ)`.
    pub fn qoi_state_gradient(&self, theta: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        self.qoi_quadratic.apply(theta, x) + self.qoi_linear.eval(theta)
    }
}
