//! Matérn Gaussian random field for the uncertain porosity perturbation.
//!
//! The precision structure comes from the elliptic operator
//! `A m = −γ∇·(Θ∇m) + δm` with the Robin condition
//! `(Θ∇m)·n + (√(δγ)/1.42) m = 0` on the whole boundary. The discrete
//! covariance of the nodal coefficient vector is `C = A⁻¹ M A⁻¹`, and samples
//! are drawn as `m̄ + A⁻¹ G ξ` with `G Gᵀ = M` (Cholesky of the consistent
//! mass), so sampling and [`MaternPrior::apply_covariance`] describe the same
//! distribution exactly.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fem::{self, NodalField, Tensor2};
use crate::linalg::{BandedCholesky, CsrMatrix, FactoredMatrix};
use crate::mesh::Mesh;

/// Boundary-artifact constant in the Robin coefficient `√(δγ)/1.42`.
pub const ROBIN_DIVISOR: f64 = 1.42;

#[derive(Debug, Clone)]
pub struct MaternPrior {
    gamma: f64,
    delta: f64,
    theta: Tensor2,
    mean: NodalField,
    operator: FactoredMatrix,
    mass: FactoredMatrix,
    mass_factor: BandedCholesky,
}

impl MaternPrior {
    pub fn build(mesh: &Mesh, gamma: f64, delta: f64, theta: Tensor2, mean: NodalField) -> Result<Self> {
        if !(gamma > 0.0) || !(delta > 0.0) {
            return Err(Error::Argument(format!(
                "prior requires γ > 0 and δ > 0, got γ = {gamma}, δ = {delta}"
            )));
        }
        fem::check_spd_tensor(&theta)?;
        if mean.len() != mesh.n_vertices() {
            return Err(Error::Argument("prior mean does not match the mesh".into()));
        }
        let stiffness = fem::assemble_weighted_stiffness(mesh, &NodalField::constant(mesh, 1.0), Some(&theta))?;
        let mass = fem::assemble_mass(mesh);
        let robin_coeff = (delta * gamma).sqrt() / ROBIN_DIVISOR;
        let (robin, _) = fem::assemble_robin(mesh, None, &NodalField::constant(mesh, 1.0), robin_coeff, 0.0)?;
        let a = stiffness.add(gamma, &mass, delta).add(1.0, &robin, 1.0);
        let mass_factor = BandedCholesky::factor(&mass)?;
        Ok(Self {
            gamma,
            delta,
            theta,
            mean,
            operator: FactoredMatrix::spd(a)?,
            mass: FactoredMatrix::spd(mass)?,
            mass_factor,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn theta(&self) -> &Tensor2 {
        &self.theta
    }

    pub fn mean(&self) -> &NodalField {
        &self.mean
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The assembled SPDE operator `A`.
    pub fn operator(&self) -> &CsrMatrix {
        &self.operator.matrix
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass.matrix
    }

    /// `C v = A⁻¹ M A⁻¹ v`.
    pub fn apply_covariance(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.operator.solve(v)?;
        self.operator.solve(&self.mass.matrix.mul_vec(&w))
    }

    /// `C⁻¹ v = A M⁻¹ A v`.
    pub fn apply_covariance_inverse(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.mass.solve(&self.operator.matrix.mul_vec(v))?;
        Ok(self.operator.matrix.mul_vec(&w))
    }

    /// Zero-mean draw `A⁻¹ G ξ` from a caller-supplied generator.
    pub fn sample_perturbation<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let xi = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        self.operator.solve(&self.mass_factor.factor_mul(&xi))
    }

    /// Deterministic sample `m̄ + A⁻¹ G ξ(seed)`.
    pub fn sample(&self, seed: u64) -> Result<NodalField> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.mean.values() + self.sample_perturbation(&mut rng)?;
        Ok(NodalField::from_values_unchecked(m))
    }

    /// Pointwise variance `diag(C)`.
    pub fn nodal_variance(&self) -> Result<DVector<f64>> {
        let n = self.dim();
        let mut var = DVector::zeros(n);
        let mut e = DVector::zeros(n);
        for i in 0..n {
            e[i] = 1.0;
            // column i of A⁻¹G
            let col = self.operator.solve(&self.mass_factor.factor_mul(&e))?;
            e[i] = 0.0;
            var += col.component_mul(&col);
        }
        Ok(var)
    }
}
