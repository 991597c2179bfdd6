//! Discrete adjoint derivatives of `Q = β_M Q_M − Q_T` with respect to the
//! nodal perturbation `m`, and the design gradient of the quadratic risk
//! objective.
//!
//! Each physics block is a [`ParametricSystem`] `A(θ) x = b(θ)` with output
//! `q = ½ xᵀ W(θ) x + c(θ)ᵀ x`, all affine in `θ = φ_f`. The Lagrangian
//! recursions below are written once for that form; `S_A(y, x)_k = yᵀ A_k x`
//! denotes a coefficient sensitivity.

use log::warn;
use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::NodalField;
use crate::forward::{ForwardModel, ParametricSystem, PorosityField, QoiBreakdown, PHI_SPAN};
use crate::linalg::FactoredMatrix;
use crate::risk::RiskEvaluation;

/// State, adjoint and factorization of one block at fixed `θ`.
#[derive(Debug, Clone)]
pub struct Linearization<'a> {
    system: &'a ParametricSystem,
    theta: DVector<f64>,
    factor: FactoredMatrix,
    x: DVector<f64>,
    y: DVector<f64>,
}

/// Incremental state and adjoint along a parameter direction.
#[derive(Debug, Clone)]
pub struct Incremental {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl<'a> Linearization<'a> {
    pub fn new(system: &'a ParametricSystem, theta: DVector<f64>) -> Result<Self> {
        let factor = system.factor(&theta)?;
        let x = factor.solve(&system.load.eval(&theta))?;
        let y = factor.solve_transpose(&system.qoi_state_gradient(&theta, &x))?;
        Ok(Self {
            system,
            theta,
            factor,
            x,
            y,
        })
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn adjoint(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn qoi(&self) -> f64 {
        self.system.qoi(&self.theta, &self.x)
    }

    /// `dq/dθ = ½ S_W(x, x) + S_c(x) + S_b(y) − S_A(y, x)`.
    pub fn gradient(&self) -> DVector<f64> {
        let s = self.system;
        s.qoi_quadratic.sensitivity(&self.x, &self.x) * 0.5 + s.qoi_linear.sensitivity(&self.x) + s.load.sensitivity(&self.y)
            - s.operator.sensitivity(&self.y, &self.x)
    }

    pub fn incremental(&self, v: &DVector<f64>) -> Result<Incremental> {
        let s = self.system;
        let rhs = s.load.linear(v) - s.operator.apply_linear(v, &self.x);
        let x = self.factor.solve(&rhs)?;
        let rhs = s.qoi_quadratic.apply(&self.theta, &x) + s.qoi_quadratic.apply_linear(v, &self.x) + s.qoi_linear.linear(v)
            - s.operator.apply_linear_transpose(v, &self.y);
        let y = self.factor.solve_transpose(&rhs)?;
        Ok(Incremental { x, y })
    }

    /// `H v = S_W(x̂, x) + S_c(x̂) + S_b(ŷ) − S_A(ŷ, x) − S_A(y, x̂)`.
    pub fn hessian_action_from(&self, inc: &Incremental) -> DVector<f64> {
        let s = self.system;
        s.qoi_quadratic.sensitivity(&inc.x, &self.x) + s.qoi_linear.sensitivity(&inc.x) + s.load.sensitivity(&inc.y)
            - s.operator.sensitivity(&inc.y, &self.x)
            - s.operator.sensitivity(&self.y, &inc.x)
    }

    pub fn hessian_action(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.hessian_action_from(&self.incremental(v)?))
    }

    /// Gradient of `F(θ) = ψᵀ H(θ) ψ` with `ψ` held fixed.
    pub fn curvature_gradient(&self, psi: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.system;
        let inc = self.incremental(psi)?;
        let gamma = &inc.y * 2.0;
        let beta = self.factor.solve(&(s.operator.apply_linear(psi, &inc.x) * -2.0))?;
        let rhs = s.qoi_quadratic.apply_linear(psi, &inc.x) * 2.0 + s.qoi_quadratic.apply(&self.theta, &beta)
            - s.operator.apply_linear_transpose(psi, &gamma);
        let alpha = self.factor.solve_transpose(&rhs)?;
        Ok(s.qoi_quadratic.sensitivity(&inc.x, &inc.x) + s.load.sensitivity(&alpha)
            - s.operator.sensitivity(&alpha, &self.x)
            - s.operator.sensitivity(&self.y, &beta)
            + s.qoi_quadratic.sensitivity(&beta, &self.x)
            + s.qoi_linear.sensitivity(&beta)
            - s.operator.sensitivity(&gamma, &inc.x))
    }
}

/// Both physics blocks linearized at one `(d, m)`, combined into
/// `Q = β_M Q_M − Q_T` and chained through `φ_f = 0.1 + 0.8 (d + m)`.
#[derive(Debug, Clone)]
pub struct AdjointWorkspace<'a> {
    model: &'a ForwardModel,
    design: DVector<f64>,
    perturbation: DVector<f64>,
    phi: PorosityField,
    thermal: Linearization<'a>,
    mechanical: Linearization<'a>,
}

impl<'a> AdjointWorkspace<'a> {
    pub fn new(model: &'a ForwardModel, d: &NodalField, m: &NodalField) -> Result<Self> {
        let phi = model.porosity(d, m)?;
        let theta = phi.values().clone();
        let (thermal, mechanical) = rayon::join(
            || Linearization::new(model.thermal_system(), theta.clone()),
            || Linearization::new(model.mechanical_system(), theta.clone()),
        );
        Ok(Self {
            model,
            design: d.values().clone(),
            perturbation: m.values().clone(),
            phi,
            thermal: thermal?,
            mechanical: mechanical?,
        })
    }

    pub fn model(&self) -> &ForwardModel {
        self.model
    }

    pub fn design(&self) -> &DVector<f64> {
        &self.design
    }

    pub fn perturbation(&self) -> &DVector<f64> {
        &self.perturbation
    }

    pub fn porosity(&self) -> &PorosityField {
        &self.phi
    }

    pub fn thermal(&self) -> &Linearization<'a> {
        &self.thermal
    }

    pub fn mechanical(&self) -> &Linearization<'a> {
        &self.mechanical
    }

    fn beta_m(&self) -> f64 {
        self.model.params().beta_m
    }

    fn combine(&self, mech: DVector<f64>, therm: DVector<f64>, chain: f64) -> DVector<f64> {
        (mech * self.beta_m() - therm) * chain
    }

    pub fn qoi(&self) -> QoiBreakdown {
        let (q_t, q_m) = (self.thermal.qoi(), self.mechanical.qoi());
        QoiBreakdown {
            q_t,
            q_m,
            q: self.beta_m() * q_m - q_t,
        }
    }

    /// `∂Q/∂m` (equal to `∂Q/∂d`).
    pub fn gradient(&self) -> DVector<f64> {
        self.combine(self.mechanical.gradient(), self.thermal.gradient(), PHI_SPAN)
    }

    /// `H̄ v` in the `m` coordinates.
    pub fn hessian_action(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(v)?;
        let dir = v * PHI_SPAN;
        let (t, m) = rayon::join(|| self.thermal.hessian_action(&dir), || self.mechanical.hessian_action(&dir));
        Ok(self.combine(m?, t?, PHI_SPAN))
    }

    /// `H̄ v_j` for a block of directions, evaluated concurrently.
    pub fn hessian_actions(&self, vs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        vs.par_iter().map(|v| self.hessian_action(v)).collect()
    }

    /// `∂/∂d (ψᵀ H̄ ψ)` with `ψ` held fixed.
    pub fn curvature_gradient(&self, psi: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(psi)?;
        let dir = psi * PHI_SPAN;
        let (t, m) = rayon::join(
            || self.thermal.curvature_gradient(&dir),
            || self.mechanical.curvature_gradient(&dir),
        );
        Ok(self.combine(m?, t?, PHI_SPAN))
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.design.len() {
            return Err(Error::Argument(format!(
                "direction has {} entries, expected {}",
                v.len(),
                self.design.len()
            )));
        }
        Ok(())
    }
}

/// Exact discrete gradient of [`ForwardModel::eval_q`] in `m`.
pub fn grad_m_q(model: &ForwardModel, d: &NodalField, m: &NodalField) -> Result<NodalField> {
    Ok(NodalField::from_values_unchecked(AdjointWorkspace::new(model, d, m)?.gradient()))
}

/// Action of the `m`-Hessian of `Q` on `v`.
pub fn hess_m_action(model: &ForwardModel, d: &NodalField, m: &NodalField, v: &NodalField) -> Result<NodalField> {
    let ws = AdjointWorkspace::new(model, d, m)?;
    Ok(NodalField::from_values_unchecked(ws.hessian_action(v.values())?))
}

/// Relative gap under which neighbouring eigenvalues count as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Log a warning for each pair of (nearly) repeated eigenvalues.
pub fn warn_degenerate(values: &[f64]) -> bool {
    let Some(first) = values.first() else {
        return false;
    };
    let mut found = false;
    for (i, pair) in values.windows(2).enumerate() {
        if (pair[0] - pair[1]).abs() < DEGENERACY_TOL * first.abs() {
            warn!(
                "eigenvalues {} and {} are degenerate; the design gradient is a subgradient",
                i + 1,
                i + 2
            );
            found = true;
        }
    }
    found
}

/// Design gradient of `J_quad = E_quad + β_V V_quad + β_R R`, with the
/// eigenvectors held fixed:
///
/// `∇J = Q̄_d + ½ Σ λ_n′ + β_V (2 H̄ C Q̄_m + Σ λ_n λ_n′) + β_R ∇R`.
pub fn grad_d_jquad(d: &DVector<f64>, eval: &RiskEvaluation<'_>) -> Result<DVector<f64>> {
    if d != &eval.design || d != eval.workspace.design() {
        return Err(Error::Stale("risk evaluation was computed at a different design".into()));
    }
    let ws = &eval.workspace;
    let beta_v = eval.weights.beta_v;
    let eig = &eval.eig;
    let curvature: Vec<DVector<f64>> = eig
        .vectors
        .par_iter()
        .map(|psi| ws.curvature_gradient(psi))
        .collect::<Result<_>>()?;
    let mut grad = eval.grad_bar.clone();
    for (lambda, dl) in eig.values.iter().zip(&curvature) {
        grad.axpy(0.5 + beta_v * lambda, dl, 1.0);
    }
    if beta_v != 0.0 {
        grad.axpy(2.0 * beta_v, &ws.hessian_action(&eval.c_grad)?, 1.0);
    }
    if eval.weights.beta_r != 0.0 {
        grad.axpy(eval.weights.beta_r, &eval.reg_grad, 1.0);
    }
    Ok(grad)
}
