//! Tikhonov plus approximated-ℓ₀ design regularization and its continuation
//! schedule.
//!
//! The ℓ₀ surrogate is piecewise: `d/ε₀` below `ε₀/2`, one above `2ε₀`, and
//! the unique C¹ cubic `p₃` in between.

use log::{info, warn};
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fem::{self, NodalField};
use crate::linalg::CsrMatrix;
use crate::mesh::Mesh;
use crate::optimizer::{OptimizeResult, OptimizeStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegConfig {
    pub beta_tik: f64,
    pub beta_l0: f64,
    pub eps0: f64,
    pub k_cont: usize,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            beta_tik: 1.0,
            beta_l0: 0.0,
            eps0: 0.5,
            k_cont: 3,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_tik >= 0.0) || !(self.beta_l0 >= 0.0) {
            return Err(Error::Argument("regularization weights must be nonnegative".into()));
        }
        check_eps0(self.eps0)
    }
}

fn check_eps0(eps0: f64) -> Result<()> {
    if !(eps0 > 0.0 && eps0 <= 0.5) {
        return Err(Error::Argument(format!("eps0 must lie in (0, 0.5], got {eps0}")));
    }
    Ok(())
}

/// Monomial coefficients `(a₀, a₁, a₂, a₃)` of `p₃`.
pub fn p3_coefficients(eps0: f64) -> Result<[f64; 4]> {
    check_eps0(eps0)?;
    let a = 0.5 * eps0;
    // in t = x − ε₀/2: ½ + t/ε₀ − 2t²/(3ε₀²) + 4t³/(27ε₀³)
    let t = [0.5, 1.0 / eps0, -2.0 / (3.0 * eps0 * eps0), 4.0 / (27.0 * eps0.powi(3))];
    let c = [
        t[0] - t[1] * a + t[2] * a * a - t[3] * a.powi(3),
        t[1] - 2.0 * t[2] * a + 3.0 * t[3] * a * a,
        t[2] - 3.0 * t[3] * a,
        t[3],
    ];
    if !c.iter().all(|v| v.is_finite()) {
        return Err(Error::Internal(format!("cubic blend is undefined for eps0 = {eps0}")));
    }
    let slope = |x: f64| c[1] + 2.0 * c[2] * x + 3.0 * c[3] * x * x;
    if (0..=64).any(|i| slope(a + 1.5 * eps0 * i as f64 / 64.0) < -1e-12 / eps0) {
        warn!("cubic blend for eps0 = {eps0} is not monotone");
    }
    Ok(c)
}

fn horner(c: &[f64; 4], x: f64) -> (f64, f64) {
    let v = ((c[3] * x + c[2]) * x + c[1]) * x + c[0];
    let dv = (3.0 * c[3] * x + 2.0 * c[2]) * x + c[1];
    (v, dv)
}

fn check_design_value(d: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::Argument(format!("design value {d} is outside [0, 1]")));
    }
    Ok(())
}

/// Value and derivative of the surrogate at one point, given `p₃`.
fn f_and_derivative(d: f64, eps0: f64, c: &[f64; 4]) -> (f64, f64) {
    if d <= 0.5 * eps0 {
        (d / eps0, 1.0 / eps0)
    } else if d < 2.0 * eps0 {
        horner(c, d)
    } else {
        (1.0, 0.0)
    }
}

/// `f_{ε₀}(d)`.
pub fn f_eps0(d: f64, eps0: f64) -> Result<f64> {
    check_design_value(d)?;
    Ok(f_and_derivative(d, eps0, &p3_coefficients(eps0)?).0)
}

/// `f′_{ε₀}(d)`.
pub fn f_eps0_derivative(d: f64, eps0: f64) -> Result<f64> {
    check_design_value(d)?;
    Ok(f_and_derivative(d, eps0, &p3_coefficients(eps0)?).1)
}

/// Stiffness and lumped mass weights for `R(d)` on a fixed mesh.
#[derive(Debug, Clone)]
pub struct Regularizer {
    stiffness: CsrMatrix,
    mass_weights: DVector<f64>,
}

impl Regularizer {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let stiffness = fem::assemble_weighted_stiffness(mesh, &NodalField::constant(mesh, 1.0), None)?;
        Ok(Self {
            stiffness,
            mass_weights: fem::assemble_mass(mesh).row_sums(),
        })
    }

    /// `R(d) = β_tik dᵀKd + β_l0 1ᵀM f(d)` and its gradient.
    pub fn eval(&self, d: &DVector<f64>, cfg: &RegConfig) -> Result<(f64, DVector<f64>)> {
        cfg.validate()?;
        if d.len() != self.mass_weights.len() {
            return Err(Error::Argument("design does not match the regularizer mesh".into()));
        }
        let kd = self.stiffness.mul_vec(d);
        let mut value = cfg.beta_tik * d.dot(&kd);
        let mut grad = kd * (2.0 * cfg.beta_tik);
        if cfg.beta_l0 != 0.0 {
            let c = p3_coefficients(cfg.eps0)?;
            for (i, &di) in d.iter().enumerate() {
                check_design_value(di)?;
                let (f, df) = f_and_derivative(di, cfg.eps0, &c);
                value += cfg.beta_l0 * self.mass_weights[i] * f;
                grad[i] += cfg.beta_l0 * self.mass_weights[i] * df;
            }
        }
        Ok((value, grad))
    }
}

/// `R(d)` and its gradient as nodal fields.
pub fn eval_r(mesh: &Mesh, d: &NodalField, cfg: &RegConfig) -> Result<(f64, NodalField)> {
    let (v, g) = Regularizer::new(mesh)?.eval(d.values(), cfg)?;
    Ok((v, NodalField::from_values_unchecked(g)))
}

/// Fraction of nodes with an intermediate design value in `(0.05, 0.95)`.
pub fn sparsity_metric(d: &DVector<f64>) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    d.iter().filter(|&&v| v > 0.05 && v < 0.95).count() as f64 / d.len() as f64
}

/// Stage weights: Tikhonov first, then ℓ₀ with `ε₀ = 2⁻ⁱ`.
pub fn continuation_schedule(k_cont: usize) -> Vec<RegConfig> {
    let mut stages = vec![RegConfig {
        beta_tik: 1.0,
        beta_l0: 0.0,
        eps0: 0.5,
        k_cont,
    }];
    stages.extend((1..=k_cont).map(|i| RegConfig {
        beta_tik: 0.0,
        beta_l0: 1.0,
        eps0: 0.5f64.powi(i as i32),
        k_cont,
    }));
    stages
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub eps0: f64,
    pub beta_tik: f64,
    pub beta_l0: f64,
    pub j: f64,
    pub sparsity: f64,
    pub iterations: usize,
    pub status: OptimizeStatus,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub design: DVector<f64>,
    pub stages: Vec<StageRecord>,
}

/// A failed stage, with the stages completed before it.
#[derive(Debug, Clone, thiserror::Error)]
#[error("continuation stage {stage} failed: {source}")]
pub struct ContinuationError {
    pub stage: usize,
    pub history: Vec<StageRecord>,
    pub last_design: DVector<f64>,
    #[source]
    pub source: Error,
}

/// Run the schedule, warm-starting each stage from the previous optimum.
pub fn continuation_run<F>(
    d_init: &DVector<f64>,
    k_cont: usize,
    mut optimize: F,
) -> std::result::Result<ContinuationResult, ContinuationError>
where
    F: FnMut(&DVector<f64>, &RegConfig) -> Result<OptimizeResult>,
{
    let mut design = d_init.clone();
    let mut stages: Vec<StageRecord> = Vec::new();
    let fail = |stage, history: &Vec<StageRecord>, design: &DVector<f64>, source| ContinuationError {
        stage,
        history: history.clone(),
        last_design: design.clone(),
        source,
    };
    if k_cont == 0 {
        return Err(fail(0, &stages, &design, Error::Argument("continuation needs K_cont ≥ 1".into())));
    }
    for (stage, cfg) in continuation_schedule(k_cont).iter().enumerate() {
        let result = optimize(&design, cfg).map_err(|e| fail(stage, &stages, &design, e))?;
        let record = StageRecord {
            stage,
            eps0: cfg.eps0,
            beta_tik: cfg.beta_tik,
            beta_l0: cfg.beta_l0,
            j: result.j_history.last().copied().unwrap_or(f64::NAN),
            sparsity: sparsity_metric(&result.d_opt),
            iterations: result.iterations,
            status: result.status,
        };
        info!(
            "continuation stage {stage}: eps0 = {}, J = {:.6e}, sparsity = {:.4}, {} iterations",
            record.eps0, record.j, record.sparsity, record.iterations
        );
        let converged = result.status == OptimizeStatus::Converged;
        design = result.d_opt;
        stages.push(record);
        if !converged {
            let status = result.status;
            return Err(fail(
                stage,
                &stages,
                &design,
                Error::Convergence(format!("stage {stage} stopped with status {status:?}")),
            ));
        }
    }
    Ok(ContinuationResult { design, stages })
}
