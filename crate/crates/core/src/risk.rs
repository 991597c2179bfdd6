//! Second-order Taylor risk measures, the randomized generalized eigensolver
//! behind them, and the Monte Carlo reference estimator.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::NodalField;
use crate::forward::{ForwardModel, QoiBreakdown};
use crate::prior::MaternPrior;
use crate::regularization::{RegConfig, Regularizer};
use crate::sensitivities::{self, AdjointWorkspace};

/// Largest tolerated fraction of Monte Carlo samples with inadmissible porosity.
pub const MC_FAILURE_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskWeights {
    pub beta_v: f64,
    pub beta_r: f64,
}

impl RiskWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_v >= 0.0) || !(self.beta_r >= 0.0) {
            return Err(Error::Argument("beta_V and beta_R must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSettings {
    pub rank: usize,
    pub oversampling: usize,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for EigenSettings {
    fn default() -> Self {
        Self {
            rank: 25,
            oversampling: 10,
            power_iters: 0,
            seed: 0,
        }
    }
}

/// Generalized eigenpairs of `H ψ = λ C⁻¹ ψ`, sorted by `|λ|` descending,
/// with `ψᵢᵀ C⁻¹ ψⱼ = δᵢⱼ`.
#[derive(Debug, Clone, Default)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
}

impl Eigenpairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            values: self.values[..n].to_vec(),
            vectors: self.vectors[..n].to_vec(),
        }
    }
}

fn columns(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    m.column_iter().map(|c| c.into_owned()).collect()
}

fn stack(cols: &[DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_columns(cols)
}

/// Double-pass randomized solver for the dominant eigenpairs of
/// `H ψ = λ C⁻¹ ψ`, i.e. of `C H`, using only operator applications.
///
/// `apply_h` acts on a block of vectors; `apply_c` and `apply_cinv` on one.
pub fn randomized_generalized_eigs<H, C, CI>(
    n: usize,
    settings: &EigenSettings,
    apply_h: H,
    apply_c: C,
    apply_cinv: CI,
) -> Result<Eigenpairs>
where
    H: Fn(&[DVector<f64>]) -> Result<Vec<DVector<f64>>>,
    C: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
    CI: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let rank = settings.rank;
    if rank == 0 {
        return Ok(Eigenpairs::default());
    }
    if rank > n {
        return Err(Error::Argument(format!(
            "requested {rank} eigenpairs of a {n}-dimensional operator"
        )));
    }
    let k = (rank + settings.oversampling).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let omega: Vec<DVector<f64>> = (0..k)
        .map(|_| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();

    let apply_ch = |block: &[DVector<f64>]| -> Result<Vec<DVector<f64>>> {
        let hy = apply_h(block)?;
        hy.par_iter().map(&apply_c).collect()
    };
    let mut y = apply_ch(&omega)?;
    for _ in 0..settings.power_iters {
        let q = stack(&y).qr().q();
        y = apply_ch(&columns(&q))?;
    }

    // C⁻¹-orthonormal basis: Euclidean QR, then a Cholesky correction.
    let q0 = stack(&y).qr().q();
    let q0_cols = columns(&q0);
    let z: Vec<DVector<f64>> = q0_cols.par_iter().map(&apply_cinv).collect::<Result<_>>()?;
    let b = q0.transpose() * stack(&z);
    let b = (&b + b.transpose()) * 0.5;
    let chol = b
        .cholesky()
        .ok_or_else(|| Error::Internal("sketch basis is not positive definite in the C⁻¹ inner product".into()))?;
    let l_inv_t = chol
        .l()
        .transpose()
        .try_inverse()
        .ok_or_else(|| Error::Internal("singular Cholesky factor in the eigensolver".into()))?;
    let q = q0 * l_inv_t;
    let q_cols = columns(&q);

    let hq = stack(&apply_h(&q_cols)?);
    let t = q.transpose() * hq;
    let t = (&t + t.transpose()) * 0.5;
    let eig = t.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    let mut pairs = Eigenpairs::default();
    for &i in order.iter().take(rank) {
        pairs.values.push(eig.eigenvalues[i]);
        pairs.vectors.push(&q * eig.eigenvectors.column(i));
    }
    Ok(pairs)
}

/// Dominant eigenpairs of the covariance-preconditioned Hessian at a
/// linearization point.
pub fn eigensolve_hc(ws: &AdjointWorkspace<'_>, prior: &MaternPrior, settings: &EigenSettings) -> Result<Eigenpairs> {
    randomized_generalized_eigs(
        prior.dim(),
        settings,
        |block| ws.hessian_actions(block),
        |v| prior.apply_covariance(v),
        |v| prior.apply_covariance_inverse(v),
    )
}

/// `Q̄ + ½ Σ λ_n`.
pub fn taylor_mean(q_bar: f64, eigenvalues: &[f64]) -> f64 {
    q_bar + 0.5 * eigenvalues.iter().sum::<f64>()
}

/// `⟨Q̄_m, C Q̄_m⟩ + ½ Σ λ_n²`.
pub fn taylor_variance(grad: &DVector<f64>, c_grad: &DVector<f64>, eigenvalues: &[f64]) -> f64 {
    grad.dot(c_grad) + 0.5 * eigenvalues.iter().map(|l| l * l).sum::<f64>()
}

/// All quantities of the quadratic risk objective at one design.
#[derive(Debug, Clone)]
pub struct RiskEvaluation<'a> {
    pub design: DVector<f64>,
    pub qoi: QoiBreakdown,
    pub q_bar: f64,
    pub grad_bar: DVector<f64>,
    pub c_grad: DVector<f64>,
    pub eig: Eigenpairs,
    pub oversampling: usize,
    pub e_quad: f64,
    pub v_quad: f64,
    pub reg_value: f64,
    pub reg_grad: DVector<f64>,
    pub weights: RiskWeights,
    pub j_total: f64,
    pub workspace: AdjointWorkspace<'a>,
}

impl RiskEvaluation<'_> {
    pub fn rank(&self) -> usize {
        self.eig.len()
    }

    /// Taylor mean using the first `n` eigenvalues.
    pub fn mean_with_rank(&self, n: usize) -> f64 {
        taylor_mean(self.q_bar, &self.eig.values[..n.min(self.rank())])
    }

    /// Taylor variance using the first `n` eigenvalues.
    pub fn variance_with_rank(&self, n: usize) -> f64 {
        taylor_variance(&self.grad_bar, &self.c_grad, &self.eig.values[..n.min(self.rank())])
    }
}

/// Forward model, prior and weights of the risk-averse design problem.
#[derive(Debug, Clone)]
pub struct RiskProblem {
    pub model: ForwardModel,
    pub prior: MaternPrior,
    pub weights: RiskWeights,
    pub eigen: EigenSettings,
    pub reg: RegConfig,
    regularizer: Regularizer,
}

impl RiskProblem {
    pub fn new(model: ForwardModel, prior: MaternPrior, weights: RiskWeights, eigen: EigenSettings, reg: RegConfig) -> Result<Self> {
        weights.validate()?;
        reg.validate()?;
        if prior.dim() != model.n_nodes() {
            return Err(Error::Argument("prior and forward model live on different meshes".into()));
        }
        let regularizer = Regularizer::new(model.mesh())?;
        Ok(Self {
            model,
            prior,
            weights,
            eigen,
            reg,
            regularizer,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.model.n_nodes()
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    /// Full quadratic objective `J = E_quad + β_V V_quad + β_R R(d)`.
    pub fn objective_j(&self, d: &DVector<f64>) -> Result<RiskEvaluation<'_>> {
        self.objective_j_with(d, &self.weights, &self.reg)
    }

    pub fn objective_j_with(&self, d: &DVector<f64>, weights: &RiskWeights, reg: &RegConfig) -> Result<RiskEvaluation<'_>> {
        weights.validate()?;
        let d_field = NodalField::new(self.model.mesh(), d.clone())?;
        let ws = AdjointWorkspace::new(&self.model, &d_field, self.prior.mean())?;
        let qoi = ws.qoi();
        let grad_bar = ws.gradient();
        let c_grad = self.prior.apply_covariance(&grad_bar)?;
        let eig = eigensolve_hc(&ws, &self.prior, &self.eigen)?;
        sensitivities::warn_degenerate(&eig.values);
        let e_quad = taylor_mean(qoi.q, &eig.values);
        let v_quad = taylor_variance(&grad_bar, &c_grad, &eig.values);
        if v_quad < 0.0 {
            warn!("Taylor variance is negative ({v_quad:.3e})");
        }
        let (reg_value, reg_grad) = if weights.beta_r != 0.0 {
            self.regularizer.eval(d, reg)?
        } else {
            (0.0, DVector::zeros(d.len()))
        };
        let j_total = e_quad + weights.beta_v * v_quad + weights.beta_r * reg_value;
        Ok(RiskEvaluation {
            design: d.clone(),
            qoi,
            q_bar: qoi.q,
            grad_bar,
            c_grad,
            oversampling: self.eigen.oversampling,
            eig,
            e_quad,
            v_quad,
            reg_value,
            reg_grad,
            weights: *weights,
            j_total,
            workspace: ws,
        })
    }

    /// `(J, ∇_d J_quad)` for the optimizer.
    pub fn objective_and_gradient(&self, d: &DVector<f64>, weights: &RiskWeights, reg: &RegConfig) -> Result<(f64, DVector<f64>)> {
        let eval = self.objective_j_with(d, weights, reg)?;
        let grad = sensitivities::grad_d_jquad(d, &eval)?;
        Ok((eval.j_total, grad))
    }

    /// Monte Carlo moments of `Q(d, m)` under the prior.
    pub fn mc_estimate(&self, d: &DVector<f64>, n_samples: usize, seed: u64) -> Result<McEstimate> {
        let d_field = NodalField::new(self.model.mesh(), d.clone())?;
        mc_estimate_with(&self.prior, n_samples, seed, |m| {
            let m = NodalField::from_values_unchecked(m.clone());
            self.model.eval_q(&d_field, &m)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Per-sample generator: stream `k` of the root seed.
pub fn sample_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Sample mean, unbiased variance and standard error of `q(m_k)` over prior
/// draws. Porosity-range failures are skipped but may not exceed
/// [`MC_FAILURE_LIMIT`] of the samples.
pub fn mc_estimate_with<F>(prior: &MaternPrior, n_samples: usize, seed: u64, q: F) -> Result<McEstimate>
where
    F: Fn(&DVector<f64>) -> Result<f64> + Sync,
{
    if n_samples < 2 {
        return Err(Error::Argument("Monte Carlo needs at least two samples".into()));
    }
    let values: Vec<Result<Option<f64>>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let m = prior.mean().values() + prior.sample_perturbation(&mut sample_rng(seed, k))?;
            match q(&m) {
                Ok(v) => Ok(Some(v)),
                Err(Error::PorosityRange { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut ok = Vec::with_capacity(n_samples);
    for v in values {
        if let Some(x) = v? {
            ok.push(x);
        }
    }
    let n_failed = n_samples - ok.len();
    if n_failed as f64 > MC_FAILURE_LIMIT * n_samples as f64 {
        return Err(Error::Constraint(format!(
            "{n_failed} of {n_samples} Monte Carlo samples left the admissible porosity range"
        )));
    }
    if n_failed > 0 {
        warn!("{n_failed} of {n_samples} Monte Carlo samples skipped for inadmissible porosity");
    }
    let n = ok.len() as f64;
    if ok.len() < 2 {
        return Err(Error::Constraint("fewer than two admissible Monte Carlo samples".into()));
    }
    let mean = ok.iter().sum::<f64>() / n;
    let variance = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(McEstimate {
        mean,
        variance,
        std_error: (variance / n).sqrt(),
        n_ok: ok.len(),
        n_failed,
    })
}
