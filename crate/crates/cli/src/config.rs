//! Run configuration: one TOML file, unknown keys rejected, cross-field
//! constraints re-checked on load.

use std::path::{Path, PathBuf};

use duu_core::fem::{self, NodalField, Tensor2};
use duu_core::forward::{ForwardModel, ModelParams};
use duu_core::mesh::Mesh;
use duu_core::optimizer::OptimizeOptions;
use duu_core::prior::MaternPrior;
use duu_core::regularization::RegConfig;
use duu_core::risk::{EigenSettings, RiskProblem, RiskWeights};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// Unit square minus its upper-right quarter; the inner corner is clamped.
    Lshape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub geometry: Geometry,
    /// Target edge length of the base mesh.
    pub h: f64,
    /// Uniform refinements studied by `spectrum`.
    #[serde(default = "default_refinements")]
    pub refinements: usize,
}

fn default_refinements() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kappa_s: f64,
    pub kappa_f: f64,
    pub h_exchange: f64,
    pub c_compress: f64,
    pub mu: f64,
    pub k_bulk: f64,
    pub beta_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcSection {
    pub t_hot: f64,
    pub t_cold: f64,
    pub conv_coeff: f64,
    pub traction: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub gamma: f64,
    pub delta: f64,
    #[serde(default = "default_theta")]
    pub theta: Tensor2,
    #[serde(default)]
    pub mean: f64,
}

fn default_theta() -> Tensor2 {
    fem::IDENTITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    /// Constant initial design.
    #[serde(default = "default_initial")]
    pub initial: f64,
}

fn default_initial() -> f64 {
    0.5
}

impl Default for DesignSection {
    fn default() -> Self {
        Self {
            initial: default_initial(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskSection {
    pub beta_v: Vec<f64>,
    /// Multiplies every entry of `beta_v` before use.
    pub beta_v_scale: f64,
    pub beta_r: f64,
    pub rank: usize,
    pub oversampling: usize,
    pub power_iters: usize,
    /// Ranks compared against Monte Carlo by `taylor-vs-mc`.
    pub n_sweep: Vec<usize>,
}

impl Default for RiskSection {
    fn default() -> Self {
        Self {
            beta_v: vec![0.0, 1e5, 1e6],
            beta_v_scale: 1.0,
            beta_r: 0.0,
            rank: 25,
            oversampling: 10,
            power_iters: 0,
            n_sweep: vec![1, 5, 10, 25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub n_samples: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self { n_samples: 10240 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegSection {
    pub beta_tik: f64,
    pub beta_l0: f64,
    pub eps0: f64,
    pub k_cont: usize,
    pub continuation: bool,
}

impl Default for RegSection {
    fn default() -> Self {
        let r = RegConfig::default();
        Self {
            beta_tik: r.beta_tik,
            beta_l0: r.beta_l0,
            eps0: r.eps0,
            k_cont: r.k_cont,
            continuation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub max_iters: usize,
    pub memory: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Start each β_V run from the previous run's optimum.
    pub warm_start: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizeOptions::default();
        Self {
            max_iters: o.max_iters,
            memory: o.memory,
            grad_tol: o.grad_tol,
            step_tol: o.step_tol,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub vtk: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            vtk: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream (eigensolver probes, Monte Carlo).
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    #[serde(default)]
    pub workers: usize,
    pub mesh: MeshSection,
    pub model: ModelSection,
    pub bc: BcSection,
    pub prior: PriorSection,
    #[serde(default)]
    pub design: DesignSection,
    #[serde(default)]
    pub risk: RiskSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub reg: RegSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_error(e.to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().trim().to_string();
            match msg.strip_prefix("missing field ") {
                Some(field) if path == "." => config_error(format!("missing config key {}", field.trim_matches('`'))),
                Some(field) => config_error(format!("missing config key {path}.{}", field.trim_matches('`'))),
                None if path == "." => config_error(msg),
                None => config_error(format!("{path}: {msg}")),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    /// Cross-field checks owned by the library modules.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.mesh;
        if !(m.h > 0.0 && m.h < 1.0) {
            return Err(config_error(format!("mesh.h must lie in (0, 1), got {}", m.h)));
        }
        self.model_params().validate().map_err(|e| config_error(format!("model/bc: {e}")))?;
        let p = &self.prior;
        if !(p.gamma > 0.0) || !(p.delta > 0.0) {
            return Err(config_error("prior.gamma and prior.delta must be positive"));
        }
        fem::check_spd_tensor(&p.theta).map_err(|e| config_error(format!("prior.theta: {e}")))?;
        if !(0.0..=1.0).contains(&self.design.initial) {
            return Err(config_error("design.initial must lie in [0, 1]"));
        }
        let r = &self.risk;
        if r.beta_v.is_empty() {
            return Err(config_error("risk.beta_v must list at least one weight"));
        }
        for &b in &r.beta_v {
            self.weights(b).validate().map_err(|e| config_error(format!("risk: {e}")))?;
        }
        if !(r.beta_v_scale > 0.0) {
            return Err(config_error("risk.beta_v_scale must be positive"));
        }
        if r.rank == 0 {
            return Err(config_error("risk.rank must be at least 1"));
        }
        if r.oversampling < 5 {
            return Err(config_error("risk.oversampling must be at least 5"));
        }
        if let Some(&n) = r.n_sweep.iter().find(|&&n| n > r.rank) {
            return Err(config_error(format!("risk.n_sweep entry {n} exceeds risk.rank = {}", r.rank)));
        }
        if self.mc.n_samples < 2 {
            return Err(config_error("mc.n_samples must be at least 2"));
        }
        self.reg_config().validate().map_err(|e| config_error(format!("reg: {e}")))?;
        if self.reg.continuation && self.reg.k_cont == 0 {
            return Err(config_error("reg.k_cont must be at least 1 when continuation is enabled"));
        }
        self.optimize_options()
            .validate()
            .map_err(|e| config_error(format!("optimizer: {e}")))?;
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        let (m, b) = (&self.model, &self.bc);
        ModelParams {
            kappa_s: m.kappa_s,
            kappa_f: m.kappa_f,
            h_exchange: m.h_exchange,
            c_compress: m.c_compress,
            mu: m.mu,
            k_bulk: m.k_bulk,
            t_hot: b.t_hot,
            t_cold: b.t_cold,
            conv_coeff: b.conv_coeff,
            traction: b.traction,
            beta_m: m.beta_m,
        }
    }

    pub fn base_mesh(&self) -> duu_core::Result<Mesh> {
        match self.mesh.geometry {
            Geometry::Lshape => Mesh::lshape(self.mesh.h),
        }
    }

    pub fn forward_model(&self, mesh: Mesh) -> duu_core::Result<ForwardModel> {
        ForwardModel::new(mesh, self.model_params())
    }

    pub fn prior(&self, mesh: &Mesh) -> duu_core::Result<MaternPrior> {
        let p = &self.prior;
        MaternPrior::build(mesh, p.gamma, p.delta, p.theta, NodalField::constant(mesh, p.mean))
    }

    pub fn eigen_settings(&self) -> EigenSettings {
        EigenSettings {
            rank: self.risk.rank,
            oversampling: self.risk.oversampling,
            power_iters: self.risk.power_iters,
            seed: self.seed,
        }
    }

    /// Monte Carlo streams are kept apart from the eigensolver probes.
    pub fn mc_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    /// Weights for a raw (unscaled) `β_V`.
    pub fn weights(&self, beta_v: f64) -> RiskWeights {
        RiskWeights {
            beta_v: beta_v * self.risk.beta_v_scale,
            beta_r: self.risk.beta_r,
        }
    }

    pub fn reg_config(&self) -> RegConfig {
        RegConfig {
            beta_tik: self.reg.beta_tik,
            beta_l0: self.reg.beta_l0,
            eps0: self.reg.eps0,
            k_cont: self.reg.k_cont,
        }
    }

    pub fn optimize_options(&self) -> OptimizeOptions {
        let o = &self.optimizer;
        OptimizeOptions {
            max_iters: o.max_iters,
            memory: o.memory,
            grad_tol: o.grad_tol,
            step_tol: o.step_tol,
            ..OptimizeOptions::default()
        }
    }

    /// Risk problem on `mesh` with the first configured `β_V`.
    pub fn risk_problem(&self, mesh: Mesh) -> duu_core::Result<RiskProblem> {
        let prior = self.prior(&mesh)?;
        let model = self.forward_model(mesh)?;
        RiskProblem::new(
            model,
            prior,
            self.weights(self.risk.beta_v[0]),
            self.eigen_settings(),
            self.reg_config(),
        )
    }
}
