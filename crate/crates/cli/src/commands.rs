//! The four experiment drivers. Each returns a report; printing and exit
//! codes are left to the binary.

use std::fmt;
use std::path::PathBuf;

use duu_core::fem::NodalField;
use duu_core::forward::QoiBreakdown;
use duu_core::optimizer::{minimize, OptimizeStatus};
use duu_core::regularization::{continuation_run, continuation_schedule, RegConfig, StageRecord};
use duu_core::risk::{eigensolve_hc, McEstimate};
use duu_core::sensitivities::AdjointWorkspace;
use duu_core::vtk::PointData;
use log::info;
use nalgebra::DVector;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{csv_file, ensure_dir, num, vtk_file};

pub const TAYLOR_HEADER: [&str; 8] = [
    "N",
    "E_quad",
    "V_quad",
    "mc_mean",
    "mc_var",
    "mc_stderr",
    "rel_err_mean",
    "rel_err_var",
];
pub const SUMMARY_HEADER: [&str; 10] = [
    "beta_V",
    "beta_V_scaled",
    "J",
    "E_quad",
    "V_quad",
    "mc_var_at_optimum",
    "mc_mean_at_optimum",
    "mc_stderr_at_optimum",
    "iterations",
    "status",
];
pub const ITERATION_HEADER: [&str; 5] = ["iter", "J", "grad_norm", "step_length", "n_active_bounds"];
pub const STAGE_HEADER: [&str; 6] = ["stage", "eps0", "J", "sparsity_metric", "iterations", "status"];

fn initial_design(cfg: &RunConfig, n: usize) -> DVector<f64> {
    DVector::from_element(n, cfg.design.initial)
}

fn relative_error(approx: f64, reference: f64) -> f64 {
    (approx - reference).abs() / reference.abs().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone)]
pub struct ForwardReport {
    pub n_vertices: usize,
    pub qoi: QoiBreakdown,
    /// `½ Σ ⟨φκ∇T, ∇T⟩`, the part of `Q_T` away from the boundary.
    pub interior_thermal: f64,
    pub files: Vec<PathBuf>,
}

impl fmt::Display for ForwardReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vertices        {}", self.n_vertices)?;
        writeln!(f, "Q_T             {:.10e}", self.qoi.q_t)?;
        writeln!(f, "  interior term {:.10e}", self.interior_thermal)?;
        writeln!(f, "Q_M             {:.10e}", self.qoi.q_m)?;
        write!(f, "Q               {:.10e}", self.qoi.q)
    }
}

/// Solve both systems at the configured design and the prior mean.
pub fn forward(cfg: &RunConfig) -> Result<ForwardReport, CliError> {
    let mesh = cfg.base_mesh()?;
    let model = cfg.forward_model(mesh)?;
    let mesh = model.mesh();
    let d = NodalField::constant(mesh, cfg.design.initial);
    let m = NodalField::constant(mesh, cfg.prior.mean);
    let phi = model.porosity(&d, &m)?;
    let state = model.solve(&phi)?;
    let q_t = model.eval_qt(&state.thermal, &phi);
    let q_m = model.eval_qm(&state.mechanical);
    let qoi = QoiBreakdown {
        q_t,
        q_m,
        q: model.params().beta_m * q_m - q_t,
    };
    let interior_thermal = model.thermal_interior_energy(&state.thermal, &phi)?;

    let dir = &cfg.output.directory;
    ensure_dir(dir)?;
    let th = &state.thermal;
    let me = &state.mechanical;
    let fields = [
        ("T_s", PointData::Scalar("T_s", th.t_s.values())),
        ("T_f", PointData::Scalar("T_f", th.t_f.values())),
        ("u_s", PointData::Vector("u_s", [me.u[0].values(), me.u[1].values()])),
        ("p", PointData::Scalar("p", me.p.values())),
        ("phi_f", PointData::Scalar("phi_f", phi.values())),
    ];
    let mut files = Vec::new();
    for (name, data) in fields {
        files.push(vtk_file(&dir.join(format!("{name}.vtk")), mesh, name, &[data])?);
    }
    Ok(ForwardReport {
        n_vertices: mesh.n_vertices(),
        qoi,
        interior_thermal,
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaylorRow {
    pub n: usize,
    pub e_quad: f64,
    pub v_quad: f64,
    pub rel_err_mean: f64,
    pub rel_err_var: f64,
}

#[derive(Debug, Clone)]
pub struct TaylorReport {
    pub n_vertices: usize,
    pub n_samples: usize,
    pub q_bar: f64,
    pub mc: McEstimate,
    pub rows: Vec<TaylorRow>,
    pub file: PathBuf,
}

impl fmt::Display for TaylorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vertices   {}", self.n_vertices)?;
        writeln!(f, "n_samples  {} ({} skipped)", self.n_samples, self.mc.n_failed)?;
        writeln!(f, "Q(d, m̄)    {:.10e}", self.q_bar)?;
        writeln!(f, "MC mean    {:.10e} ± {:.3e}", self.mc.mean, self.mc.std_error)?;
        writeln!(f, "MC var     {:.6e}", self.mc.variance)?;
        write!(
            f,
            "{:>4} {:>18} {:>14} {:>12} {:>12}",
            "N", "E_quad", "V_quad", "rel_err_E", "rel_err_V"
        )?;
        for r in &self.rows {
            write!(
                f,
                "\n{:>4} {:>18.10e} {:>14.6e} {:>12.3e} {:>12.3e}",
                r.n, r.e_quad, r.v_quad, r.rel_err_mean, r.rel_err_var
            )?;
        }
        Ok(())
    }
}

/// Taylor moments at each rank of the sweep against one Monte Carlo run.
pub fn taylor_vs_mc(cfg: &RunConfig) -> Result<TaylorReport, CliError> {
    let problem = cfg.risk_problem(cfg.base_mesh()?)?;
    let d = initial_design(cfg, problem.n_nodes());
    let eval = problem.objective_j(&d)?;
    info!(
        "eigensolve done, {} pairs; starting {} Monte Carlo samples",
        eval.rank(),
        cfg.mc.n_samples
    );
    let mc = problem.mc_estimate(&d, cfg.mc.n_samples, cfg.mc_seed())?;
    let rows: Vec<TaylorRow> = cfg
        .risk
        .n_sweep
        .iter()
        .map(|&n| {
            let (e, v) = (eval.mean_with_rank(n), eval.variance_with_rank(n));
            TaylorRow {
                n,
                e_quad: e,
                v_quad: v,
                rel_err_mean: relative_error(e, mc.mean),
                rel_err_var: relative_error(v, mc.variance),
            }
        })
        .collect();

    ensure_dir(&cfg.output.directory)?;
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                num(r.e_quad),
                num(r.v_quad),
                num(mc.mean),
                num(mc.variance),
                num(mc.std_error),
                num(r.rel_err_mean),
                num(r.rel_err_var),
            ]
        })
        .collect();
    let file = csv_file(&cfg.output.directory.join("taylor_convergence.csv"), &TAYLOR_HEADER, &records)?;
    Ok(TaylorReport {
        n_vertices: problem.n_nodes(),
        n_samples: cfg.mc.n_samples,
        q_bar: eval.q_bar,
        mc,
        rows,
        file,
    })
}

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub vertex_counts: Vec<usize>,
    /// One spectrum per mesh, sorted by decreasing magnitude.
    pub spectra: Vec<Vec<f64>>,
    pub file: PathBuf,
}

impl SpectrumReport {
    /// `|λ_N| / |λ_1|` on mesh `k`.
    pub fn decay_ratio(&self, k: usize) -> f64 {
        let s = &self.spectra[k];
        s.last().map_or(f64::NAN, |l| l.abs() / s[0].abs())
    }

    /// Largest `| |λᵢ(a)| − |λᵢ(b)| | / |λᵢ(b)|` over the common ranks.
    pub fn max_deviation(&self, a: usize, b: usize) -> f64 {
        self.spectra[a]
            .iter()
            .zip(&self.spectra[b])
            .map(|(x, y)| relative_error(x.abs(), y.abs()))
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for SpectrumReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let counts: Vec<String> = self.vertex_counts.iter().map(|n| n.to_string()).collect();
        writeln!(f, "parameter dimension per mesh: {}", counts.join(", "))?;
        writeln!(f, "|λ_N|/|λ_1| on the base mesh: {:.3e}", self.decay_ratio(0))?;
        for k in 1..self.spectra.len() {
            writeln!(
                f,
                "max relative deviation, mesh {} vs {}: {:.3e}",
                k - 1,
                k,
                self.max_deviation(k - 1, k)
            )?;
        }
        write!(f, "wrote {}", self.file.display())
    }
}

/// Dominant eigenvalues of the prior-preconditioned Hessian on the base mesh
/// and each uniform refinement.
pub fn spectrum(cfg: &RunConfig) -> Result<SpectrumReport, CliError> {
    if cfg.mesh.refinements == 0 {
        return Err(CliError::Config("spectrum needs mesh.refinements ≥ 1".into()));
    }
    let mut mesh = cfg.base_mesh()?;
    let mut vertex_counts = Vec::new();
    let mut spectra = Vec::new();
    for level in 0..=cfg.mesh.refinements {
        if level > 0 {
            mesh = mesh.refine_uniform()?;
        }
        let prior = cfg.prior(&mesh)?;
        let model = cfg.forward_model(mesh.clone())?;
        let d = NodalField::constant(&mesh, cfg.design.initial);
        let ws = AdjointWorkspace::new(&model, &d, prior.mean())?;
        let eig = eigensolve_hc(&ws, &prior, &cfg.eigen_settings())?;
        let mut values = eig.values;
        values.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        info!("mesh {level}: {} vertices, |λ_1| = {:.4e}", mesh.n_vertices(), values[0].abs());
        vertex_counts.push(mesh.n_vertices());
        spectra.push(values);
    }

    ensure_dir(&cfg.output.directory)?;
    let names: Vec<String> = std::iter::once("n".to_string())
        .chain(vertex_counts.iter().map(|n| format!("lambda_{n}")))
        .collect();
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    let rank = spectra.iter().map(Vec::len).min().unwrap_or(0);
    let records: Vec<Vec<String>> = (0..rank)
        .map(|i| {
            std::iter::once((i + 1).to_string())
                .chain(spectra.iter().map(|s| num(s[i])))
                .collect()
        })
        .collect();
    let file = csv_file(&cfg.output.directory.join("spectrum.csv"), &header, &records)?;
    Ok(SpectrumReport {
        vertex_counts,
        spectra,
        file,
    })
}

#[derive(Debug, Clone)]
pub struct OptimizeRun {
    pub beta_v: f64,
    pub beta_v_scaled: f64,
    pub j: f64,
    pub e_quad: f64,
    pub v_quad: f64,
    pub mc: McEstimate,
    pub status: OptimizeStatus,
    pub iterations: usize,
    pub stages: Vec<StageRecord>,
    pub design: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub n_vertices: usize,
    pub runs: Vec<OptimizeRun>,
    pub files: Vec<PathBuf>,
}

impl OptimizeReport {
    /// Non-convergence of any run becomes an error after all output is written.
    pub fn check(&self) -> Result<(), CliError> {
        let failed: Vec<String> = self
            .runs
            .iter()
            .filter(|r| r.status != OptimizeStatus::Converged)
            .map(|r| format!("beta_V = {:e}: {:?}", r.beta_v, r.status))
            .collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(CliError::NotConverged(failed.join("; ")))
        }
    }
}

impl fmt::Display for OptimizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vertices {}", self.n_vertices)?;
        write!(
            f,
            "{:>10} {:>18} {:>18} {:>12} {:>12} {:>18} {:>6} status",
            "beta_V", "J", "E_quad", "V_quad", "MC var", "MC mean", "iters"
        )?;
        for r in &self.runs {
            write!(
                f,
                "\n{:>10.3e} {:>18.10e} {:>18.10e} {:>12.5e} {:>12.5e} {:>18.10e} {:>6} {:?}",
                r.beta_v, r.j, r.e_quad, r.v_quad, r.mc.variance, r.mc.mean, r.iterations, r.status
            )?;
        }
        Ok(())
    }
}

fn summary_record(r: &OptimizeRun) -> Vec<String> {
    vec![
        num(r.beta_v),
        num(r.beta_v_scaled),
        num(r.j),
        num(r.e_quad),
        num(r.v_quad),
        num(r.mc.variance),
        num(r.mc.mean),
        num(r.mc.std_error),
        r.iterations.to_string(),
        format!("{:?}", r.status),
    ]
}

/// One risk-averse design per configured `β_V`. The summary table is
/// rewritten after every run, so a later failure leaves earlier results on
/// disk.
pub fn optimize(cfg: &RunConfig) -> Result<OptimizeReport, CliError> {
    let problem = cfg.risk_problem(cfg.base_mesh()?)?;
    let mesh = problem.model.mesh();
    let n = problem.n_nodes();
    let opts = cfg.optimize_options();
    let dir = &cfg.output.directory;
    ensure_dir(dir)?;
    println!("beta_V list: {:?} (scale {:e})", cfg.risk.beta_v, cfg.risk.beta_v_scale);

    let mut runs: Vec<OptimizeRun> = Vec::new();
    let mut files = Vec::new();
    let mut d_start = initial_design(cfg, n);
    for (k, &beta_v) in cfg.risk.beta_v.iter().enumerate() {
        let weights = cfg.weights(beta_v);
        info!("run {k}: beta_V = {beta_v:e} (scaled {:e})", weights.beta_v);
        let objective = |reg: RegConfig| {
            let problem = &problem;
            move |d: &DVector<f64>| problem.objective_and_gradient(d, &weights, &reg)
        };

        let main_reg = cfg.reg_config();
        let result = minimize(objective(main_reg), &d_start, &opts)?;
        files.push(csv_file(
            &dir.join(format!("iterations_{k}.csv")),
            &ITERATION_HEADER,
            &result
                .log
                .iter()
                .map(|r| {
                    vec![
                        r.iter.to_string(),
                        num(r.j),
                        num(r.grad_norm),
                        num(r.step_length),
                        r.n_active_bounds.to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        )?);
        let (mut design, mut status, mut iterations) = (result.d_opt, result.status, result.iterations);

        let mut stages = Vec::new();
        if cfg.reg.continuation && status == OptimizeStatus::Converged {
            let outcome = continuation_run(&design, cfg.reg.k_cont, |d0, reg| minimize(objective(*reg), d0, &opts));
            let (history, last, failure) = match outcome {
                Ok(c) => (c.stages, c.design, None),
                Err(e) => (e.history, e.last_design, Some(e.source)),
            };
            files.push(csv_file(
                &dir.join(format!("stages_{k}.csv")),
                &STAGE_HEADER,
                &history
                    .iter()
                    .map(|s| {
                        vec![
                            s.stage.to_string(),
                            num(s.eps0),
                            num(s.j),
                            num(s.sparsity),
                            s.iterations.to_string(),
                            format!("{:?}", s.status),
                        ]
                    })
                    .collect::<Vec<_>>(),
            )?);
            iterations += history.iter().map(|s| s.iterations).sum::<usize>();
            design = last;
            match failure {
                None => {}
                Some(duu_core::Error::Convergence(_)) => status = history.last().map_or(status, |s| s.status),
                Some(e) => return Err(e.into()),
            }
            stages = history;
        }

        // report J under the weights of the last stage that ran
        let final_reg = match stages.last() {
            Some(s) => continuation_schedule(cfg.reg.k_cont)[s.stage],
            None => main_reg,
        };
        let eval = problem.objective_j_with(&design, &weights, &final_reg)?;
        let mc = problem.mc_estimate(&design, cfg.mc.n_samples, cfg.mc_seed())?;
        if cfg.output.vtk {
            let title = format!("d_opt beta_V={beta_v:e}");
            files.push(vtk_file(
                &dir.join(format!("d_opt_{k}.vtk")),
                mesh,
                &title,
                &[PointData::Scalar("d", &design)],
            )?);
        }
        runs.push(OptimizeRun {
            beta_v,
            beta_v_scaled: weights.beta_v,
            j: eval.j_total,
            e_quad: eval.e_quad,
            v_quad: eval.v_quad,
            mc,
            status,
            iterations,
            stages,
            design: design.clone(),
        });
        drop(eval);
        let summary = dir.join("summary.csv");
        csv_file(&summary, &SUMMARY_HEADER, &runs.iter().map(summary_record).collect::<Vec<_>>())?;
        if k == 0 {
            files.push(summary);
        }
        if cfg.optimizer.warm_start {
            d_start = design;
        }
    }
    Ok(OptimizeReport {
        n_vertices: n,
        runs,
        files,
    })
}
