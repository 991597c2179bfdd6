use std::fs;
use std::path::Path;
use std::process::Command;

use porous_duu::commands::{self, SUMMARY_HEADER, TAYLOR_HEADER};
use porous_duu::{CliError, RunConfig};

const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

fn small_config(out: &Path) -> String {
    format!(
        r#"
seed = 7

[mesh]
geometry = "lshape"
h = 0.125
refinements = 1

[model]
kappa_s = 2.0
kappa_f = 0.06
h_exchange = 10.0
c_compress = 1e-6
mu = 1e6
k_bulk = 2e6
beta_m = 1.0

[bc]
t_hot = 300.0
t_cold = 270.0
conv_coeff = 15.0
traction = [0.0, -1e3]

[prior]
gamma = 5.0
delta = 20.0

[risk]
beta_v = [0.0, 1e5]
beta_v_scale = 1e-4
beta_r = 1.0
rank = 5
oversampling = 5
power_iters = 1
n_sweep = [1, 5]

[mc]
n_samples = 40

[optimizer]
max_iters = 15

[output]
directory = "{}"
"#,
        out.display()
    )
}

fn small(out: &Path) -> RunConfig {
    RunConfig::parse(&small_config(out)).unwrap()
}

fn run_binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_porous-duu"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn default_config_round_trips() {
    let cfg = RunConfig::parse(DEFAULT_CONFIG).unwrap();
    let again = RunConfig::parse(&cfg.to_toml()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.risk.beta_v, vec![0.0, 1e5, 1e6]);
    assert_eq!(cfg.mc.n_samples, 10240);
}

#[test]
fn omitted_sections_take_documented_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config(dir.path()).replace("[mc]\nn_samples = 40\n", "");
    let cfg = RunConfig::parse(&text).unwrap();
    assert_eq!(cfg.mc.n_samples, 10240);
    assert_eq!(cfg.design.initial, 0.5);
    assert_eq!(cfg.prior.theta, [[1.0, 0.0], [0.0, 1.0]]);
    assert!(!cfg.reg.continuation);
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config(dir.path()).replace("[prior]\n", "[prior]\nsigma = 1.0\n");
    let err = RunConfig::parse(&text).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("sigma"), "{err}");
}

#[test]
fn missing_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config(dir.path()).replace("kappa_s = 2.0\n", "");
    let err = RunConfig::parse(&text).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert!(err.to_string().contains("model.kappa_s"), "{err}");
}

#[test]
fn cross_field_constraints_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let base = small_config(dir.path());
    for (from, to) in [
        ("oversampling = 5", "oversampling = 4"),
        ("c_compress = 1e-6", "c_compress = 1e-7"),
        ("n_sweep = [1, 5]", "n_sweep = [1, 6]"),
        ("beta_v = [0.0, 1e5]", "beta_v = [-1.0]"),
        ("h = 0.125", "h = 1.5"),
        ("delta = 20.0", "delta = 20.0\ntheta = [[1.0, 2.0], [2.0, 1.0]]"),
    ] {
        let err = RunConfig::parse(&base.replace(from, to)).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{to}: {err}");
    }
}

#[test]
fn binary_reports_config_errors_with_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small_config(dir.path()).replace("t_cold = 270.0\n", ""));
    let out = run_binary(&["forward", "--config", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bc.t_cold"));
    let out = run_binary(&["forward", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forward_writes_five_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("fields");
    let path = write_config(dir.path(), &small_config(Path::new("unused")));
    let out = run_binary(&["forward", "--config", &path, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for key in ["Q_T", "Q_M", "Q "] {
        assert!(stdout.contains(key), "{stdout}");
    }
    let mut names: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["T_f.vtk", "T_s.vtk", "p.vtk", "phi_f.vtk", "u_s.vtk"]);
    let u = fs::read_to_string(out_dir.join("u_s.vtk")).unwrap();
    assert!(u.starts_with("# vtk DataFile Version 3.0\n"));
    assert!(u.contains("VECTORS u_s double"));
}

#[test]
fn equal_ambients_leave_no_interior_thermal_energy() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config(dir.path()).replace("t_cold = 270.0", "t_cold = 300.0");
    let report = commands::forward(&RunConfig::parse(&text).unwrap()).unwrap();
    assert!(
        report.interior_thermal.abs() <= 1e-9 * report.qoi.q_t.abs(),
        "{}",
        report.interior_thermal
    );
    assert_eq!(report.files.len(), 5);
}

#[test]
fn taylor_table_has_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let report = commands::taylor_vs_mc(&small(dir.path())).unwrap();
    let text = fs::read_to_string(&report.file).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), TAYLOR_HEADER.join(","));
    assert_eq!(lines.count(), 2);
    assert_eq!(report.n_samples, 40);
    assert_eq!(report.rows.iter().map(|r| r.n).collect::<Vec<_>>(), [1, 5]);
}

#[test]
fn spectrum_columns_are_sorted_by_magnitude() {
    let dir = tempfile::tempdir().unwrap();
    let report = commands::spectrum(&small(dir.path())).unwrap();
    assert_eq!(report.vertex_counts.len(), 2);
    assert!(report.vertex_counts[1] > 3 * report.vertex_counts[0]);
    for s in &report.spectra {
        assert_eq!(s.len(), 5);
        assert!(s.windows(2).all(|w| w[0].abs() >= w[1].abs()));
    }
    let mut rdr = csv::Reader::from_path(&report.file).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header[0], "n");
    assert_eq!(header.len(), 3);
    assert_eq!(rdr.records().count(), 5);
    assert!(report.to_string().contains(&report.vertex_counts[0].to_string()));
}

#[test]
fn spectrum_needs_a_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.mesh.refinements = 0;
    assert_eq!(commands::spectrum(&cfg).unwrap_err().exit_code(), 2);
}

#[test]
fn optimize_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = commands::optimize(&small(a.path())).unwrap();
    let rb = commands::optimize(&small(b.path())).unwrap();
    assert_eq!(ra.runs.len(), 2);
    for (x, y) in ra.runs.iter().zip(&rb.runs) {
        assert_eq!(x.j.to_bits(), y.j.to_bits());
        assert_eq!(x.mc.variance.to_bits(), y.mc.variance.to_bits());
        assert!(x.design.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    let sa = fs::read_to_string(a.path().join("summary.csv")).unwrap();
    assert_eq!(sa, fs::read_to_string(b.path().join("summary.csv")).unwrap());
    assert_eq!(sa.lines().next().unwrap(), SUMMARY_HEADER.join(","));
    assert_eq!(sa.lines().count(), 3);
    for f in ["d_opt_0.vtk", "d_opt_1.vtk", "iterations_0.csv", "iterations_1.csv"] {
        assert!(a.path().join(f).exists(), "{f}");
    }
}

#[test]
fn optimize_exits_4_when_iterations_run_out() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config(&dir.path().join("out")).replace("max_iters = 15", "max_iters = 1");
    let path = write_config(dir.path(), &text);
    let out = run_binary(&["optimize", "--config", &path, "--workers", "1"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("beta_V list: [0.0, 100000.0]"), "{stdout}");
    // partial results are on disk
    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn continuation_records_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config(dir.path())
        .replace("beta_v = [0.0, 1e5]", "beta_v = [1e5]")
        .replace("[optimizer]", "[reg]\ncontinuation = true\nk_cont = 2\n\n[optimizer]")
        .replace("max_iters = 15", "max_iters = 200");
    let report = commands::optimize(&RunConfig::parse(&text).unwrap()).unwrap();
    let run = &report.runs[0];
    let stages = fs::read_to_string(dir.path().join("stages_0.csv")).unwrap();
    assert_eq!(stages.lines().next().unwrap(), "stage,eps0,J,sparsity_metric,iterations,status");
    assert_eq!(stages.lines().count(), 1 + run.stages.len());
    if report.check().is_ok() {
        assert_eq!(run.stages.len(), 3);
    }
}
