mod common;

use duu_core::fem::NodalField;
use duu_core::mesh::Mesh;
use duu_core::optimizer::{minimize, OptimizeOptions, OptimizeResult, OptimizeStatus};
use duu_core::regularization::{continuation_run, eval_r, f_eps0, f_eps0_derivative, p3_coefficients, RegConfig, Regularizer};
use duu_core::Error;
use nalgebra::DVector;
use proptest::prelude::*;

use common::random_vector;

#[test]
fn surrogate_is_c1_at_both_breakpoints() {
    for eps0 in [0.5, 0.25, 0.125] {
        for x in [0.5 * eps0, 2.0 * eps0] {
            let dl = 1e-12;
            let left = f_eps0_derivative(x - dl, eps0).unwrap();
            let right = f_eps0_derivative((x + dl).min(1.0), eps0).unwrap();
            assert!((left - right).abs() <= 1e-8, "eps0 {eps0}, x {x}: {left} vs {right}");
            let jump = f_eps0(x - dl, eps0).unwrap() - f_eps0((x + dl).min(1.0), eps0).unwrap();
            assert!(jump.abs() <= 1e-10);
        }
    }
}

#[test]
fn cubic_satisfies_its_four_conditions() {
    for eps0 in [0.5, 0.3, 0.25, 0.125, 0.01] {
        let c = p3_coefficients(eps0).unwrap();
        let p = |x: f64| c[0] + x * (c[1] + x * (c[2] + x * c[3]));
        let dp = |x: f64| c[1] + x * (2.0 * c[2] + 3.0 * x * c[3]);
        let (a, b) = (0.5 * eps0, 2.0 * eps0);
        assert!((p(a) - 0.5).abs() <= 1e-12);
        assert!((dp(a) - 1.0 / eps0).abs() <= 1e-9 / eps0);
        assert!((p(b) - 1.0).abs() <= 1e-12);
        assert!(dp(b).abs() <= 1e-9 / eps0);
    }
    assert!(p3_coefficients(0.6).is_err());
    assert!(p3_coefficients(-0.1).is_err());
}

#[test]
fn surrogate_tends_to_indicator() {
    for d in [1e-3, 0.01, 0.2, 0.9] {
        // once 2ε₀ < d the surrogate sits on its constant branch
        let i = (1..40).find(|&i| 2.0 * 0.5f64.powi(i) < d).unwrap();
        assert_eq!(f_eps0(d, 0.5f64.powi(i)).unwrap(), 1.0);
        let seq: Vec<f64> = (1..=i).map(|k| f_eps0(d, 0.5f64.powi(k)).unwrap()).collect();
        assert!(seq.windows(2).all(|w| w[0] <= w[1]));
    }
    for k in 1..20 {
        assert_eq!(f_eps0(0.0, 0.5f64.powi(k).min(0.5)).unwrap(), 0.0);
    }
}

proptest! {
    #[test]
    fn surrogate_is_bounded_and_monotone(eps0 in 0.005f64..=0.5, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (flo, fhi) = (f_eps0(lo, eps0).unwrap(), f_eps0(hi, eps0).unwrap());
        prop_assert!((0.0..=1.0).contains(&flo) && (0.0..=1.0).contains(&fhi));
        prop_assert!(flo <= fhi + 1e-15);
        prop_assert!(f_eps0_derivative(lo, eps0).unwrap() >= -1e-12);
    }

    #[test]
    fn tikhonov_term_is_invariant_under_shifts(shift in -0.3f64..0.3, seed in 0u64..1000) {
        let mesh = Mesh::unit_square(4, 4).unwrap();
        let reg = Regularizer::new(&mesh).unwrap();
        let d = random_vector(mesh.n_vertices(), seed).map(|v| 0.5 + 0.15 * v);
        let cfg = RegConfig { beta_tik: 1.0, beta_l0: 0.0, ..RegConfig::default() };
        let (a, _) = reg.eval(&d, &cfg).unwrap();
        let (b, _) = reg.eval(&d.add_scalar(shift), &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}

#[test]
fn regularizer_examples() {
    let mesh = Mesh::lshape(0.125).unwrap();
    let tik = RegConfig {
        beta_tik: 1.0,
        beta_l0: 0.0,
        ..RegConfig::default()
    };
    let (v, g) = eval_r(&mesh, &NodalField::constant(&mesh, 0.37), &tik).unwrap();
    assert!(v.abs() <= 1e-12);
    assert!(g.values().amax() <= 1e-12);

    let l0 = RegConfig {
        beta_tik: 0.0,
        beta_l0: 1.0,
        eps0: 0.25,
        k_cont: 1,
    };
    let (v, _) = eval_r(&mesh, &NodalField::constant(&mesh, 1.0), &l0).unwrap();
    assert!((v - 0.75).abs() <= 1e-12);

    // ∫|∇x|² over the L-shape is its area
    let x = NodalField::from_fn(&mesh, |x, _| x);
    let (v, _) = eval_r(&mesh, &x, &tik).unwrap();
    assert!((v - 0.75).abs() <= 1e-12);
}

#[test]
fn regularizer_rejects_designs_outside_the_box() {
    let mesh = Mesh::unit_square(2, 2).unwrap();
    let reg = Regularizer::new(&mesh).unwrap();
    let cfg = RegConfig {
        beta_l0: 1.0,
        ..RegConfig::default()
    };
    let mut d = DVector::from_element(9, 0.5);
    d[4] = 1.2;
    assert!(matches!(reg.eval(&d, &cfg), Err(Error::Argument(_))));
}

#[test]
fn gradient_matches_central_differences() {
    let mesh = Mesh::lshape(0.125).unwrap();
    let reg = Regularizer::new(&mesh).unwrap();
    let n = mesh.n_vertices();
    let d = random_vector(n, 3).map(|v| 0.5 + 0.4 * v);
    let cfg = RegConfig {
        beta_tik: 0.7,
        beta_l0: 1.3,
        eps0: 0.25,
        k_cont: 1,
    };
    let (_, g) = reg.eval(&d, &cfg).unwrap();
    let eps = 1e-6;
    for k in 0..5 {
        let v = random_vector(n, 10 + k);
        let fp = reg.eval(&(&d + &v * eps), &cfg).unwrap().0;
        let fm = reg.eval(&(&d - &v * eps), &cfg).unwrap().0;
        let fd = (fp - fm) / (2.0 * eps);
        let an = g.dot(&v);
        assert!((fd - an).abs() <= 1e-6 * an.abs(), "direction {k}: {fd} vs {an}");
    }
}

/// Toy problem: pull toward a target pattern, regularized on a small mesh.
fn toy_stage(mesh: &Mesh, target: &DVector<f64>) -> impl FnMut(&DVector<f64>, &RegConfig) -> duu_core::Result<OptimizeResult> {
    let reg = Regularizer::new(mesh).unwrap();
    let target = target.clone();
    move |d0, cfg| {
        let f = |d: &DVector<f64>| {
            let r = d - &target;
            let (rv, rg) = reg.eval(d, cfg)?;
            Ok((r.norm_squared() + 0.01 * rv, r * 2.0 + rg * 0.01))
        };
        minimize(f, d0, &OptimizeOptions::default())
    }
}

#[test]
fn continuation_warm_starts_each_stage() {
    let mesh = Mesh::unit_square(4, 4).unwrap();
    let target = DVector::from_fn(mesh.n_vertices(), |i, _| if i % 3 == 0 { 0.02 } else { 0.8 });
    let d0 = DVector::from_element(mesh.n_vertices(), 0.5);
    let mut seen = Vec::new();
    let mut inner = toy_stage(&mesh, &target);
    let result = continuation_run(&d0, 3, |d, cfg| {
        seen.push((d.clone(), *cfg));
        inner(d, cfg)
    })
    .unwrap();
    assert_eq!(result.stages.len(), 4);
    let eps: Vec<f64> = result.stages[1..].iter().map(|s| s.eps0).collect();
    assert_eq!(eps, vec![0.5, 0.25, 0.125]);
    assert_eq!(seen[0].0, d0);
    assert_eq!((seen[0].1.beta_tik, seen[0].1.beta_l0), (1.0, 0.0));

    // K = 1 is one ℓ₀ solve started from the Tikhonov optimum
    let mut solo = toy_stage(&mesh, &target);
    let tik = solo(&d0, &seen[0].1).unwrap();
    let l0 = solo(&tik.d_opt, &seen[1].1).unwrap();
    let one = continuation_run(&d0, 1, toy_stage(&mesh, &target)).unwrap();
    assert_eq!(one.design, l0.d_opt);
    assert!(result.stages.iter().all(|s| s.status == OptimizeStatus::Converged));
}

#[test]
fn failed_stage_reports_partial_history() {
    let mesh = Mesh::unit_square(3, 3).unwrap();
    let target = DVector::from_element(mesh.n_vertices(), 0.3);
    let d0 = DVector::from_element(mesh.n_vertices(), 0.5);
    let mut inner = toy_stage(&mesh, &target);
    let mut calls = 0;
    let err = continuation_run(&d0, 3, |d, cfg| {
        calls += 1;
        let mut r = inner(d, cfg)?;
        if calls == 3 {
            r.status = OptimizeStatus::MaxIters;
        }
        Ok(r)
    })
    .unwrap_err();
    assert_eq!(err.stage, 2);
    assert_eq!(err.history.len(), 3);
    assert!(matches!(err.source, Error::Convergence(_)));
    assert!(continuation_run(&d0, 0, toy_stage(&mesh, &target)).is_err());
}
