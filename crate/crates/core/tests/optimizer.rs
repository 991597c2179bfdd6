mod common;

use std::cell::RefCell;

use duu_core::optimizer::{minimize, project, OptimizeOptions, OptimizeStatus};
use duu_core::Result;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::random_vector;

fn rosenbrock(d: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let (x, y) = (d[0], d[1]);
    let j = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
    let g = DVector::from_vec(vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)]);
    Ok((j, g))
}

#[test]
fn rosenbrock_in_the_unit_box() {
    let opts = OptimizeOptions {
        grad_tol: 1e-10,
        ..OptimizeOptions::default()
    };
    for start in [[0.0, 0.0], [0.2, 0.9], [1.0, 0.0]] {
        let r = minimize(rosenbrock, &DVector::from_row_slice(&start), &opts).unwrap();
        assert_eq!(r.status, OptimizeStatus::Converged, "from {start:?}");
        let j = *r.j_history.last().unwrap();
        assert!(j <= 1e-6, "from {start:?}: J = {j}");
        assert!((r.d_opt[0] - 1.0).abs() <= 1e-3 && (r.d_opt[1] - 1.0).abs() <= 1e-3);
    }
}

#[test]
fn iterates_respect_bounds_and_decrease() {
    let seen = RefCell::new(Vec::new());
    let f = |d: &DVector<f64>| {
        seen.borrow_mut().push(d.clone());
        // minimum outside the box in several coordinates
        let target = DVector::from_fn(d.len(), |i, _| -0.5 + 0.25 * i as f64);
        let r = d - &target;
        Ok((
            r.norm_squared() + 0.1 * r.map(|v| v.powi(4)).sum(),
            r.map(|v| 2.0 * v + 0.4 * v.powi(3)),
        ))
    };
    let r = minimize(f, &DVector::from_element(8, 0.5), &OptimizeOptions::default()).unwrap();
    assert_eq!(r.status, OptimizeStatus::Converged);
    for d in seen.borrow().iter() {
        assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    assert!(r.j_history.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(r.j_history.len(), r.iterations + 1);
    assert_eq!(r.grad_norm_history.len(), r.log.len());
    assert_eq!(r.d_opt[0], 0.0);
    assert_eq!(r.d_opt[1], 0.0);
    assert_eq!(r.d_opt[7], 1.0);
    assert!(r.log.last().unwrap().n_active_bounds >= 3);
}

#[test]
fn quadratic_matches_dense_minimizer() {
    let n = 12;
    let cols: Vec<DVector<f64>> = (0..n).map(|j| random_vector(n, 40 + j as u64)).collect();
    let b = DMatrix::from_columns(&cols);
    let a = &b * b.transpose() + DMatrix::identity(n, n);
    let x_star = DVector::from_fn(n, |i, _| 0.2 + 0.05 * i as f64);
    let rhs = &a * &x_star;
    let f = |d: &DVector<f64>| Ok((0.5 * d.dot(&(&a * d)) - rhs.dot(d), &a * d - &rhs));
    let j_star = -0.5 * rhs.dot(&x_star);
    let opts = OptimizeOptions {
        grad_tol: 1e-12,
        ..OptimizeOptions::default()
    };
    let r = minimize(f, &DVector::from_element(n, 0.5), &opts).unwrap();
    let j = *r.j_history.last().unwrap();
    assert!((j - j_star).abs() <= 1e-8, "{j} vs {j_star}");
    assert!((&r.d_opt - &x_star).amax() <= 1e-5);
}

#[test]
fn iteration_cap_is_reported() {
    let opts = OptimizeOptions {
        max_iters: 3,
        grad_tol: 1e-14,
        ..OptimizeOptions::default()
    };
    let r = minimize(rosenbrock, &DVector::from_vec(vec![0.0, 0.0]), &opts).unwrap();
    assert_eq!(r.status, OptimizeStatus::MaxIters);
    assert_eq!(r.iterations, 3);
}

#[test]
fn invalid_options_are_rejected() {
    let d = DVector::from_element(2, 0.5);
    for opts in [
        OptimizeOptions {
            memory: 0,
            ..OptimizeOptions::default()
        },
        OptimizeOptions {
            grad_tol: 0.0,
            ..OptimizeOptions::default()
        },
        OptimizeOptions {
            lower: 1.0,
            upper: 0.0,
            ..OptimizeOptions::default()
        },
    ] {
        assert!(minimize(rosenbrock, &d, &opts).is_err());
    }
}

proptest! {
    #[test]
    fn projection_is_idempotent_and_within_bounds(v in proptest::collection::vec(-3.0f64..3.0, 1..20)) {
        let d = DVector::from_vec(v);
        let p = project(&d, 0.0, 1.0);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert_eq!(project(&p, 0.0, 1.0), p.clone());
        for (x, y) in d.iter().zip(p.iter()) {
            if (0.0..=1.0).contains(x) {
                prop_assert_eq!(x, y);
            }
        }
    }
}
