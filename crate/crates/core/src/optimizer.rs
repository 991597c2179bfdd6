//! Projected L-BFGS for box-constrained minimization.
//!
//! Variables at a bound whose gradient pushes outward are frozen for the
//! step; the two-loop recursion runs on the remaining free variables, and an
//! Armijo backtracking search is carried out along the projected path.

use std::collections::VecDeque;

use log::debug;
use nalgebra::DVector;

use crate::error::{Error, Result};

pub const ARMIJO_C1: f64 = 1e-4;
pub const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when `‖P(d − g) − d‖ ≤ grad_tol (1 + |J|)`.
    pub grad_tol: f64,
    /// Stop when an accepted step is shorter than this (max norm).
    pub step_tol: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            memory: 10,
            grad_tol: 1e-6,
            step_tol: 1e-12,
            lower: 0.0,
            upper: 1.0,
        }
    }
}

impl OptimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::Argument("L-BFGS memory must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(Error::Argument("optimizer tolerances must be positive".into()));
        }
        if !(self.lower < self.upper) {
            return Err(Error::Argument("optimizer bounds must satisfy lower < upper".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizeStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub grad_norm: f64,
    pub step_length: f64,
    pub n_active_bounds: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub d_opt: DVector<f64>,
    pub j_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub log: Vec<IterationRecord>,
    pub status: OptimizeStatus,
    pub iterations: usize,
}

/// Clamp every entry to `[lower, upper]`.
pub fn project(d: &DVector<f64>, lower: f64, upper: f64) -> DVector<f64> {
    d.map(|v| v.clamp(lower, upper))
}

/// Clamp every entry to `[0, 1]`.
pub fn project_box(d: &DVector<f64>) -> DVector<f64> {
    project(d, 0.0, 1.0)
}

fn active_mask(x: &DVector<f64>, g: &DVector<f64>, opts: &OptimizeOptions) -> Vec<bool> {
    x.iter()
        .zip(g.iter())
        .map(|(&xi, &gi)| (xi <= opts.lower && gi > 0.0) || (xi >= opts.upper && gi < 0.0))
        .collect()
}

fn masked(v: &DVector<f64>, active: &[bool]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().zip(active).map(|(&x, &a)| if a { 0.0 } else { x }))
}

/// Two-loop recursion restricted to the free variables.
fn lbfgs_direction(g: &DVector<f64>, active: &[bool], memory: &VecDeque<(DVector<f64>, DVector<f64>)>) -> DVector<f64> {
    let mut q = masked(g, active);
    let pairs: Vec<(DVector<f64>, DVector<f64>, f64)> = memory
        .iter()
        .filter_map(|(s, y)| {
            let (s, y) = (masked(s, active), masked(y, active));
            let sy = s.dot(&y);
            (sy > 1e-12 * s.norm() * y.norm()).then(|| (s, y, 1.0 / sy))
        })
        .collect();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.last() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}

/// Minimize `f` over the box from `d0`; `f` returns the value and gradient.
pub fn minimize<F>(mut f: F, d0: &DVector<f64>, opts: &OptimizeOptions) -> Result<OptimizeResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    opts.validate()?;
    if d0.iter().any(|&v| !(opts.lower..=opts.upper).contains(&v)) {
        return Err(Error::Argument("initial design violates the bounds".into()));
    }
    let mut x = d0.clone();
    let (mut fx, mut g) = f(&x)?;
    let mut memory: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::with_capacity(opts.memory);
    let mut result = OptimizeResult {
        d_opt: x.clone(),
        j_history: vec![fx],
        grad_norm_history: Vec::new(),
        log: Vec::new(),
        status: OptimizeStatus::MaxIters,
        iterations: 0,
    };
    let mut last_step = 0.0;
    for iter in 0..=opts.max_iters {
        let pg_norm = (project(&(&x - &g), opts.lower, opts.upper) - &x).norm();
        let active = active_mask(&x, &g, opts);
        let n_active = active.iter().filter(|&&a| a).count();
        result.grad_norm_history.push(pg_norm);
        result.log.push(IterationRecord {
            iter,
            j: fx,
            grad_norm: pg_norm,
            step_length: last_step,
            n_active_bounds: n_active,
        });
        debug!("iter {iter}: J = {fx:.10e}, |pg| = {pg_norm:.3e}, active = {n_active}");
        if pg_norm <= opts.grad_tol * (1.0 + fx.abs()) {
            result.status = OptimizeStatus::Converged;
            break;
        }
        if iter == opts.max_iters {
            break;
        }

        let mut p = lbfgs_direction(&g, &active, &memory);
        if p.dot(&g) >= 0.0 {
            memory.clear();
            p = -masked(&g, &active);
        }
        let mut alpha = if memory.is_empty() { (1.0 / p.amax()).min(1.0) } else { 1.0 };
        let mut accepted = None;
        let mut negligible = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial = project(&(&x + &p * alpha), opts.lower, opts.upper);
            let step = &trial - &x;
            if step.amax() < opts.step_tol {
                negligible = true;
                break;
            }
            let (ft, gt) = f(&trial)?;
            if ft.is_finite() && ft <= fx + ARMIJO_C1 * g.dot(&step) {
                accepted = Some((trial, ft, gt, step));
                break;
            }
            alpha *= BACKTRACK;
        }
        let Some((trial, ft, gt, step)) = accepted else {
            // a step shrunk below the step tolerance means no further progress is resolvable
            result.status = if negligible {
                OptimizeStatus::Converged
            } else {
                OptimizeStatus::LineSearchFailure
            };
            break;
        };
        let y = &gt - &g;
        if memory.len() == opts.memory {
            memory.pop_front();
        }
        memory.push_back((step.clone(), y));
        last_step = step.norm();
        x = trial;
        fx = ft;
        g = gt;
        result.iterations = iter + 1;
        result.j_history.push(fx);
        if step.amax() < opts.step_tol {
            result.status = OptimizeStatus::Converged;
            break;
        }
    }
    result.d_opt = x;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(target: f64) -> impl FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)> {
        move |d: &DVector<f64>| {
            let r = d.add_scalar(-target);
            Ok((r.norm_squared(), r * 2.0))
        }
    }

    #[test]
    fn projection_clamps_and_is_idempotent() {
        let d = DVector::from_vec(vec![-0.3, 0.7, 1.4]);
        let p = project_box(&d);
        assert_eq!(p.as_slice(), &[0.0, 0.7, 1.0]);
        assert_eq!(project_box(&p), p);
    }

    #[test]
    fn unconstrained_bowl() {
        let r = minimize(bowl(0.5), &DVector::zeros(8), &OptimizeOptions::default()).unwrap();
        assert_eq!(r.status, OptimizeStatus::Converged);
        assert!(r.iterations <= 30);
        assert!(r.d_opt.iter().all(|&v| (v - 0.5).abs() <= 1e-6));
    }

    #[test]
    fn bowl_beyond_bound_stops_at_bound() {
        let r = minimize(bowl(1.5), &DVector::zeros(5), &OptimizeOptions::default()).unwrap();
        assert_eq!(r.status, OptimizeStatus::Converged);
        assert!(r.d_opt.iter().all(|&v| v == 1.0));
        assert_eq!(r.log.last().unwrap().n_active_bounds, 5);
    }

    #[test]
    fn rejects_infeasible_start() {
        assert!(minimize(bowl(0.5), &DVector::from_element(2, 2.0), &OptimizeOptions::default()).is_err());
    }

    #[test]
    fn callback_errors_propagate() {
        let f = |_: &DVector<f64>| -> Result<(f64, DVector<f64>)> { Err(Error::Internal("boom".into())) };
        assert!(minimize(f, &DVector::zeros(2), &OptimizeOptions::default()).is_err());
    }
}
