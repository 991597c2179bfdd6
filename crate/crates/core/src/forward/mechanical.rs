//! Plane-strain poroelastic response with an algebraic pressure.
//!
//! The pressure is carried as `π = C p` so both equation blocks have the
//! same scale. With `φ` the fluid fraction, the discrete system is
//!
//! ```text
//! a(u, v) + (1/C) ∫ π ∇·((2φ − 1) v) = −⟨t, v⟩_Outer
//! −(1/C) [∫ q ∇·u + ∫ π q]            = 0
//! ```
//!
//! where `a` is the plane-strain elastic form with `λ = K − μ`. All integrals
//! use the centroid rule except the pressure mass, which is exact.

use crate::affine::{AffineMatrix, AffineVector, ELIMINATED};
use crate::error::{Error, Result};
use crate::fem::MASS_REF;
use crate::forward::{ModelParams, ParametricSystem};
use crate::mesh::{BoundaryTag, Mesh};

/// Global numbering for `(u_x, u_y, π)` per node, with clamped
/// displacement components marked [`ELIMINATED`].
#[derive(Debug, Clone, PartialEq)]
pub struct MechanicalDofs {
    pub u: Vec<[usize; 2]>,
    pub pi: Vec<usize>,
    pub n_dofs: usize,
}

impl MechanicalDofs {
    pub fn new(n_nodes: usize, clamped: &[usize]) -> Self {
        let mut fixed = vec![false; n_nodes];
        for &c in clamped {
            fixed[c] = true;
        }
        let mut next = 0;
        let mut u = Vec::with_capacity(n_nodes);
        let mut pi = Vec::with_capacity(n_nodes);
        for &is_fixed in &fixed {
            let mut pair = [ELIMINATED; 2];
            if !is_fixed {
                pair = [next, next + 1];
                next += 2;
            }
            u.push(pair);
            pi.push(next);
            next += 1;
        }
        Self { u, pi, n_dofs: next }
    }

    /// Split a solution vector into `(u_x, u_y, π)` nodal arrays.
    pub fn scatter(&self, x: &nalgebra::DVector<f64>) -> [Vec<f64>; 3] {
        let get = |i: usize| if i == ELIMINATED { 0.0 } else { x[i] };
        [
            self.u.iter().map(|d| get(d[0])).collect(),
            self.u.iter().map(|d| get(d[1])).collect(),
            self.pi.iter().map(|&i| x[i]).collect(),
        ]
    }

    /// Inverse of [`scatter`](Self::scatter); clamped values are dropped.
    pub fn gather(&self, ux: &[f64], uy: &[f64], pi: &[f64]) -> nalgebra::DVector<f64> {
        let mut x = nalgebra::DVector::zeros(self.n_dofs);
        for (i, d) in self.u.iter().enumerate() {
            for (c, &dof) in d.iter().enumerate() {
                if dof != ELIMINATED {
                    x[dof] = if c == 0 { ux[i] } else { uy[i] };
                }
            }
            x[self.pi[i]] = pi[i];
        }
        x
    }
}

/// Plane-strain element stiffness for the local dof order
/// `(u_x¹, u_y¹, u_x², u_y², u_x³, u_y³)`, row-major.
pub fn element_elasticity(grads: &[[f64; 2]; 3], area: f64, lambda: f64, mu: f64) -> Vec<f64> {
    let strain = |a: usize, c: usize| -> [f64; 3] {
        let g = grads[a];
        if c == 0 {
            [g[0], 0.0, g[1]]
        } else {
            [0.0, g[1], g[0]]
        }
    };
    let mut k = vec![0.0; 36];
    for i in 0..6 {
        let ei = strain(i / 2, i % 2);
        for j in 0..6 {
            let ej = strain(j / 2, j % 2);
            let normal = (lambda + 2.0 * mu) * (ei[0] * ej[0] + ei[1] * ej[1]) + lambda * (ei[0] * ej[1] + ei[1] * ej[0]);
            k[i * 6 + j] = area * (normal + mu * ei[2] * ej[2]);
        }
    }
    k
}

/// Assemble the affine mechanical system with the given nodes clamped.
pub fn build_system(mesh: &Mesh, params: &ModelParams, clamped: &[usize]) -> Result<(ParametricSystem, MechanicalDofs)> {
    if clamped.is_empty() {
        return Err(Error::Constraint(
            "mechanical problem has no clamped nodes; the system is singular".into(),
        ));
    }
    let n = mesh.n_vertices();
    if let Some(&bad) = clamped.iter().find(|&&c| c >= n) {
        return Err(Error::Argument(format!("clamped node {bad} is out of range")));
    }
    let dofs = MechanicalDofs::new(n, clamped);
    let nd = dofs.n_dofs;
    let inv_c = 1.0 / params.c_compress;
    let (lambda, mu) = (params.lambda(), params.mu);

    let mut a = AffineMatrix::new(nd, nd, n);
    let mut w = AffineMatrix::new(nd, nd, n);
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let grads = mesh.basis_gradients(k);
        let area = mesh.triangle_area(k);
        let udofs: Vec<usize> = tri.iter().flat_map(|&v| dofs.u[v]).collect();
        let pdofs: Vec<usize> = tri.iter().map(|&v| dofs.pi[v]).collect();

        let kel = element_elasticity(&grads, area, lambda, mu);
        a.push_block(udofs.clone(), udofs.clone(), Some(kel.clone()), Vec::new());
        w.push_block(udofs.clone(), udofs.clone(), Some(kel), Vec::new());

        // (1/C) ∫ π [(2φ − 1) ∂_c N_a + 2 ∂_c φ N_a] at the centroid, where
        // every basis function equals 1/3
        let s = area * inv_c / 3.0;
        let mut constant = vec![0.0; 18];
        let mut coeffs: Vec<(usize, Vec<f64>)> = tri.iter().map(|&v| (v, vec![0.0; 18])).collect();
        for i in 0..6 {
            let (na, c) = (i / 2, i % 2);
            for b in 0..3 {
                let idx = i * 3 + b;
                constant[idx] = -s * grads[na][c];
                for (node, coeff) in coeffs.iter_mut().enumerate() {
                    coeff.1[idx] = s * (2.0 / 3.0) * (grads[na][c] + grads[node][c]);
                }
            }
        }
        a.push_block(udofs.clone(), pdofs.clone(), Some(constant), coeffs);

        // −(1/C) ∫ q ∇·u
        let mut div = vec![0.0; 18];
        for b in 0..3 {
            for j in 0..6 {
                div[b * 6 + j] = -inv_c * area * grads[j / 2][j % 2] / 3.0;
            }
        }
        a.push_block(pdofs.clone(), udofs, Some(div), Vec::new());

        // −(1/C) ∫ π q
        let mass: Vec<f64> = MASS_REF.iter().flatten().map(|m| -inv_c * area * m).collect();
        a.push_block(pdofs.clone(), pdofs, Some(mass), Vec::new());
    }

    let mut b = AffineVector::new(nd, n);
    let mut c = AffineVector::new(nd, n);
    for f in mesh.facets_with(BoundaryTag::Outer) {
        let half = 0.5 * mesh.facet_length(f);
        let rows: Vec<usize> = f.nodes.iter().flat_map(|&v| dofs.u[v]).collect();
        let work: Vec<f64> = (0..4).map(|i| half * params.traction[i % 2]).collect();
        b.push_block(rows.clone(), Some(work.iter().map(|v| -v).collect()), Vec::new());
        c.push_block(rows, Some(work), Vec::new());
    }

    let system = ParametricSystem {
        operator: a,
        load: b,
        qoi_quadratic: w,
        qoi_linear: c,
        spd: false,
    };
    Ok((system, dofs))
}
