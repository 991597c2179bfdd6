//! Two-temperature steady conduction with interphase exchange.
//!
//! Unknowns are `[T_s; T_f]` (solid block first). Each phase diffuses with
//! conductivity `φ_i κ_i`, the phases exchange heat through a lumped
//! mass-weighted `±h` coupling, and every tagged boundary carries convection
//! `φ_i κ_i ∇T_i·n = c_conv φ_i (T_amb − T_i)` with `T_amb` set by the tag.
//! Both the exchange and the boundary mass are lumped so that the discrete
//! operator satisfies a maximum principle on non-obtuse meshes.

use crate::affine::{AffineMatrix, AffineVector};
use crate::fem::{self, IDENTITY};
use crate::forward::{ModelParams, ParametricSystem};
use crate::mesh::{BoundaryTag, Mesh};

/// Which phase a block belongs to: the solid is weighted by `1 − φ_f`, the
/// fluid by `φ_f`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Phase {
    Solid,
    Fluid,
}

impl Phase {
    pub fn offset(self, n: usize) -> usize {
        match self {
            Phase::Solid => 0,
            Phase::Fluid => n,
        }
    }
}

/// Split `scale·Σ_i w(φ_i)·node_locals[i]` into constant and per-node
/// coefficient parts, with `w(φ) = φ` for the fluid and `1 − φ` for the solid.
fn phase_split(phase: Phase, scale: f64, nodes: &[usize], node_locals: &[Vec<f64>]) -> (Option<Vec<f64>>, Vec<(usize, Vec<f64>)>) {
    let coeffs: Vec<(usize, Vec<f64>)> = nodes
        .iter()
        .zip(node_locals)
        .map(|(&k, l)| {
            let sign = if phase == Phase::Solid { -scale } else { scale };
            (k, l.iter().map(|v| sign * v).collect())
        })
        .collect();
    let constant = if phase == Phase::Solid {
        let mut c = vec![0.0; node_locals[0].len()];
        for l in node_locals {
            for (ci, v) in c.iter_mut().zip(l) {
                *ci += scale * v;
            }
        }
        Some(c)
    } else {
        None
    };
    (constant, coeffs)
}

pub fn ambient(params: &ModelParams, tag: BoundaryTag) -> f64 {
    match tag {
        BoundaryTag::Outer => params.t_hot,
        BoundaryTag::Inner => params.t_cold,
    }
}

/// Assemble the affine thermal system over the fluid fraction `φ_f`.
pub fn build_system(mesh: &Mesh, params: &ModelParams) -> ParametricSystem {
    let n = mesh.n_vertices();
    let mut a = AffineMatrix::new(2 * n, 2 * n, n);
    let mut w = AffineMatrix::new(2 * n, 2 * n, n);
    let mut b = AffineVector::new(2 * n, n);
    let mut c = AffineVector::new(2 * n, n);

    for (k, tri) in mesh.triangles().iter().enumerate() {
        let local = fem::local_stiffness(mesh, k, &IDENTITY);
        let flat: Vec<f64> = local.iter().flatten().copied().collect();
        // centroid value: each node contributes 1/3
        let node_locals: Vec<Vec<f64>> = (0..3).map(|_| flat.iter().map(|v| v / 3.0).collect()).collect();
        for (phase, kappa) in [(Phase::Solid, params.kappa_s), (Phase::Fluid, params.kappa_f)] {
            let dofs: Vec<usize> = tri.iter().map(|&v| v + phase.offset(n)).collect();
            let (c0, cs) = phase_split(phase, kappa, tri, &node_locals);
            a.push_block(dofs.clone(), dofs.clone(), c0, cs);
            let (c0, cs) = phase_split(phase, kappa, tri, &node_locals);
            w.push_block(dofs.clone(), dofs, c0, cs);
        }
    }

    let lumped = fem::lumped_mass(mesh);
    for i in 0..n {
        let hm = params.h_exchange * lumped[i];
        a.push_block(vec![i, n + i], vec![i, n + i], Some(vec![hm, -hm, -hm, hm]), Vec::new());
    }

    for f in mesh.boundary() {
        let len = mesh.facet_length(f);
        let t_amb = ambient(params, f.tag);
        let loads: Vec<Vec<f64>> = (0..2).map(|wn| fem::edge_pair(len, wn).to_vec()).collect();
        // row-sum lumped boundary mass, keeping the operator an M-matrix
        let mats: Vec<Vec<f64>> = loads.iter().map(|l| vec![l[0], 0.0, 0.0, l[1]]).collect();
        for phase in [Phase::Solid, Phase::Fluid] {
            let dofs: Vec<usize> = f.nodes.iter().map(|&v| v + phase.offset(n)).collect();
            let (c0, cs) = phase_split(phase, params.conv_coeff, &f.nodes, &mats);
            a.push_block(dofs.clone(), dofs.clone(), c0, cs);
            let (c0, cs) = phase_split(phase, 1.0, &f.nodes, &mats);
            w.push_block(dofs.clone(), dofs.clone(), c0, cs);
            let (c0, cs) = phase_split(phase, params.conv_coeff * t_amb, &f.nodes, &loads);
            b.push_block(dofs.clone(), c0, cs);
            let (c0, cs) = phase_split(phase, t_amb, &f.nodes, &loads);
            c.push_block(dofs, c0, cs);
        }
    }

    ParametricSystem {
        operator: a,
        load: b,
        qoi_quadratic: w,
        qoi_linear: c,
        spd: true,
    }
}
