#![allow(dead_code)]

use duu_core::mesh::Mesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Degree-4 symmetric rule on the reference triangle: (barycentric, weight).
pub const TRI_RULE: [([f64; 3], f64); 6] = [
    ([0.108103018168070, 0.445948490915965, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.108103018168070, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.445948490915965, 0.108103018168070], 0.223381589678011),
    ([0.816847572980459, 0.091576213509771, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.816847572980459, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.091576213509771, 0.816847572980459], 0.109951743655322),
];

/// Two-point Gauss rule on [0, 1]: (parameter, weight).
pub const EDGE_RULE: [(f64, f64); 2] = [(0.211324865405187, 0.5), (0.788675134594813, 0.5)];

/// Visit every quadrature point: `f(triangle nodes, barycentric, point, weight·area)`.
pub fn for_each_point(mesh: &Mesh, mut f: impl FnMut(&[usize; 3], &[f64; 3], [f64; 2], f64)) {
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.triangle_points(k);
        let area = mesh.triangle_area(k);
        for (bary, w) in TRI_RULE {
            let x = [
                bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
                bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
            ];
            f(tri, &bary, x, w * area);
        }
    }
}

/// `∫ f φ_i` for every node.
pub fn load_vector(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_vertices()];
    for_each_point(mesh, |tri, bary, x, w| {
        let v = f(x[0], x[1]);
        for a in 0..3 {
            out[tri[a]] += w * v * bary[a];
        }
    });
    out
}

/// `‖u_h − u‖_{L²}` for a nodal P1 field.
pub fn l2_error(mesh: &Mesh, nodal: &[f64], exact: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = 0.0;
    for_each_point(mesh, |tri, bary, x, w| {
        let uh: f64 = (0..3).map(|a| bary[a] * nodal[tri[a]]).sum();
        acc += w * (uh - exact(x[0], x[1])).powi(2);
    });
    acc.sqrt()
}

/// Least-squares slope of `log e` against `log h`.
pub fn convergence_rate(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = h.iter().zip(e).map(|(h, e)| (h.ln(), e.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Deterministic uniform vector in [-1, 1].
pub fn random_vector(n: usize, seed: u64) -> nalgebra::DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    nalgebra::DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0))
}
