//! P1 finite-element assembly on triangles.
//!
//! Coefficient fields are nodal and evaluated at the element centroid for
//! interior integrals. Boundary integrals of products of P1 functions
//! (including a P1 weight) are integrated exactly.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, FactoredMatrix, Triplets};
use crate::mesh::{BoundaryFacet, BoundaryTag, Mesh};

/// Symmetric 2×2 tensor `[[a, b], [b, c]]`.
pub type Tensor2 = [[f64; 2]; 2];

pub const IDENTITY: Tensor2 = [[1.0, 0.0], [0.0, 1.0]];

/// Piecewise-linear scalar field: one value per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    values: DVector<f64>,
}

impl NodalField {
    pub fn new(mesh: &Mesh, values: DVector<f64>) -> Result<Self> {
        if values.len() != mesh.n_vertices() {
            return Err(Error::Argument(format!(
                "field has {} values but the mesh has {} vertices",
                values.len(),
                mesh.n_vertices()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite field value at node {i}")));
        }
        Ok(Self { values })
    }

    pub(crate) fn from_values_unchecked(values: DVector<f64>) -> Self {
        Self { values }
    }

    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        Self {
            values: DVector::from_element(mesh.n_vertices(), value),
        }
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            values: DVector::from_iterator(mesh.n_vertices(), mesh.vertices().iter().map(|p| f(p[0], p[1]))),
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.map(f),
        }
    }
}

impl std::ops::Index<usize> for NodalField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Reference P1 mass matrix on a triangle of unit area.
pub(crate) const MASS_REF: [[f64; 3]; 3] = [
    [2.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0],
    [1.0 / 12.0, 2.0 / 12.0, 1.0 / 12.0],
    [1.0 / 12.0, 1.0 / 12.0, 2.0 / 12.0],
];

/// Consistent mass matrix `M_ij = ∫ φ_i φ_j`.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let n = mesh.n_vertices();
    let mut t = Triplets::with_capacity(n, n, 9 * mesh.n_triangles());
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(k);
        for a in 0..3 {
            for b in 0..3 {
                t.push(tri[a], tri[b], area * MASS_REF[a][b]);
            }
        }
    }
    t.to_csr()
}

/// Row-sum lumped mass.
pub fn lumped_mass(mesh: &Mesh) -> DVector<f64> {
    let mut m = DVector::zeros(mesh.n_vertices());
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let third = mesh.triangle_area(k) / 3.0;
        for &v in tri {
            m[v] += third;
        }
    }
    m
}

/// Local anisotropic stiffness `A·(Θ∇φ_b)·∇φ_a` for unit coefficient.
pub(crate) fn local_stiffness(mesh: &Mesh, k: usize, theta: &Tensor2) -> [[f64; 3]; 3] {
    let g = mesh.basis_gradients(k);
    let area = mesh.triangle_area(k);
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let tg = [
                theta[0][0] * g[b][0] + theta[0][1] * g[b][1],
                theta[1][0] * g[b][0] + theta[1][1] * g[b][1],
            ];
            out[a][b] = area * (tg[0] * g[a][0] + tg[1] * g[a][1]);
        }
    }
    out
}

pub fn check_spd_tensor(theta: &Tensor2) -> Result<()> {
    let sym = (theta[0][1] - theta[1][0]).abs() <= 1e-14 * (theta[0][1].abs() + theta[1][0].abs() + 1.0);
    let det = theta[0][0] * theta[1][1] - theta[0][1] * theta[1][0];
    if !sym || !(theta[0][0] > 0.0) || !(det > 0.0) {
        return Err(Error::Argument(format!("tensor {theta:?} is not symmetric positive-definite")));
    }
    Ok(())
}

/// `K_ij = ∫ c(x) (Θ∇φ_j)·∇φ_i` with `c` evaluated at element centroids.
pub fn assemble_weighted_stiffness(mesh: &Mesh, coeff: &NodalField, aniso: Option<&Tensor2>) -> Result<CsrMatrix> {
    if coeff.len() != mesh.n_vertices() {
        return Err(Error::Argument("coefficient length does not match the mesh".into()));
    }
    if let Some(i) = coeff.values().iter().position(|&c| !(c > 0.0)) {
        return Err(Error::CoefficientRange(format!(
            "stiffness coefficient {} at node {i} is not strictly positive",
            coeff[i]
        )));
    }
    let theta = aniso.copied().unwrap_or(IDENTITY);
    check_spd_tensor(&theta)?;
    let n = mesh.n_vertices();
    let mut t = Triplets::with_capacity(n, n, 9 * mesh.n_triangles());
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let c = (coeff[tri[0]] + coeff[tri[1]] + coeff[tri[2]]) / 3.0;
        let local = local_stiffness(mesh, k, &theta);
        for a in 0..3 {
            for b in 0..3 {
                t.push(tri[a], tri[b], c * local[a][b]);
            }
        }
    }
    Ok(t.to_csr())
}

/// `∫_e λ_w φ_i φ_j` on an edge of length `len`, where `λ_w` is the hat
/// function of endpoint `w` and `i, j` index the two endpoints.
pub(crate) fn edge_triple(len: f64, w: usize) -> [[f64; 2]; 2] {
    if w == 0 {
        [[3.0 * len / 12.0, len / 12.0], [len / 12.0, len / 12.0]]
    } else {
        [[len / 12.0, len / 12.0], [len / 12.0, 3.0 * len / 12.0]]
    }
}

/// `∫_e λ_w φ_i` on an edge.
pub(crate) fn edge_pair(len: f64, w: usize) -> [f64; 2] {
    if w == 0 {
        [len / 3.0, len / 6.0]
    } else {
        [len / 6.0, len / 3.0]
    }
}

/// Facets selected by `tag` (`None` selects the whole boundary).
pub(crate) fn select_facets(mesh: &Mesh, tag: Option<BoundaryTag>) -> impl Iterator<Item = &BoundaryFacet> {
    mesh.boundary().iter().filter(move |f| tag.is_none_or(|t| f.tag == t))
}

/// Robin boundary matrix `B_ij = ∫_Γ c·w φ_i φ_j` and load `g_i = ∫_Γ c·w·T_amb φ_i`
/// over the facets carrying `tag` (`None`: entire boundary).
pub fn assemble_robin(
    mesh: &Mesh,
    tag: Option<BoundaryTag>,
    weight: &NodalField,
    coefficient: f64,
    ambient: f64,
) -> Result<(CsrMatrix, DVector<f64>)> {
    if !(coefficient >= 0.0) {
        return Err(Error::Argument(format!("Robin coefficient must be nonnegative, got {coefficient}")));
    }
    if let Some(t) = tag {
        if mesh.facets_with(t).next().is_none() {
            return Err(Error::Argument(format!("mesh has no facets tagged {t:?}")));
        }
    }
    let n = mesh.n_vertices();
    let mut t = Triplets::new(n, n);
    let mut g = DVector::zeros(n);
    for f in select_facets(mesh, tag) {
        let len = mesh.facet_length(f);
        for w in 0..2 {
            let cw = coefficient * weight[f.nodes[w]];
            let local = edge_triple(len, w);
            let load = edge_pair(len, w);
            for i in 0..2 {
                g[f.nodes[i]] += cw * ambient * load[i];
                for j in 0..2 {
                    t.push(f.nodes[i], f.nodes[j], cw * local[i][j]);
                }
            }
        }
    }
    Ok((t.to_csr(), g))
}

/// Solve a symmetric positive-definite system to the global residual tolerance.
pub fn solve_spd(a: &CsrMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    FactoredMatrix::spd(a.clone())?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn ones(n: usize) -> DVector<f64> {
        DVector::from_element(n, 1.0)
    }

    #[test]
    fn mass_integrates_area() {
        let sq = Mesh::unit_square(5, 3).unwrap();
        let m = assemble_mass(&sq);
        let one = ones(sq.n_vertices());
        assert!((m.bilinear(&one, &one) - 1.0).abs() < 1e-12);
        let l = Mesh::lshape(0.125).unwrap();
        let one = ones(l.n_vertices());
        assert!((assemble_mass(&l).bilinear(&one, &one) - 0.75).abs() < 1e-12);
        assert!((lumped_mass(&l).sum() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mass_is_spd_on_small_square() {
        let m = assemble_mass(&Mesh::unit_square(2, 2).unwrap());
        assert!(m.symmetry_defect() < 1e-12);
        let eig = m.to_dense().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn stiffness_kills_constants_and_is_linear() {
        let mesh = Mesh::lshape(0.25).unwrap();
        let c = NodalField::from_fn(&mesh, |x, y| 1.0 + x + 2.0 * y);
        let theta = [[2.0, 0.3], [0.3, 1.0]];
        let k = assemble_weighted_stiffness(&mesh, &c, Some(&theta)).unwrap();
        assert!(k.mul_vec(&ones(mesh.n_vertices())).amax() < 1e-12);
        assert!(k.symmetry_defect() < 1e-12);
        let k2 = assemble_weighted_stiffness(&mesh, &c.map(|v| 2.0 * v), Some(&theta)).unwrap();
        assert!(k2.add(1.0, &k, -2.0).frobenius_norm() < 1e-12 * k.frobenius_norm());
    }

    #[test]
    fn stiffness_energy_of_linear_function() {
        let mesh = Mesh::unit_square(16, 16).unwrap();
        let k = assemble_weighted_stiffness(&mesh, &NodalField::constant(&mesh, 1.0), None).unwrap();
        let u = NodalField::from_fn(&mesh, |x, _| x).into_values();
        assert!((k.bilinear(&u, &u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_rejects_nonpositive_coefficient() {
        let mesh = Mesh::unit_square(2, 2).unwrap();
        let mut v = DVector::from_element(9, 1.0);
        v[4] = 0.0;
        let c = NodalField::new(&mesh, v).unwrap();
        assert!(matches!(
            assemble_weighted_stiffness(&mesh, &c, None),
            Err(Error::CoefficientRange(_))
        ));
    }

    #[test]
    fn robin_boundary_lengths() {
        let sq = Mesh::unit_square(4, 4).unwrap();
        let w = NodalField::constant(&sq, 1.0);
        let (b, g) = assemble_robin(&sq, Some(BoundaryTag::Outer), &w, 1.0, 0.0).unwrap();
        let one = ones(sq.n_vertices());
        assert!((b.bilinear(&one, &one) - 4.0).abs() < 1e-12);
        assert_eq!(g.amax(), 0.0);

        let l = Mesh::lshape(0.25).unwrap();
        let w = NodalField::constant(&l, 1.0);
        let (b, _) = assemble_robin(&l, Some(BoundaryTag::Inner), &w, 1.0, 0.0).unwrap();
        let one = ones(l.n_vertices());
        assert!((b.bilinear(&one, &one) - 1.0).abs() < 1e-12);
        assert!(assemble_robin(&sq, Some(BoundaryTag::Inner), &NodalField::constant(&sq, 1.0), 1.0, 0.0).is_err());
        assert!(assemble_robin(&sq, None, &NodalField::constant(&sq, 1.0), -1.0, 0.0).is_err());
    }

    #[test]
    fn robin_constant_ambient_is_equilibrium() {
        let l = Mesh::lshape(0.25).unwrap();
        let w = NodalField::from_fn(&l, |x, y| 0.2 + 0.5 * x * y);
        let t0 = 293.0;
        let (b, g) = assemble_robin(&l, Some(BoundaryTag::Outer), &w, 15.0, t0).unwrap();
        let r = b.mul_vec(&DVector::from_element(l.n_vertices(), t0)) - g;
        assert!(r.amax() < 1e-12 * t0 * 15.0);
    }

    #[test]
    fn robin_weighted_edge_integral_is_exact() {
        // ∫_0^1 w(x) u(x) v(x) dx on the bottom edge with w = 1 + x, u = v = x.
        let sq = Mesh::unit_square(1, 1).unwrap();
        let w = NodalField::from_fn(&sq, |x, y| if y == 0.0 { 1.0 + x } else { 0.0 });
        let (b, _) = assemble_robin(&sq, None, &w, 1.0, 0.0).unwrap();
        let u = NodalField::from_fn(&sq, |x, y| if y == 0.0 { x } else { 0.0 }).into_values();
        // ∫ (1+x) x² dx = 1/3 + 1/4; other edges contribute through the vertex (1,0).
        let bottom_only: f64 = 1.0 / 3.0 + 0.25;
        // right edge (x=1, y∈[0,1]): w = 2(1−y)... weight is P1 with w(1,0)=2, w(1,1)=0;
        // u = (1−y) there, so ∫ 2(1−y)(1−y)² dy = 1/2.
        assert!((b.bilinear(&u, &u) - (bottom_only + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn solve_spd_examples() {
        let mesh = Mesh::lshape(0.125).unwrap();
        let m = assemble_mass(&mesh);
        let one = ones(mesh.n_vertices());
        let x = solve_spd(&m, &m.mul_vec(&one)).unwrap();
        assert!((x - &one).amax() < 1e-9);
        let z = solve_spd(&m, &DVector::zeros(mesh.n_vertices())).unwrap();
        assert_eq!(z.amax(), 0.0);
    }

    #[test]
    fn solve_spd_random_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let b = DMatrix::from_fn(10, 10, |_, _| rng.random_range(-1.0..1.0));
        let a = &b * b.transpose() + DMatrix::identity(10, 10);
        let mut t = Triplets::new(10, 10);
        for i in 0..10 {
            for j in 0..10 {
                t.push(i, j, a[(i, j)]);
            }
        }
        let rhs = DVector::from_fn(10, |i, _| i as f64 - 4.5);
        let x = solve_spd(&t.to_csr(), &rhs).unwrap();
        let xd = a.cholesky().unwrap().solve(&rhs);
        assert!((x - xd).amax() < 1e-8);
    }

    #[test]
    fn solve_spd_reports_indefinite() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 1, 2.0);
        t.push(1, 0, 2.0);
        t.push(1, 1, 1.0);
        assert!(matches!(
            solve_spd(&t.to_csr(), &DVector::from_element(2, 1.0)),
            Err(Error::Solver { .. })
        ));
    }
}
