//! Structured triangular meshes of the unit square and the L-shaped component.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Node budget for the builders; anything larger is refused.
pub const MAX_VERTICES: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// Hot convection and traction load.
    Outer,
    /// Cold convection and clamped displacement.
    Inner,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFacet {
    /// Endpoints ordered so that the domain lies to the left.
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryFacet>,
}

/// Edge key with sorted endpoints.
fn edge(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl Mesh {
    /// Build from raw parts, orienting triangles counterclockwise and
    /// recovering boundary facets with `tagger` deciding each facet's tag.
    pub fn from_triangles(
        vertices: Vec<[f64; 2]>,
        mut triangles: Vec<[usize; 3]>,
        tagger: impl Fn([f64; 2], [f64; 2]) -> BoundaryTag,
    ) -> Result<Self> {
        for t in triangles.iter_mut() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Argument(format!("triangle {t:?} references a missing vertex")));
            }
            if signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
        }
        let mut count: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let entry = count.entry(edge(a, b)).or_insert((0, [a, b]));
                entry.0 += 1;
            }
        }
        let mut boundary: Vec<BoundaryFacet> = count
            .into_values()
            .filter(|(c, _)| *c == 1)
            .map(|(_, nodes)| BoundaryFacet {
                nodes,
                tag: tagger(vertices[nodes[0]], vertices[nodes[1]]),
            })
            .collect();
        boundary.sort_by_key(|f| edge(f.nodes[0], f.nodes[1]));
        let mesh = Mesh {
            vertices,
            triangles,
            boundary,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Structured triangulation of `[0,1]²`; every boundary facet is `Outer`.
    pub fn unit_square(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Argument(format!("cell counts must be positive, got ({nx}, {ny})")));
        }
        if (nx + 1).saturating_mul(ny + 1) > MAX_VERTICES {
            return Err(Error::Resource(format!("{nx}x{ny} grid exceeds the node budget")));
        }
        let idx = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([i as f64 / nx as f64, j as f64 / ny as f64]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        Self::from_triangles(vertices, triangles, |_, _| BoundaryTag::Outer)
    }

    /// L-shaped component `[0,1]² \ (0.5,1]×(0.5,1]` with target edge length `h`.
    /// The two re-entrant edges are tagged `Inner`, the rest `Outer`.
    pub fn lshape(h: f64) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::Argument(format!("edge length must lie in (0, 1), got {h}")));
        }
        let half = (0.5 / h).ceil();
        if !(half.is_finite()) || (2.0 * half + 1.0).powi(2) > MAX_VERTICES as f64 {
            return Err(Error::Resource(format!("h = {h} exceeds the node budget")));
        }
        let n = half as usize;
        let m = 2 * n;
        let keep_cell = |i: usize, j: usize| !(i >= n && j >= n);
        let mut index = vec![usize::MAX; (m + 1) * (m + 1)];
        let mut vertices = Vec::new();
        for j in 0..=m {
            for i in 0..=m {
                if !(i > n && j > n) {
                    index[j * (m + 1) + i] = vertices.len();
                    vertices.push([i as f64 / m as f64, j as f64 / m as f64]);
                }
            }
        }
        let id = |i: usize, j: usize| index[j * (m + 1) + i];
        let mut triangles = Vec::new();
        for j in 0..m {
            for i in 0..m {
                if keep_cell(i, j) {
                    let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                }
            }
        }
        let on_notch = |p: [f64; 2]| {
            let eps = 1e-12;
            ((p[0] - 0.5).abs() < eps && p[1] >= 0.5 - eps) || ((p[1] - 0.5).abs() < eps && p[0] >= 0.5 - eps)
        };
        Self::from_triangles(vertices, triangles, |p, q| {
            let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
            if on_notch(p) && on_notch(q) && on_notch(mid) {
                BoundaryTag::Inner
            } else {
                BoundaryTag::Outer
            }
        })
    }

    /// Split every triangle into four congruent children.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let nv = self.vertices.len() + self.edges().len();
        if nv > MAX_VERTICES {
            return Err(Error::Resource(format!("refinement to {nv} vertices exceeds the node budget")));
        }
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
            *midpoint.entry(edge(a, b)).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            triangles.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        let mut boundary = Vec::with_capacity(2 * self.boundary.len());
        for f in &self.boundary {
            let m = mid(f.nodes[0], f.nodes[1], &mut vertices);
            boundary.push(BoundaryFacet {
                nodes: [f.nodes[0], m],
                tag: f.tag,
            });
            boundary.push(BoundaryFacet {
                nodes: [m, f.nodes[1]],
                tag: f.tag,
            });
        }
        let mesh = Mesh {
            vertices,
            triangles,
            boundary,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        for (k, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::Argument(format!("triangle {k} has an out-of-range vertex")));
            }
            if self.triangle_area(k) <= 0.0 {
                return Err(Error::Argument(format!("triangle {k} has nonpositive area")));
            }
        }
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *count.entry(edge(t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        let boundary_edges = count.values().filter(|&&c| c == 1).count();
        if boundary_edges != self.boundary.len() {
            return Err(Error::Argument(format!(
                "{} boundary edges but {} tagged facets",
                boundary_edges,
                self.boundary.len()
            )));
        }
        for f in &self.boundary {
            if f.nodes.iter().any(|&v| v >= nv) {
                return Err(Error::Argument("facet has an out-of-range vertex".into()));
            }
            if count.get(&edge(f.nodes[0], f.nodes[1])) != Some(&1) {
                return Err(Error::Argument(format!("facet {:?} is not a boundary edge", f.nodes)));
            }
        }
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    pub fn facets_with(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryFacet> {
        self.boundary.iter().filter(move |f| f.tag == tag)
    }

    pub fn triangle_points(&self, k: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[k];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn triangle_area(&self, k: usize) -> f64 {
        let [p, q, r] = self.triangle_points(k);
        signed_area(p, q, r)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|k| self.triangle_area(k)).sum()
    }

    pub fn facet_length(&self, f: &BoundaryFacet) -> f64 {
        let (p, q) = (self.vertices[f.nodes[0]], self.vertices[f.nodes[1]]);
        ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt()
    }

    pub fn boundary_length(&self, tag: Option<BoundaryTag>) -> f64 {
        self.boundary
            .iter()
            .filter(|f| tag.is_none_or(|t| f.tag == t))
            .map(|f| self.facet_length(f))
            .sum()
    }

    /// All distinct edges, endpoints sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| edge(t[k], t[(k + 1) % 3])))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges()
            .into_iter()
            .map(|(a, b)| {
                let (p, q) = (self.vertices[a], self.vertices[b]);
                ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Vertices touched by facets with `tag`, sorted.
    pub fn boundary_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut v: Vec<usize> = self.facets_with(tag).flat_map(|f| f.nodes).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Gradients of the three P1 hat functions on triangle `k` (constant per element).
    pub fn basis_gradients(&self, k: usize) -> [[f64; 2]; 3] {
        let [p0, p1, p2] = self.triangle_points(k);
        let two_a = 2.0 * signed_area(p0, p1, p2);
        [
            [(p1[1] - p2[1]) / two_a, (p2[0] - p1[0]) / two_a],
            [(p2[1] - p0[1]) / two_a, (p0[0] - p2[0]) / two_a],
            [(p0[1] - p1[1]) / two_a, (p1[0] - p0[0]) / two_a],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euler(mesh: &Mesh) -> i64 {
        mesh.n_vertices() as i64 - mesh.edges().len() as i64 + mesh.n_triangles() as i64
    }

    #[test]
    fn unit_square_counts() {
        let m = Mesh::unit_square(1, 1).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (4, 2));
        let m = Mesh::unit_square(2, 2).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (9, 8));
        let m = Mesh::unit_square(3, 5).unwrap();
        assert_eq!((m.n_vertices(), m.n_triangles()), (24, 30));
        assert!(m.boundary().iter().all(|f| f.tag == BoundaryTag::Outer));
    }

    #[test]
    fn unit_square_area() {
        let m = Mesh::unit_square(4, 4).unwrap();
        assert!((m.total_area() - 1.0).abs() < 1e-12);
        assert!((m.boundary_length(None) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_counts_rejected() {
        assert!(matches!(Mesh::unit_square(0, 3), Err(Error::Argument(_))));
        assert!(matches!(Mesh::lshape(0.0), Err(Error::Argument(_))));
        assert!(matches!(Mesh::lshape(1.0), Err(Error::Argument(_))));
        assert!(matches!(Mesh::lshape(1e-5), Err(Error::Resource(_))));
    }

    #[test]
    fn lshape_geometry() {
        let m = Mesh::lshape(0.5).unwrap();
        assert!((m.total_area() - 0.75).abs() < 1e-12);
        let m = Mesh::lshape(0.25).unwrap();
        assert!((m.boundary_length(Some(BoundaryTag::Inner)) - 1.0).abs() < 1e-12);
        assert!((m.boundary_length(Some(BoundaryTag::Outer)) - 3.0).abs() < 1e-12);
        assert!(m.max_edge_length() <= 1.5 * 0.25 + 1e-12);
        let tags: std::collections::HashSet<_> = m.boundary().iter().map(|f| f.tag).collect();
        assert_eq!(tags.len(), 2);
    }

    #[test]
    fn lshape_resolution_scaling() {
        let coarse = Mesh::lshape(0.25).unwrap().n_triangles();
        let fine = Mesh::lshape(0.125).unwrap().n_triangles();
        assert!(fine >= 2 * coarse && fine <= 4 * coarse, "{coarse} -> {fine}");
    }

    #[test]
    fn lshape_edge_length_bound_for_awkward_h() {
        for h in [0.3, 0.17, 0.09] {
            let m = Mesh::lshape(h).unwrap();
            assert!(m.max_edge_length() <= 1.5 * h + 1e-12, "h = {h}");
            assert!((m.total_area() - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn refinement_preserves_area_and_tags() {
        let m = Mesh::unit_square(1, 1).unwrap().refine_uniform().unwrap();
        assert_eq!(m.n_triangles(), 8);
        let l = Mesh::lshape(0.25).unwrap();
        let r = l.refine_uniform().unwrap();
        assert_eq!(r.n_triangles(), 4 * l.n_triangles());
        assert!((r.total_area() - l.total_area()).abs() < 1e-12);
        assert!((r.boundary_length(Some(BoundaryTag::Inner)) - 1.0).abs() < 1e-12);
        assert!((r.boundary_length(None) - l.boundary_length(None)).abs() < 1e-12);
    }

    #[test]
    fn euler_characteristic_of_simply_connected_meshes() {
        for m in [
            Mesh::unit_square(3, 2).unwrap(),
            Mesh::lshape(0.25).unwrap(),
            Mesh::lshape(0.125).unwrap().refine_uniform().unwrap(),
        ] {
            assert_eq!(euler(&m), 1);
        }
    }

    #[test]
    fn orientation_is_counterclockwise() {
        let m = Mesh::from_triangles(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 2, 1]], |_, _| BoundaryTag::Outer).unwrap();
        assert!(m.triangle_area(0) > 0.0);
    }

    #[test]
    fn basis_gradients_sum_to_zero() {
        let m = Mesh::lshape(0.25).unwrap();
        for k in 0..m.n_triangles() {
            let g = m.basis_gradients(k);
            assert!((g[0][0] + g[1][0] + g[2][0]).abs() < 1e-12);
            assert!((g[0][1] + g[1][1] + g[2][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_partition() {
        let m = Mesh::lshape(0.125).unwrap();
        let total = m.boundary_length(None);
        let split = m.boundary_length(Some(BoundaryTag::Inner)) + m.boundary_length(Some(BoundaryTag::Outer));
        assert!((total - split).abs() < 1e-12);
    }
}
