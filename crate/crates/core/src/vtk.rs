//! Legacy-VTK ASCII export of nodal fields.

use std::io::{self, Write};

use nalgebra::DVector;

use crate::mesh::Mesh;

/// A named point field: one value or one 2D vector per vertex.
#[derive(Debug, Clone, Copy)]
pub enum PointData<'a> {
    Scalar(&'a str, &'a DVector<f64>),
    Vector(&'a str, [&'a DVector<f64>; 2]),
}

impl PointData<'_> {
    fn len(&self) -> usize {
        match self {
            PointData::Scalar(_, v) => v.len(),
            PointData::Vector(_, [x, y]) => x.len().min(y.len()),
        }
    }
}

/// Write `mesh` as an unstructured grid of triangles with double-precision
/// point data.
pub fn write_vtk<W: Write>(out: &mut W, mesh: &Mesh, title: &str, fields: &[PointData<'_>]) -> io::Result<()> {
    let n = mesh.n_vertices();
    if let Some(f) = fields.iter().find(|f| f.len() != n) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("field has {} values for {n} vertices", f.len()),
        ));
    }
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {n} double")?;
    for p in mesh.vertices() {
        writeln!(out, "{:e} {:e} 0", p[0], p[1])?;
    }
    let nt = mesh.n_triangles();
    writeln!(out, "CELLS {nt} {}", 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(out, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(out, "5")?;
    }
    if fields.is_empty() {
        return Ok(());
    }
    writeln!(out, "POINT_DATA {n}")?;
    for field in fields {
        match field {
            PointData::Scalar(name, v) => {
                writeln!(out, "SCALARS {name} double 1")?;
                writeln!(out, "LOOKUP_TABLE default")?;
                for x in v.iter() {
                    writeln!(out, "{x:e}")?;
                }
            }
            PointData::Vector(name, [vx, vy]) => {
                writeln!(out, "VECTORS {name} double")?;
                for (x, y) in vx.iter().zip(vy.iter()) {
                    writeln!(out, "{x:e} {y:e} 0")?;
                }
            }
        }
    }
    Ok(())
}
