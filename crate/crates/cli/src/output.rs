//! File writers shared by the drivers.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::CliError;
use duu_core::mesh::Mesh;
use duu_core::vtk::{write_vtk, PointData};

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn vtk_file(path: &Path, mesh: &Mesh, title: &str, fields: &[PointData<'_>]) -> Result<PathBuf, CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_vtk(&mut out, mesh, title, fields)?;
    out.flush()?;
    Ok(path.to_path_buf())
}

/// Write a CSV table; the header is written even when there are no rows.
pub fn csv_file(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

/// Shortest round-trip formatting, so re-runs compare bitwise.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}
