//! Legacy VTK export of nodal fields.
//!
//! Layout, one item per line, `\n` line endings:
//!
//! ```text
//! # vtk DataFile Version 3.0
//! <title>
//! ASCII
//! DATASET UNSTRUCTURED_GRID
//! POINTS <n_nodes> double
//! <x> <y> 0                          (n_nodes lines, node order)
//! CELLS <n_elements> <4 n_elements>
//! 3 <a> <b> <c>                      (n_elements lines, counter-clockwise)
//! CELL_TYPES <n_elements>
//! 5                                  (n_elements lines)
//! POINT_DATA <n_nodes>
//! SCALARS <name> double 1
//! LOOKUP_TABLE default
//! <value>                            (n_nodes lines)
//! ```
//!
//! Reals are written with Rust's shortest round-trip formatting, so reading
//! a file back recovers the values exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::FeFunction;
use crate::mesh::TriMesh;

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
        return Err(Error::Config(format!("field name '{name}' must be a nonempty word")));
    }
    Ok(())
}

/// Writes `field` on `mesh` to `out`.
pub fn write_field<W: Write>(out: &mut W, mesh: &TriMesh, field: &FeFunction, name: &str) -> Result<()> {
    check_name(name)?;
    if field.len() != mesh.n_nodes() {
        return Err(Error::Dimension(format!(
            "field has {} values, mesh has {} nodes",
            field.len(),
            mesh.n_nodes()
        )));
    }
    let title = name.replace('\n', " ");
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{title}")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.n_nodes())?;
    for p in mesh.nodes() {
        writeln!(out, "{:?} {:?} 0", p[0], p[1])?;
    }
    let ne = mesh.n_elements();
    writeln!(out, "CELLS {ne} {}", 4 * ne)?;
    for t in mesh.elements() {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(out, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(out, "5")?;
    }
    writeln!(out, "POINT_DATA {}", mesh.n_nodes())?;
    writeln!(out, "SCALARS {name} double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in &field.values {
        writeln!(out, "{v:?}")?;
    }
    Ok(())
}

/// Writes `field` to the file at `path`.
pub fn export_field(path: &Path, mesh: &TriMesh, field: &FeFunction, name: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, mesh, field, name)?;
    w.flush()?;
    Ok(())
}

/// Point coordinates, triangles and scalars read back from a file in the
/// layout above.
#[derive(Clone, Debug, PartialEq)]
pub struct VtkData {
    pub points: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub name: String,
    pub values: Vec<f64>,
}

pub fn read_field(text: &str) -> Result<VtkData> {
    let bad = |what: &str| Error::Config(format!("malformed VTK file: {what}"));
    let mut lines = text.lines();
    let mut next = || lines.next().ok_or_else(|| bad("unexpected end"));
    if !next()?.starts_with("# vtk DataFile") {
        return Err(bad("header"));
    }
    next()?;
    if next()? != "ASCII" || next()? != "DATASET UNSTRUCTURED_GRID" {
        return Err(bad("format"));
    }
    let count = |line: &str, key: &str| -> Result<usize> {
        line.strip_prefix(key)
            .and_then(|r| r.split_whitespace().next())
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad(key))
    };
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad("number"));
    let np = count(next()?, "POINTS ")?;
    let mut points = Vec::with_capacity(np);
    for _ in 0..np {
        let l = next()?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(bad("point"));
        }
        points.push([num(f[0])?, num(f[1])?]);
    }
    let nc = count(next()?, "CELLS ")?;
    let mut triangles = Vec::with_capacity(nc);
    for _ in 0..nc {
        let f: Vec<usize> = next()?.split_whitespace().map(|s| s.parse().map_err(|_| bad("cell"))).collect::<Result<_>>()?;
        if f.len() != 4 || f[0] != 3 {
            return Err(bad("cell"));
        }
        triangles.push([f[1], f[2], f[3]]);
    }
    if count(next()?, "CELL_TYPES ")? != nc {
        return Err(bad("cell types"));
    }
    for _ in 0..nc {
        if next()? != "5" {
            return Err(bad("cell type"));
        }
    }
    if count(next()?, "POINT_DATA ")? != np {
        return Err(bad("point data"));
    }
    let name = next()?
        .strip_prefix("SCALARS ")
        .and_then(|r| r.split_whitespace().next())
        .ok_or_else(|| bad("scalars"))?
        .to_string();
    next()?;
    let values = (0..np).map(|_| next().and_then(num)).collect::<Result<Vec<_>>>()?;
    Ok(VtkData { points, triangles, name, values })
}
