//! ASCII OBJ export of the reflector surface `{rho(x) x}`.
//!
//! Each `v` line is followed by `#atom k`, the winning atom of that vertex.
//! Faces follow the grid's subdivision triangles. Extra boundary nodes are
//! emitted as vertices without faces.

use std::fmt::Write as _;
use std::path::Path;

use lumen_core::envelope::assign_regions;
use lumen_core::{Reflector, SphericalGrid, Vec3};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjMesh {
    pub vertices: Vec<Vec3>,
    pub atoms: Vec<usize>,
    /// Zero-based vertex indices.
    pub faces: Vec<[usize; 3]>,
}

pub fn render_obj(r: &Reflector, grid: &SphericalGrid) -> String {
    let radii = r.radii(grid);
    let regions = assign_regions(r, grid);
    let mut out = String::new();
    let _ = writeln!(out, "# lumen reflector mesh");
    let _ = writeln!(out, "# vertices {} faces {}", grid.len(), grid.triangles().len());
    for ((x, rho), atom) in grid.nodes().iter().zip(&radii).zip(&regions.winners) {
        let p = x * *rho;
        let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
        let _ = writeln!(out, "#atom {atom}");
    }
    for t in grid.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn export_mesh(r: &Reflector, grid: &SphericalGrid, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, render_obj(r, grid)).map_err(|e| CliError::io(path, e))
}

/// Reads back what [`render_obj`] writes.
pub fn parse_obj(text: &str) -> Result<ObjMesh, CliError> {
    let bad = |n: usize, line: &str| CliError::Config(format!("obj line {}: cannot parse `{line}`", n + 1));
    let mut mesh = ObjMesh { vertices: Vec::new(), atoms: Vec::new(), faces: Vec::new() };
    for (n, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("#atom ") {
            mesh.atoms.push(rest.trim().parse().map_err(|_| bad(n, line))?);
        } else if let Some(rest) = line.strip_prefix("v ") {
            let c: Vec<f64> = rest.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| bad(n, line))?;
            if c.len() != 3 {
                return Err(bad(n, line));
            }
            mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
        } else if let Some(rest) = line.strip_prefix("f ") {
            let c: Vec<usize> = rest.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| bad(n, line))?;
            if c.len() != 3 || c.contains(&0) {
                return Err(bad(n, line));
            }
            mesh.faces.push([c[0] - 1, c[1] - 1, c[2] - 1]);
        }
    }
    if mesh.atoms.len() != mesh.vertices.len() {
        return Err(CliError::Config("obj: every vertex needs one #atom line".into()));
    }
    Ok(mesh)
}
