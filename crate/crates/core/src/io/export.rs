//! Zero-contour polylines, VTK unstructured grids and design snapshots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::enrichment::{ElementPartition, EnrichedModel, Phase, VertexRef};
use crate::mesh::signed_area;
use crate::{Error, Result, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    ContourPolyline,
    UnstructuredGrid,
}

/// One segment per cut element, oriented with the material on its left.
pub fn contour_segments(model: &EnrichedModel) -> Vec<[Vec2; 2]> {
    let mesh = model.mesh();
    let phi = model.nodal_levelset();
    let mut out = Vec::new();
    for (e, part) in model.partitions().iter().enumerate() {
        let ElementPartition::Cut { enriched, .. } = part else {
            continue;
        };
        let a = model.enriched_nodes()[enriched[0]].location;
        let b = model.enriched_nodes()[enriched[1]].location;
        let solid = mesh.elements()[e]
            .iter()
            .copied()
            .max_by(|&i, &j| phi[i].total_cmp(&phi[j]))
            .expect("triangle");
        if signed_area(&a, &b, &mesh.node(solid)) >= 0.0 {
            out.push([a, b]);
        } else {
            out.push([b, a]);
        }
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Plain-text segment list, `x0 y0 x1 y1` per line.
pub fn write_contour(model: &EnrichedModel, path: &Path) -> Result<()> {
    let mut s = String::from("# x0 y0 x1 y1\n");
    for [a, b] in contour_segments(model) {
        writeln!(s, "{:.16e} {:.16e} {:.16e} {:.16e}", a.x, a.y, b.x, b.y).unwrap();
    }
    write_text(path, &s)
}

/// Legacy ASCII VTK grid. Uncut elements are written as they are, cut
/// elements are replaced by their integration elements. Cells carry the
/// material flag (1 material, 0 void) and the parent element index;
/// points carry the snapped levelset (zero at enriched nodes).
pub fn write_unstructured_grid(model: &EnrichedModel, path: &Path) -> Result<()> {
    let mesh = model.mesh();
    let n0 = mesh.num_nodes();
    let points: Vec<Vec2> = mesh
        .nodes()
        .iter()
        .copied()
        .chain(model.enriched_nodes().iter().map(|n| n.location))
        .collect();
    let index = |v: VertexRef| match v {
        VertexRef::Original(i) => i,
        VertexRef::Enriched(n) => n0 + n,
    };
    let mut cells: Vec<([usize; 3], Phase, usize)> = Vec::new();
    for (e, part) in model.partitions().iter().enumerate() {
        match part {
            ElementPartition::Uncut(phase) => cells.push((mesh.elements()[e], *phase, e)),
            ElementPartition::Cut { integration, .. } => {
                for &ie in integration {
                    let el = &model.integration_elements()[ie];
                    cells.push((el.vertices.map(index), el.material, e));
                }
            }
        }
    }
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nigfem-topo design\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(s, "POINTS {} double", points.len()).unwrap();
    for p in &points {
        writeln!(s, "{:.16e} {:.16e} 0", p.x, p.y).unwrap();
    }
    writeln!(s, "CELLS {} {}", cells.len(), 4 * cells.len()).unwrap();
    for (c, _, _) in &cells {
        writeln!(s, "3 {} {} {}", c[0], c[1], c[2]).unwrap();
    }
    writeln!(s, "CELL_TYPES {}", cells.len()).unwrap();
    for _ in &cells {
        s.push_str("5\n");
    }
    writeln!(s, "CELL_DATA {}", cells.len()).unwrap();
    s.push_str("SCALARS material int 1\nLOOKUP_TABLE default\n");
    for (_, phase, _) in &cells {
        s.push_str(if *phase == Phase::Material { "1\n" } else { "0\n" });
    }
    s.push_str("SCALARS parent int 1\nLOOKUP_TABLE default\n");
    for (_, _, e) in &cells {
        writeln!(s, "{e}").unwrap();
    }
    writeln!(s, "POINT_DATA {}", points.len()).unwrap();
    s.push_str("SCALARS levelset double 1\nLOOKUP_TABLE default\n");
    for v in model.nodal_levelset() {
        writeln!(s, "{v:.16e}").unwrap();
    }
    for _ in model.enriched_nodes() {
        s.push_str("0\n");
    }
    write_text(path, &s)
}

/// `designs/design_00042.txt` under `dir`.
pub fn snapshot_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join("designs").join(format!("design_{iteration:05}.txt"))
}

/// One design variable per line.
pub fn write_design(design: &[f64], path: &Path) -> Result<()> {
    let mut s = String::with_capacity(24 * design.len());
    for v in design {
        writeln!(s, "{v:.16e}").unwrap();
    }
    write_text(path, &s)
}

pub fn read_design(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<f64>().map_err(|_| {
                Error::InvalidArgument(format!("{}: line {}: not a number: '{l}'", path.display(), i + 1))
            })
        })
        .collect()
}
