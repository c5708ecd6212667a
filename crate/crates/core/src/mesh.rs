//! Fixed triangular analysis meshes.
//!
//! The mesh never changes during an optimization run; material boundaries
//! are handled by enrichment on top of it.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec2};

/// Which diagonal splits each quad of a structured grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Diagonal {
    /// Split from the lower-left to the upper-right corner.
    #[default]
    LowerLeftUpperRight,
    /// Split from the lower-right to the upper-left corner.
    LowerRightUpperLeft,
}

/// Triangle mesh with edge topology and named boundary sets.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Vec2>,
    elements: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    element_edges: Vec<[usize; 3]>,
    edge_elements: Vec<Vec<usize>>,
    edge_lookup: HashMap<(usize, usize), usize>,
    node_sets: BTreeMap<String, Vec<usize>>,
    edge_sets: BTreeMap<String, Vec<usize>>,
}

/// Signed area of the triangle `(a, b, c)`; positive when counter-clockwise.
pub fn signed_area(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Builds a mesh from raw nodes and counter-clockwise triangles,
    /// checking index range, orientation and edge manifoldness.
    pub fn new(nodes: Vec<Vec2>, elements: Vec<[usize; 3]>) -> Result<Self> {
        if nodes.is_empty() || elements.is_empty() {
            return Err(Error::InvalidArgument("mesh needs nodes and elements".into()));
        }
        let mut edges = Vec::new();
        let mut edge_lookup = HashMap::new();
        let mut edge_elements: Vec<Vec<usize>> = Vec::new();
        let mut element_edges = Vec::with_capacity(elements.len());
        for (e, tri) in elements.iter().enumerate() {
            if tri.iter().any(|&v| v >= nodes.len()) {
                return Err(Error::InvalidArgument(format!(
                    "element {e} references a node out of range"
                )));
            }
            let area = signed_area(&nodes[tri[0]], &nodes[tri[1]], &nodes[tri[2]]);
            if !(area > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "element {e} has non-positive signed area {area}"
                )));
            }
            let mut local = [0usize; 3];
            for l in 0..3 {
                let key = edge_key(tri[l], tri[(l + 1) % 3]);
                let idx = *edge_lookup.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edge_elements.push(Vec::new());
                    edges.len() - 1
                });
                edge_elements[idx].push(e);
                local[l] = idx;
            }
            element_edges.push(local);
        }
        if let Some(i) = edge_elements.iter().position(|adj| adj.len() > 2) {
            return Err(Error::InvalidArgument(format!(
                "edge {:?} is shared by more than two elements",
                edges[i]
            )));
        }
        Ok(Mesh {
            nodes,
            elements,
            edges,
            element_edges,
            edge_elements,
            edge_lookup,
            node_sets: BTreeMap::new(),
            edge_sets: BTreeMap::new(),
        })
    }

    /// Structured grid of `nx` by `ny` nodes over `[0, width] x [0, height]`,
    /// each quad split into two triangles. Nodes are numbered row-major from
    /// the bottom-left corner; the boundary sets `left`, `right`, `bottom`
    /// and `top` are populated.
    pub fn structured_grid(
        width: f64,
        height: f64,
        nx: usize,
        ny: usize,
        diagonal: Diagonal,
    ) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {width} x {height}"
            )));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2x2 nodes, got {nx} x {ny}"
            )));
        }
        let dx = width / (nx - 1) as f64;
        let dy = height / (ny - 1) as f64;
        let mut nodes = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                // pin the far edges exactly
                let x = if i == nx - 1 { width } else { i as f64 * dx };
                let y = if j == ny - 1 { height } else { j as f64 * dy };
                nodes.push(Vec2::new(x, y));
            }
        }
        let id = |i: usize, j: usize| j * nx + i;
        let mut elements = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let (n0, n1, n2, n3) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                match diagonal {
                    Diagonal::LowerLeftUpperRight => {
                        elements.push([n0, n1, n2]);
                        elements.push([n0, n2, n3]);
                    }
                    Diagonal::LowerRightUpperLeft => {
                        elements.push([n0, n1, n3]);
                        elements.push([n1, n2, n3]);
                    }
                }
            }
        }
        let mut mesh = Mesh::new(nodes, elements)?;
        let sides: [(&str, Vec<usize>); 4] = [
            ("bottom", (0..nx).map(|i| id(i, 0)).collect()),
            ("top", (0..nx).map(|i| id(i, ny - 1)).collect()),
            ("left", (0..ny).map(|j| id(0, j)).collect()),
            ("right", (0..ny).map(|j| id(nx - 1, j)).collect()),
        ];
        for (tag, nodes) in sides {
            let edges = nodes
                .windows(2)
                .map(|w| mesh.edge_between(w[0], w[1]).expect("grid side edge"))
                .collect();
            mesh.node_sets.insert(tag.to_string(), nodes);
            mesh.edge_sets.insert(tag.to_string(), edges);
        }
        Ok(mesh)
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Vec2 {
        self.nodes[i]
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// Unique edges, each stored with its lower node index first.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Edge indices of element `e`; local edge `l` joins vertices `l` and `l + 1`.
    pub fn element_edges(&self, e: usize) -> [usize; 3] {
        self.element_edges[e]
    }

    /// Elements adjacent to an edge (one on the boundary, two inside).
    pub fn edge_elements(&self, edge: usize) -> &[usize] {
        &self.edge_elements[edge]
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_lookup.get(&edge_key(a, b)).copied()
    }

    pub fn element_vertices(&self, e: usize) -> [Vec2; 3] {
        let t = self.elements[e];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]]
    }

    pub fn element_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.element_vertices(e);
        signed_area(&a, &b, &c)
    }

    pub fn boundary_nodes(&self, tag: &str) -> Option<&[usize]> {
        self.node_sets.get(tag).map(Vec::as_slice)
    }

    pub fn boundary_edges(&self, tag: &str) -> Option<&[usize]> {
        self.edge_sets.get(tag).map(Vec::as_slice)
    }

    pub fn boundary_tags(&self) -> impl Iterator<Item = &str> {
        self.node_sets.keys().map(String::as_str)
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        let mut lo = self.nodes[0];
        let mut hi = self.nodes[0];
        for p in &self.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Index of the node closest to `point`; ties go to the lowest index.
    pub fn nearest_node(&self, point: Vec2) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.nodes.iter().enumerate() {
            let d = (p - point).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Nodes inside the closed box `[min, max]`, widened by `tol`.
    pub fn nodes_in_box(&self, min: Vec2, max: Vec2, tol: f64) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                p.x >= min.x - tol && p.x <= max.x + tol && p.y >= min.y - tol && p.y <= max.y + tol
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Total mesh area.
    pub fn area(&self) -> f64 {
        (0..self.num_elements()).map(|e| self.element_area(e)).sum()
    }
}
