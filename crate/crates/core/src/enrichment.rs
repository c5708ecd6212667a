//! Interface enrichment of the fixed mesh.
//!
//! Given nodal levelset values, every mesh edge whose end points carry
//! opposite signs receives one enriched node at the linear-interpolation
//! zero crossing. Each cut triangle is split into three integration
//! elements: the lone-sign vertex with the two enriched nodes, and the
//! remaining quadrilateral cut along its shorter diagonal. Enrichment
//! functions are the hat functions of the integration elements attached to
//! the enriched nodes, so they vanish at every original mesh node.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::mesh::{signed_area, Mesh};
use crate::{Error, Result, Vec2};

/// Relative snap threshold applied to `max |phi|`.
pub const SNAP_RELATIVE: f64 = 1e-10;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

/// Material phase of a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Material,
    Void,
}

impl Phase {
    /// `phi > 0` is material.
    pub fn from_levelset(phi: f64) -> Phase {
        if phi > 0.0 {
            Phase::Material
        } else {
            Phase::Void
        }
    }

    pub fn index(self) -> usize {
        match self {
            Phase::Material => 0,
            Phase::Void => 1,
        }
    }
}

/// Vertex of an integration element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VertexRef {
    Original(usize),
    Enriched(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedNode {
    pub location: Vec2,
    /// Host edge end points, lower node index first.
    pub parent_edge: [usize; 2],
    /// Mesh edge index of the host edge.
    pub edge: usize,
    /// Position along the host edge measured from `parent_edge[0]`.
    pub edge_fraction: f64,
    /// Global enriched DOFs, one per field component.
    pub dof_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationElement {
    /// Counter-clockwise vertices.
    pub vertices: [VertexRef; 3],
    pub material: Phase,
    pub parent_element: usize,
}

impl IntegrationElement {
    /// Local indices of the enriched vertices, in vertex order.
    pub fn enriched_locals(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.vertices.iter().enumerate().filter_map(|(l, v)| match v {
            VertexRef::Enriched(n) => Some((l, *n)),
            VertexRef::Original(_) => None,
        })
    }
}

/// How a parent element is treated in the current model.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementPartition {
    Uncut(Phase),
    /// Cut by the interface; `integration` indexes three consecutive
    /// integration elements.
    Cut {
        enriched: [usize; 2],
        integration: [usize; 3],
    },
}

/// Replaces values with `|phi| < epsilon` by `+epsilon`.
pub fn snap_nodal_levelset(phi: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "snap epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(phi
        .iter()
        .map(|&v| if v.abs() < epsilon { epsilon } else { v })
        .collect())
}

/// Default snap threshold: `1e-10 * max |phi|`, or `1e-10` for a zero field.
pub fn snap_epsilon(phi: &[f64]) -> f64 {
    let m = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    SNAP_RELATIVE * if m > 0.0 { m } else { 1.0 }
}

/// Zero crossing of the linear interpolant between two nodal values.
pub fn intersect_edge(xj: Vec2, xk: Vec2, phij: f64, phik: f64) -> Result<Vec2> {
    if !(phij * phik < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "edge end values must have strictly opposite signs, got {phij} and {phik}"
        )));
    }
    Ok(xj - (xk - xj) * (phij / (phik - phij)))
}

/// Barycentric coordinates of `p` in triangle `tri`.
pub fn barycentric(tri: &[Vec2; 3], p: Vec2) -> [f64; 3] {
    let total = signed_area(&tri[0], &tri[1], &tri[2]);
    let l0 = signed_area(&p, &tri[1], &tri[2]) / total;
    let l1 = signed_area(&tri[0], &p, &tri[2]) / total;
    [l0, l1, 1.0 - l0 - l1]
}

/// Cut topology of one design on the fixed mesh.
#[derive(Debug, Clone)]
pub struct EnrichedModel<'m> {
    mesh: &'m Mesh,
    phi: Vec<f64>,
    field_dim: usize,
    enriched_nodes: Vec<EnrichedNode>,
    integration_elements: Vec<IntegrationElement>,
    partitions: Vec<ElementPartition>,
    edge_enriched: Vec<Option<usize>>,
    stamp: u64,
}

impl<'m> EnrichedModel<'m> {
    /// Builds the enriched model from snapped nodal levelset values.
    pub fn build(mesh: &'m Mesh, phi: &[f64], field_dim: usize) -> Result<Self> {
        if phi.len() != mesh.num_nodes() {
            return Err(Error::InvalidArgument(format!(
                "levelset has {} values for {} nodes",
                phi.len(),
                mesh.num_nodes()
            )));
        }
        if !(field_dim == 1 || field_dim == 2) {
            return Err(Error::InvalidArgument(format!(
                "field dimension must be 1 or 2, got {field_dim}"
            )));
        }
        if let Some(j) = phi.iter().position(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "nodal levelset at node {j} is {}; snap before building",
                phi[j]
            )));
        }
        let n_orig_dofs = field_dim * mesh.num_nodes();
        let mut model = EnrichedModel {
            mesh,
            phi: phi.to_vec(),
            field_dim,
            enriched_nodes: Vec::new(),
            integration_elements: Vec::new(),
            partitions: Vec::with_capacity(mesh.num_elements()),
            edge_enriched: vec![None; mesh.edges().len()],
            stamp: NEXT_STAMP.fetch_add(1, Ordering::Relaxed),
        };
        for (e, tri) in mesh.elements().iter().enumerate() {
            let phases = tri.map(|v| Phase::from_levelset(phi[v]));
            if phases[0] == phases[1] && phases[1] == phases[2] {
                model.partitions.push(ElementPartition::Uncut(phases[0]));
                continue;
            }
            let lone = (0..3)
                .find(|&l| phases[l] != phases[(l + 1) % 3] && phases[l] != phases[(l + 2) % 3])
                .expect("mixed signs leave exactly one lone vertex");
            let (a, b, c) = (tri[lone], tri[(lone + 1) % 3], tri[(lone + 2) % 3]);
            let e1 = model.enriched_on_edge(a, b, n_orig_dofs)?;
            let e2 = model.enriched_on_edge(a, c, n_orig_dofs)?;
            let lone_phase = phases[lone];
            let other_phase = phases[(lone + 1) % 3];
            let (o, n) = (VertexRef::Original, VertexRef::Enriched);
            let p_e1 = model.enriched_nodes[e1].location;
            let p_e2 = model.enriched_nodes[e2].location;
            let d_e1c = (p_e1 - mesh.node(c)).norm();
            let d_be2 = (mesh.node(b) - p_e2).norm();
            let split_at_c = if (d_e1c - d_be2).abs() <= 1e-12 * d_e1c.max(d_be2) {
                c < b
            } else {
                d_e1c < d_be2
            };
            let quad = if split_at_c {
                [[n(e1), o(b), o(c)], [n(e1), o(c), n(e2)]]
            } else {
                [[n(e1), o(b), n(e2)], [o(b), o(c), n(e2)]]
            };
            let first = model.integration_elements.len();
            model.integration_elements.push(IntegrationElement {
                vertices: [o(a), n(e1), n(e2)],
                material: lone_phase,
                parent_element: e,
            });
            for verts in quad {
                model.integration_elements.push(IntegrationElement {
                    vertices: verts,
                    material: other_phase,
                    parent_element: e,
                });
            }
            model.partitions.push(ElementPartition::Cut {
                enriched: [e1, e2],
                integration: [first, first + 1, first + 2],
            });
        }
        Ok(model)
    }

    fn enriched_on_edge(&mut self, a: usize, b: usize, n_orig_dofs: usize) -> Result<usize> {
        let edge = self.mesh.edge_between(a, b).expect("element edge exists");
        if let Some(n) = self.edge_enriched[edge] {
            return Ok(n);
        }
        let [j, k] = self.mesh.edges()[edge];
        let (xj, xk) = (self.mesh.node(j), self.mesh.node(k));
        let (pj, pk) = (self.phi[j], self.phi[k]);
        let location = intersect_edge(xj, xk, pj, pk)?;
        let fraction = pj / (pj - pk);
        let idx = self.enriched_nodes.len();
        let d = self.field_dim;
        self.enriched_nodes.push(EnrichedNode {
            location,
            parent_edge: [j, k],
            edge,
            edge_fraction: fraction,
            dof_ids: (0..d).map(|c| n_orig_dofs + idx * d + c).collect(),
        });
        self.edge_enriched[edge] = Some(idx);
        Ok(idx)
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    /// Snapped nodal levelset values the model was built from.
    pub fn nodal_levelset(&self) -> &[f64] {
        &self.phi
    }

    pub fn field_dim(&self) -> usize {
        self.field_dim
    }

    /// Identifier unique to this model instance.
    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn enriched_nodes(&self) -> &[EnrichedNode] {
        &self.enriched_nodes
    }

    pub fn integration_elements(&self) -> &[IntegrationElement] {
        &self.integration_elements
    }

    pub fn partitions(&self) -> &[ElementPartition] {
        &self.partitions
    }

    pub fn partition(&self, e: usize) -> &ElementPartition {
        &self.partitions[e]
    }

    /// Enriched node hosted by a mesh edge, if any.
    pub fn edge_enriched_node(&self, edge: usize) -> Option<usize> {
        self.edge_enriched[edge]
    }

    pub fn num_cut_elements(&self) -> usize {
        self.partitions
            .iter()
            .filter(|p| matches!(p, ElementPartition::Cut { .. }))
            .count()
    }

    /// Number of standard DOFs (original nodes).
    pub fn num_original_dofs(&self) -> usize {
        self.field_dim * self.mesh.num_nodes()
    }

    pub fn num_enriched_dofs(&self) -> usize {
        self.field_dim * self.enriched_nodes.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.num_original_dofs() + self.num_enriched_dofs()
    }

    pub fn node_dof(&self, node: usize, component: usize) -> usize {
        node * self.field_dim + component
    }

    pub fn enriched_dof(&self, enriched: usize, component: usize) -> usize {
        self.num_original_dofs() + enriched * self.field_dim + component
    }

    pub fn vertex_position(&self, v: VertexRef) -> Vec2 {
        match v {
            VertexRef::Original(i) => self.mesh.node(i),
            VertexRef::Enriched(n) => self.enriched_nodes[n].location,
        }
    }

    pub fn integration_vertices(&self, ie: usize) -> [Vec2; 3] {
        self.integration_elements[ie]
            .vertices
            .map(|v| self.vertex_position(v))
    }

    pub fn integration_area(&self, ie: usize) -> f64 {
        let [a, b, c] = self.integration_vertices(ie);
        signed_area(&a, &b, &c)
    }

    /// Values of the enrichment functions of integration element `ie` at
    /// `point`, as `(enriched node, value)` pairs.
    pub fn enrichment_value(&self, ie: usize, point: Vec2) -> Vec<(usize, f64)> {
        let lam = barycentric(&self.integration_vertices(ie), point);
        self.integration_elements[ie]
            .enriched_locals()
            .map(|(l, n)| (n, lam[l]))
            .collect()
    }

    /// Total area of the given phase.
    pub fn phase_area(&self, phase: Phase) -> f64 {
        let mut area = 0.0;
        for (e, p) in self.partitions.iter().enumerate() {
            match p {
                ElementPartition::Uncut(ph) if *ph == phase => area += self.mesh.element_area(e),
                ElementPartition::Uncut(_) => {}
                ElementPartition::Cut { integration, .. } => {
                    for &ie in integration {
                        if self.integration_elements[ie].material == phase {
                            area += self.integration_area(ie);
                        }
                    }
                }
            }
        }
        area
    }

    /// Signs of the nodal levelset; equal signatures mean identical cut
    /// topology.
    pub fn sign_signature(&self) -> Vec<bool> {
        self.phi.iter().map(|&v| v > 0.0).collect()
    }
}
