//! Analytical compliance and volume gradients.
//!
//! Only enriched nodes move with the design. Each one slides along its host
//! edge as the two end point levelset values change, which deforms the
//! integration elements it belongs to. The element-level derivatives below
//! are chained through those design velocities to the nodal levelset values
//! and then through `Theta` to the RBF coefficients.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::enrichment::{ElementPartition, EnrichedModel, Phase, VertexRef};
use crate::physics::{
    b_matrix, element_functions, hat_gradients, integration_element_setup, triangle_jacobian,
    ElementKind, LoadCase, MaterialPair, SolveResult, REFERENCE_GRADIENTS,
};
use crate::rbf::LevelsetField;
use crate::{Error, Result, Vec2};

/// Derivatives `(dx_n/dphi_j, dx_n/dphi_k)` of the zero crossing
/// `x_n = x_j + phi_j / (phi_j - phi_k) (x_k - x_j)`.
pub fn design_velocities(xj: Vec2, xk: Vec2, phij: f64, phik: f64) -> Result<[Vec2; 2]> {
    if !(phij * phik < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "edge end values must have strictly opposite signs, got {phij} and {phik}"
        )));
    }
    let diff = phij - phik;
    let denom = diff * diff;
    if !(denom.is_normal()) {
        return Err(Error::NumericGuard(format!(
            "levelset jump {diff:e} across edge is too small"
        )));
    }
    let edge = xk - xj;
    Ok([edge * (-phik / denom), edge * (phij / denom)])
}

/// `dx_n/dphi_j` for an enriched node on the edge from `xj` to `xk`.
pub fn design_velocity(xj: Vec2, xk: Vec2, phij: f64, phik: f64) -> Result<Vec2> {
    design_velocities(xj, xk, phij, phik).map(|v| v[0])
}

/// `dJ/dx` for vertex `local` moved along axis `direction`; zero when the
/// node is not a vertex of the element.
pub fn jacobian_derivative(local: Option<usize>, direction: usize) -> Matrix2<f64> {
    let mut dj = Matrix2::zeros();
    if let Some(l) = local {
        dj[(direction, 0)] = REFERENCE_GRADIENTS[l][0];
        dj[(direction, 1)] = REFERENCE_GRADIENTS[l][1];
    }
    dj
}

fn adjugate(j: &Matrix2<f64>) -> Matrix2<f64> {
    Matrix2::new(j[(1, 1)], -j[(0, 1)], -j[(1, 0)], j[(0, 0)])
}

/// `d det(J)/dx = tr(adj(J) dJ/dx)`.
pub fn jacobian_determinant_derivative(vertices: &[Vec2; 3], local: Option<usize>, direction: usize) -> f64 {
    let j = triangle_jacobian(vertices);
    (adjugate(&j) * jacobian_derivative(local, direction)).trace()
}

/// `dJ^-1/dx = -J^-1 (dJ/dx) J^-1`.
pub fn jacobian_inverse_derivative(
    vertices: &[Vec2; 3],
    local: Option<usize>,
    direction: usize,
) -> Result<Matrix2<f64>> {
    let jinv = triangle_jacobian(vertices).try_inverse().ok_or_else(|| {
        Error::DegenerateElement(format!("singular Jacobian for triangle {vertices:?}"))
    })?;
    Ok(-jinv * jacobian_derivative(local, direction) * jinv)
}

/// Local vertex index of `node` in `vertices`, if present.
pub fn local_index(vertices: &[VertexRef; 3], node: VertexRef) -> Option<usize> {
    vertices.iter().position(|&v| v == node)
}

/// Which function columns are hat functions of the element itself, as
/// `(column, local vertex)`.
fn own_columns(kind: &ElementKind) -> Vec<(usize, usize)> {
    match kind {
        ElementKind::Standard => (0..3).map(|l| (l, l)).collect(),
        ElementKind::Integration { enriched, .. } => {
            enriched.iter().enumerate().map(|(i, &l)| (3 + i, l)).collect()
        }
    }
}

fn gradient_derivatives(
    vertices: &[Vec2; 3],
    kind: &ElementKind,
    local: Option<usize>,
    direction: usize,
) -> Result<Vec<Vec2>> {
    let n_funcs = match kind {
        ElementKind::Standard => 3,
        ElementKind::Integration { enriched, .. } => 3 + enriched.len(),
    };
    let mut d = vec![Vec2::zeros(); n_funcs];
    if local.is_none() {
        return Ok(d);
    }
    let djinv = jacobian_inverse_derivative(vertices, local, direction)?;
    for (col, l) in own_columns(kind) {
        let g = REFERENCE_GRADIENTS[l];
        d[col] = djinv.transpose() * Vec2::new(g[0], g[1]);
    }
    Ok(d)
}

/// `dk/dx = (d area) Bᵀ D B + area (dBᵀ D B + Bᵀ D dB)` for vertex `local`
/// moved along `direction`.
pub fn element_stiffness_derivative(
    vertices: &[Vec2; 3],
    kind: &ElementKind,
    d: &DMatrix<f64>,
    dim: usize,
    local: Option<usize>,
    direction: usize,
) -> Result<DMatrix<f64>> {
    let funcs = element_functions(vertices, kind)?;
    let b = b_matrix(&funcs.gradients, dim);
    let n = b.ncols();
    if local.is_none() {
        return Ok(DMatrix::zeros(n, n));
    }
    let darea = 0.5 * jacobian_determinant_derivative(vertices, local, direction);
    let db = b_matrix(&gradient_derivatives(vertices, kind, local, direction)?, dim);
    let dbt_d_b = db.transpose() * d * &b;
    Ok(b.transpose() * d * &b * darea + (&dbt_d_b + dbt_d_b.transpose()) * funcs.area)
}

/// `df/dx = (d area) [N; psi] b + area [dN; 0] b`; the parent functions
/// change because the quadrature point (the centroid) moves.
pub fn element_force_derivative(
    vertices: &[Vec2; 3],
    kind: &ElementKind,
    body: &[f64],
    dim: usize,
    local: Option<usize>,
    direction: usize,
) -> Result<DVector<f64>> {
    let funcs = element_functions(vertices, kind)?;
    let mut df = DVector::zeros(funcs.values.len() * dim);
    if local.is_none() || body.iter().all(|&v| v == 0.0) {
        return Ok(df);
    }
    let darea = 0.5 * jacobian_determinant_derivative(vertices, local, direction);
    let mut dvalues = vec![0.0; funcs.values.len()];
    if let ElementKind::Integration { parent, .. } = kind {
        let pgrad = hat_gradients(parent)?;
        for i in 0..3 {
            dvalues[i] = pgrad[i][direction] / 3.0;
        }
    }
    for (i, (v, dv)) in funcs.values.iter().zip(&dvalues).enumerate() {
        for c in 0..dim {
            df[i * dim + c] = (darea * v + funcs.area * dv) * body[c];
        }
    }
    Ok(df)
}

/// Design velocities of every enriched node of one model.
#[derive(Debug, Clone)]
pub struct SensitivityWorkspace {
    stamp: u64,
    velocities: Vec<[Vec2; 2]>,
}

impl SensitivityWorkspace {
    pub fn new(model: &EnrichedModel) -> Result<Self> {
        let phi = model.nodal_levelset();
        let mesh = model.mesh();
        let velocities = model
            .enriched_nodes()
            .iter()
            .map(|en| {
                let [j, k] = en.parent_edge;
                design_velocities(mesh.node(j), mesh.node(k), phi[j], phi[k])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SensitivityWorkspace {
            stamp: model.stamp(),
            velocities,
        })
    }

    /// Stamp of the model the velocities were computed for.
    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    /// `(dx_n/dphi_j, dx_n/dphi_k)` for enriched node `n`, in the order of
    /// its `parent_edge`.
    pub fn velocities(&self, n: usize) -> [Vec2; 2] {
        self.velocities[n]
    }

    fn check(&self, model: &EnrichedModel) -> Result<()> {
        if self.stamp != model.stamp() {
            return Err(Error::InvalidState(
                "sensitivity workspace belongs to a different enriched model".into(),
            ));
        }
        Ok(())
    }

    /// Scatters per-node position derivatives to the nodal levelset values.
    pub fn chain_to_levelset(&self, model: &EnrichedModel, d_dx: &[Vec2]) -> Vec<f64> {
        let mut out = vec![0.0; model.mesh().num_nodes()];
        for (n, en) in model.enriched_nodes().iter().enumerate() {
            let [vj, vk] = self.velocities[n];
            let [j, k] = en.parent_edge;
            out[j] += d_dx[n].dot(&vj);
            out[k] += d_dx[n].dot(&vk);
        }
        out
    }

    /// `dC/dx_n` for every enriched node.
    pub fn compliance_node_derivatives(
        &self,
        model: &EnrichedModel,
        materials: &MaterialPair,
        loads: &LoadCase,
        result: &SolveResult,
    ) -> Result<Vec<Vec2>> {
        self.check(model)?;
        if result.model_stamp() != model.stamp() || result.dofs.len() != model.num_dofs() {
            return Err(Error::InvalidState(
                "solve result is stale for the current enriched model".into(),
            ));
        }
        let dim = model.field_dim();
        let d_mat = [
            materials.constitutive(Phase::Material),
            materials.constitutive(Phase::Void),
        ];
        let mut grad = vec![Vec2::zeros(); model.enriched_nodes().len()];
        for part in model.partitions() {
            let ElementPartition::Cut { integration, .. } = part else {
                continue;
            };
            for &ie in integration {
                let elem = &model.integration_elements()[ie];
                let phase = elem.material;
                let (verts, kind, dofs) = integration_element_setup(model, ie);
                let ue = DVector::from_iterator(dofs.len(), dofs.iter().map(|&i| result.dofs[i]));
                for (l, n) in elem.enriched_locals() {
                    for c in 0..2 {
                        let dk = element_stiffness_derivative(&verts, &kind, &d_mat[phase.index()], dim, Some(l), c)?;
                        let df = element_force_derivative(&verts, &kind, loads.body(phase), dim, Some(l), c)?;
                        grad[n][c] += -(ue.transpose() * dk * &ue)[(0, 0)] + 2.0 * ue.dot(&df);
                    }
                }
            }
        }
        Ok(grad)
    }

    /// `dV_phase/dx_n` for every enriched node.
    pub fn volume_node_derivatives(&self, model: &EnrichedModel, phase: Phase) -> Result<Vec<Vec2>> {
        self.check(model)?;
        let mut grad = vec![Vec2::zeros(); model.enriched_nodes().len()];
        for (ie, elem) in model.integration_elements().iter().enumerate() {
            if elem.material != phase {
                continue;
            }
            let verts = model.integration_vertices(ie);
            for (l, n) in elem.enriched_locals() {
                for c in 0..2 {
                    grad[n][c] += 0.5 * jacobian_determinant_derivative(&verts, Some(l), c);
                }
            }
        }
        Ok(grad)
    }
}

/// `dC/ds` for the solved design.
pub fn compliance_gradient(
    model: &EnrichedModel,
    materials: &MaterialPair,
    loads: &LoadCase,
    result: &SolveResult,
    field: &LevelsetField,
) -> Result<Vec<f64>> {
    let ws = SensitivityWorkspace::new(model)?;
    let dx = ws.compliance_node_derivatives(model, materials, loads, result)?;
    Ok(field.pull_back(&ws.chain_to_levelset(model, &dx)))
}

/// `dV/ds` of the given phase.
pub fn phase_volume_gradient(model: &EnrichedModel, field: &LevelsetField, phase: Phase) -> Result<Vec<f64>> {
    let ws = SensitivityWorkspace::new(model)?;
    let dx = ws.volume_node_derivatives(model, phase)?;
    Ok(field.pull_back(&ws.chain_to_levelset(model, &dx)))
}

/// `dV/ds` of the material phase.
pub fn volume_gradient(model: &EnrichedModel, field: &LevelsetField) -> Result<Vec<f64>> {
    phase_volume_gradient(model, field, Phase::Material)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enrichment::{intersect_edge, snap_epsilon, snap_nodal_levelset};
    use crate::mesh::{Diagonal, Mesh};
    use crate::physics::{analyze, element_force, element_stiffness, ElasticMaterial};
    use crate::rbf::RbfGrid;

    fn tri() -> [Vec2; 3] {
        [Vec2::new(0.1, 0.0), Vec2::new(1.2, 0.3), Vec2::new(0.4, 0.9)]
    }

    fn moved(v: &[Vec2; 3], l: usize, c: usize, h: f64) -> [Vec2; 3] {
        let mut w = *v;
        w[l][c] += h;
        w
    }

    #[test]
    fn design_velocity_matches_finite_differences() {
        let (xj, xk) = (Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0));
        let v = design_velocity(xj, xk, -1.0, 1.0).unwrap();
        assert!((v - Vec2::new(-0.25, 0.0)).norm() < 1e-15);
        let v = design_velocity(xj, xk, -1.0, 3.0).unwrap();
        assert!((v - Vec2::new(-0.1875, 0.0)).norm() < 1e-15);
        let (xj, xk) = (Vec2::new(0.3, -0.2), Vec2::new(1.1, 0.7));
        for (pj, pk) in [(-1.0, 1.0), (-1.0, 3.0), (0.4, -0.05), (2.0, -7.0)] {
            let [vj, vk] = design_velocities(xj, xk, pj, pk).unwrap();
            let h = 1e-7;
            let fdj = (intersect_edge(xj, xk, pj + h, pk).unwrap() - intersect_edge(xj, xk, pj - h, pk).unwrap()) / (2.0 * h);
            let fdk = (intersect_edge(xj, xk, pj, pk + h).unwrap() - intersect_edge(xj, xk, pj, pk - h).unwrap()) / (2.0 * h);
            assert!((vj - fdj).norm() <= 1e-6 * vj.norm());
            assert!((vk - fdk).norm() <= 1e-6 * vk.norm());
            // along the edge
            let e = xk - xj;
            assert!((vj.x * e.y - vj.y * e.x).abs() < 1e-14);
        }
        assert!(design_velocity(xj, xk, 1.0, 1.0).is_err());
    }

    #[test]
    fn jacobian_derivatives() {
        assert_eq!(jacobian_derivative(None, 0), Matrix2::zeros());
        let v = tri();
        let h = 1e-6;
        for c in 0..2 {
            let sum: Matrix2<f64> = (0..3).map(|l| jacobian_derivative(Some(l), c)).sum();
            assert_eq!(sum, Matrix2::zeros());
            for l in 0..3 {
                let fd = (triangle_jacobian(&moved(&v, l, c, h)) - triangle_jacobian(&moved(&v, l, c, -h))) / (2.0 * h);
                assert!((fd - jacobian_derivative(Some(l), c)).norm() < 1e-8);

                let det = |w: &[Vec2; 3]| triangle_jacobian(w).determinant();
                let fd = (det(&moved(&v, l, c, h)) - det(&moved(&v, l, c, -h))) / (2.0 * h);
                let an = jacobian_determinant_derivative(&v, Some(l), c);
                assert!((fd - an).abs() <= 1e-8 * an.abs().max(1.0));

                let inv = |w: &[Vec2; 3]| triangle_jacobian(w).try_inverse().unwrap();
                let fd = (inv(&moved(&v, l, c, h)) - inv(&moved(&v, l, c, -h))) / (2.0 * h);
                let an = jacobian_inverse_derivative(&v, Some(l), c).unwrap();
                assert!((fd - an).norm() <= 1e-8 * an.norm().max(1.0));
                // product rule: dJ J^-1 + J dJ^-1 = 0
                let j = triangle_jacobian(&v);
                let prod = jacobian_derivative(Some(l), c) * inv(&v) + j * an;
                assert!(prod.norm() < 1e-14);
                // trace identity against the determinant derivative
                let ddet = jacobian_determinant_derivative(&v, Some(l), c);
                let tr = (inv(&v) * jacobian_derivative(Some(l), c)).trace() * j.determinant();
                assert!((tr - ddet).abs() < 1e-14);
            }
        }
        let unit = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        assert!((jacobian_determinant_derivative(&unit, Some(1), 0) - 1.0).abs() < 1e-15);
        // parallel to the opposite edge
        assert_eq!(jacobian_determinant_derivative(&unit, Some(0), 0) + 1.0, 0.0);
        let ddet = jacobian_determinant_derivative(&unit, Some(2), 0);
        assert_eq!(ddet, 0.0);
        let an = jacobian_inverse_derivative(&unit, Some(1), 1).unwrap();
        assert_eq!(an, -jacobian_derivative(Some(1), 1));
    }

    fn cut_kind() -> ([Vec2; 3], ElementKind) {
        let parent = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let v = [Vec2::new(0.0, 0.0), Vec2::new(0.35, 0.0), Vec2::new(0.0, 0.6)];
        (v, ElementKind::Integration { parent, enriched: vec![1, 2] })
    }

    #[test]
    fn element_derivatives_match_finite_differences() {
        let (v, kind) = cut_kind();
        let mats = [
            (MaterialPair::Elastic {
                material: ElasticMaterial { youngs_modulus: 1.0, poisson_ratio: 0.3 },
                void: ElasticMaterial { youngs_modulus: 1e-6, poisson_ratio: 0.3 },
            }, 2usize, vec![0.4, -1.0]),
            (MaterialPair::Thermal { material: 1.0, void: 0.01 }, 1usize, vec![1.0]),
        ];
        let h = 1e-7;
        for (m, dim, body) in mats {
            let d = m.constitutive(Phase::Material);
            let k_at = |w: &[Vec2; 3]| element_stiffness(&element_functions(w, &kind).unwrap(), &d, dim);
            let f_at = |w: &[Vec2; 3]| element_force(&element_functions(w, &kind).unwrap(), &body, dim);
            for l in [1, 2] {
                for c in 0..2 {
                    let an = element_stiffness_derivative(&v, &kind, &d, dim, Some(l), c).unwrap();
                    assert!((&an - an.transpose()).norm() < 1e-14);
                    let fd = (k_at(&moved(&v, l, c, h)) - k_at(&moved(&v, l, c, -h))) / (2.0 * h);
                    assert!((&fd - &an).norm() <= 1e-5 * an.norm());
                    let an = element_force_derivative(&v, &kind, &body, dim, Some(l), c).unwrap();
                    let fd = (f_at(&moved(&v, l, c, h)) - f_at(&moved(&v, l, c, -h))) / (2.0 * h);
                    assert!((&fd - &an).norm() <= 1e-5 * an.norm().max(1e-12));
                    // enriched block of the second term is zero: psi fixed at 1/3
                    let darea = 0.5 * jacobian_determinant_derivative(&v, Some(l), c);
                    for i in 3 * dim..an.len() {
                        assert!((an[i] - darea / 3.0 * body[i % dim]).abs() < 1e-15);
                    }
                }
            }
            let zero = element_force_derivative(&v, &kind, &vec![0.0; dim], dim, Some(1), 0).unwrap();
            assert!(zero.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn force_derivatives_conserve_load_over_parent() {
        let mesh = Mesh::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let model = EnrichedModel::build(&mesh, &[0.7, -0.4, -1.1], 1).unwrap();
        // enriched nodes slide along their host edges
        for n in 0..2 {
            let [j, k] = model.enriched_nodes()[n].parent_edge;
            let t = mesh.node(k) - mesh.node(j);
            let mut total = 0.0;
            for ie in 0..3 {
                let (verts, kind, _) = integration_element_setup(&model, ie);
                let local = local_index(&model.integration_elements()[ie].vertices, VertexRef::Enriched(n));
                for c in 0..2 {
                    let df = element_force_derivative(&verts, &kind, &[1.0], 1, local, c).unwrap();
                    total += t[c] * df.rows(0, 3).sum();
                }
            }
            assert!(total.abs() < 1e-14);
        }
    }

    struct Setup {
        mesh: Mesh,
        grid: RbfGrid,
        materials: MaterialPair,
        loads: LoadCase,
        dim: usize,
    }

    fn eval(s: &Setup, design: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>, Vec<bool>) {
        let field = LevelsetField::new(s.grid.clone(), &s.mesh, design.to_vec()).unwrap();
        let raw = field.nodal_values();
        let phi = snap_nodal_levelset(raw, snap_epsilon(raw)).unwrap();
        let model = EnrichedModel::build(&s.mesh, &phi, s.dim).unwrap();
        let res = analyze(&model, &s.materials, &s.loads).unwrap();
        let g = compliance_gradient(&model, &s.materials, &s.loads, &res, &field).unwrap();
        let gv = volume_gradient(&model, &field).unwrap();
        (res.compliance, res.material_volume, g, gv, model.sign_signature())
    }

    fn heat_setup() -> Setup {
        let mesh = Mesh::structured_grid(1.0, 1.0, 9, 9, Diagonal::default()).unwrap();
        let grid = RbfGrid::rectangular(1.0, 1.0, 7, 7, 2f64.sqrt()).unwrap();
        let mut loads = LoadCase { body_source: [vec![1.0], vec![1.0]], ..Default::default() };
        for n in mesh.nodes_in_box(Vec2::new(0.8, 0.0), Vec2::new(1.0, 0.0), 1e-9) {
            loads.fixed.push((n, 0));
        }
        Setup { mesh, grid, materials: MaterialPair::Thermal { material: 1.0, void: 0.01 }, loads, dim: 1 }
    }

    fn elastic_setup() -> Setup {
        let mesh = Mesh::structured_grid(2.0, 1.0, 11, 6, Diagonal::default()).unwrap();
        let grid = RbfGrid::rectangular(2.0, 1.0, 11, 6, 2f64.sqrt()).unwrap();
        let mut loads = LoadCase { body_source: [vec![0.0, 0.0], vec![0.0, 0.0]], ..Default::default() };
        for &n in mesh.boundary_nodes("left").unwrap() {
            loads.fixed.push((n, 0));
            loads.fixed.push((n, 1));
        }
        loads.point_loads.push((mesh.nearest_node(Vec2::new(2.0, 0.5)), vec![0.0, -1.0]));
        let materials = MaterialPair::Elastic {
            material: ElasticMaterial { youngs_modulus: 1.0, poisson_ratio: 0.3 },
            void: ElasticMaterial { youngs_modulus: 1e-3, poisson_ratio: 0.3 },
        };
        Setup { mesh, grid, materials, loads, dim: 2 }
    }

    fn holes_design(grid: &RbfGrid) -> Vec<f64> {
        grid.centers()
            .iter()
            .map(|c| ((c.x * 7.3).cos() * (c.y * 6.1).cos() + 0.21).clamp(-1.0, 1.0))
            .collect()
    }

    fn check_global_fd(s: &Setup) {
        let design = holes_design(&s.grid);
        let (_, _, g, gv, sig) = eval(s, &design);
        let h = 1e-4;
        let mut checked = 0;
        for i in 0..design.len() {
            let (mut p, mut m) = (design.clone(), design.clone());
            p[i] += h;
            m[i] -= h;
            let (cp, vp, _, _, sp) = eval(s, &p);
            let (cm, vm, _, _, sm) = eval(s, &m);
            if sp != sig || sm != sig {
                continue;
            }
            let fd = (cp - cm) / (2.0 * h);
            let fdv = (vp - vm) / (2.0 * h);
            if g[i] == 0.0 {
                assert!(fd.abs() < 1e-10, "variable {i}: fd {fd}");
                continue;
            }
            checked += 1;
            assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-6), "variable {i}: fd {fd} vs {}", g[i]);
            assert!((fdv - gv[i]).abs() <= 1e-4 * gv[i].abs().max(1e-6), "variable {i}: fd {fdv} vs {}", gv[i]);
        }
        assert!(checked > 5);
    }

    #[test]
    fn heat_compliance_gradient_matches_finite_differences() {
        check_global_fd(&heat_setup());
    }

    #[test]
    fn elastic_compliance_gradient_matches_finite_differences() {
        check_global_fd(&elastic_setup());
    }

    #[test]
    fn homogeneous_material_has_zero_sensitivity() {
        let mut s = elastic_setup();
        let e = ElasticMaterial { youngs_modulus: 1.0, poisson_ratio: 0.3 };
        s.materials = MaterialPair::Elastic { material: e, void: e };
        // uniform tension: exact solution is linear
        s.loads.point_loads.clear();
        s.loads.fixed.clear();
        let left = s.mesh.boundary_nodes("left").unwrap().to_vec();
        for &n in &left {
            s.loads.fixed.push((n, 0));
        }
        s.loads.fixed.push((left[0], 1));
        let right = s.mesh.boundary_nodes("right").unwrap();
        let h = 1.0 / 5.0;
        for (i, &n) in right.iter().enumerate() {
            let w = if i == 0 || i == right.len() - 1 { 0.5 } else { 1.0 };
            s.loads.point_loads.push((n, vec![w * h, 0.0]));
        }
        // keep the loaded edge uncut so the nodal loads stay consistent
        let design: Vec<f64> = holes_design(&s.grid)
            .into_iter()
            .zip(s.grid.centers())
            .map(|(v, c)| if c.x > 1.5 { 1.0 } else { v })
            .collect();
        let (_, _, g, _, _) = eval(&s, &design);
        assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
    }

    #[test]
    fn uncut_design_has_zero_gradients_and_complementary_volumes() {
        let s = heat_setup();
        let field = LevelsetField::new(s.grid.clone(), &s.mesh, vec![0.5; s.grid.len()]).unwrap();
        let model = EnrichedModel::build(&s.mesh, field.nodal_values(), 1).unwrap();
        let res = analyze(&model, &s.materials, &s.loads).unwrap();
        let g = compliance_gradient(&model, &s.materials, &s.loads, &res, &field).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(volume_gradient(&model, &field).unwrap().iter().all(|&v| v == 0.0));

        let design = holes_design(&s.grid);
        let field = LevelsetField::new(s.grid.clone(), &s.mesh, design).unwrap();
        let phi = snap_nodal_levelset(field.nodal_values(), 1e-12).unwrap();
        let model = EnrichedModel::build(&s.mesh, &phi, 1).unwrap();
        let gm = phase_volume_gradient(&model, &field, Phase::Material).unwrap();
        let gvoid = phase_volume_gradient(&model, &field, Phase::Void).unwrap();
        assert!(gm.iter().any(|&v| v != 0.0));
        for (a, b) in gm.iter().zip(&gvoid) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn stale_result_is_rejected() {
        let s = heat_setup();
        let field = LevelsetField::new(s.grid.clone(), &s.mesh, holes_design(&s.grid)).unwrap();
        let phi = snap_nodal_levelset(field.nodal_values(), 1e-12).unwrap();
        let model = EnrichedModel::build(&s.mesh, &phi, 1).unwrap();
        let res = analyze(&model, &s.materials, &s.loads).unwrap();
        let rebuilt = EnrichedModel::build(&s.mesh, &phi, 1).unwrap();
        assert!(matches!(
            compliance_gradient(&rebuilt, &s.materials, &s.loads, &res, &field),
            Err(Error::InvalidState(_))
        ));
    }
}
