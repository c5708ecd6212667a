//! Element matrices, global assembly and the linear solve for 2-D
//! elastostatics (plane stress) and heat conduction on linear triangles.
//!
//! Standard elements use the three hat functions of the triangle. An
//! integration element of a cut parent uses the parent hat functions plus
//! the hat functions of the integration element itself at its enriched
//! vertices. One quadrature point (the centroid) is exact for all of them.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::enrichment::{ElementPartition, EnrichedModel, Phase, VertexRef};
use crate::mesh::signed_area;
use crate::sparse::{norm, CsrMatrix, EnvelopeCholesky};
use crate::{Error, Result, Vec2};

/// Residual bound for an accepted solve.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

const PIVOT_TOL: f64 = 1e-13;
const MAX_REFINEMENTS: usize = 8;

/// Reference-triangle gradients of `(1 - xi - eta, xi, eta)`.
pub const REFERENCE_GRADIENTS: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Physics {
    Elastostatics,
    Heat,
}

impl Physics {
    /// Unknowns per node.
    pub fn field_dim(self) -> usize {
        match self {
            Physics::Elastostatics => 2,
            Physics::Heat => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticMaterial {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
}

impl ElasticMaterial {
    /// Plane-stress constitutive matrix in Voigt order `(xx, yy, xy)`.
    pub fn plane_stress(&self) -> DMatrix<f64> {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        let f = e / (1.0 - nu * nu);
        DMatrix::from_row_slice(
            3,
            3,
            &[f, f * nu, 0.0, f * nu, f, 0.0, 0.0, 0.0, f * (1.0 - nu) / 2.0],
        )
    }
}

/// Properties of the material and void phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MaterialPair {
    Elastic {
        material: ElasticMaterial,
        void: ElasticMaterial,
    },
    Thermal {
        material: f64,
        void: f64,
    },
}

impl MaterialPair {
    pub fn physics(&self) -> Physics {
        match self {
            MaterialPair::Elastic { .. } => Physics::Elastostatics,
            MaterialPair::Thermal { .. } => Physics::Heat,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        match self {
            MaterialPair::Elastic { material, void } => {
                if !(material.youngs_modulus > void.youngs_modulus && void.youngs_modulus > 0.0) {
                    errs.push(format!(
                        "materials: need E_material > E_void > 0, got {} and {}",
                        material.youngs_modulus, void.youngs_modulus
                    ));
                }
                for (name, m) in [("material", material), ("void", void)] {
                    if !(m.poisson_ratio > -1.0 && m.poisson_ratio < 0.5) {
                        errs.push(format!(
                            "materials.{name}: Poisson ratio {} outside (-1, 0.5)",
                            m.poisson_ratio
                        ));
                    }
                }
            }
            MaterialPair::Thermal { material, void } => {
                if !(material > void && *void > 0.0) {
                    errs.push(format!(
                        "materials: need kappa_material > kappa_void > 0, got {material} and {void}"
                    ));
                }
            }
        }
        errs
    }

    /// Constitutive matrix `D` of a phase.
    pub fn constitutive(&self, phase: Phase) -> DMatrix<f64> {
        match (self, phase) {
            (MaterialPair::Elastic { material, .. }, Phase::Material) => material.plane_stress(),
            (MaterialPair::Elastic { void, .. }, Phase::Void) => void.plane_stress(),
            (MaterialPair::Thermal { material, .. }, Phase::Material) => {
                DMatrix::identity(2, 2) * *material
            }
            (MaterialPair::Thermal { void, .. }, Phase::Void) => DMatrix::identity(2, 2) * *void,
        }
    }
}

/// Loads and homogeneous supports resolved to mesh nodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadCase {
    /// `(node, component)` pairs held at zero.
    pub fixed: Vec<(usize, usize)>,
    /// `(node, load vector)` point loads.
    pub point_loads: Vec<(usize, Vec<f64>)>,
    /// Constant body source per phase, indexed by [`Phase::index`].
    pub body_source: [Vec<f64>; 2],
}

impl LoadCase {
    pub fn body(&self, phase: Phase) -> &[f64] {
        &self.body_source[phase.index()]
    }
}

/// Geometry class of an element for matrix evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementKind {
    Standard,
    /// Integration element of a cut parent; `enriched` lists the local
    /// vertices carrying enrichment functions.
    Integration {
        parent: [Vec2; 3],
        enriched: Vec<usize>,
    },
}

/// Shape-function data at the single quadrature point.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementFunctions {
    pub gradients: Vec<Vec2>,
    pub values: Vec<f64>,
    pub area: f64,
}

/// `J = [x1 - x0, x2 - x0]`, the map from the reference triangle.
pub fn triangle_jacobian(v: &[Vec2; 3]) -> Matrix2<f64> {
    let a = v[1] - v[0];
    let b = v[2] - v[0];
    Matrix2::new(a.x, b.x, a.y, b.y)
}

/// Gradients of the three hat functions, `grad N_i = J^-T dN_i/dxi`.
pub fn hat_gradients(v: &[Vec2; 3]) -> Result<[Vec2; 3]> {
    let j = triangle_jacobian(v);
    let jinv = j.try_inverse().filter(|_| signed_area(&v[0], &v[1], &v[2]) > 0.0).ok_or_else(|| {
        Error::DegenerateElement(format!("triangle {v:?} has non-positive area"))
    })?;
    Ok(REFERENCE_GRADIENTS.map(|g| jinv.transpose() * Vec2::new(g[0], g[1])))
}

/// Shape functions of an element at its centroid.
pub fn element_functions(vertices: &[Vec2; 3], kind: &ElementKind) -> Result<ElementFunctions> {
    let area = signed_area(&vertices[0], &vertices[1], &vertices[2]);
    let own = hat_gradients(vertices)?;
    match kind {
        ElementKind::Standard => Ok(ElementFunctions {
            gradients: own.to_vec(),
            values: vec![1.0 / 3.0; 3],
            area,
        }),
        ElementKind::Integration { parent, enriched } => {
            let pgrad = hat_gradients(parent)?;
            let centroid = (vertices[0] + vertices[1] + vertices[2]) / 3.0;
            let lam = crate::enrichment::barycentric(parent, centroid);
            let mut gradients = pgrad.to_vec();
            let mut values = lam.to_vec();
            for &l in enriched {
                gradients.push(own[l]);
                values.push(1.0 / 3.0);
            }
            Ok(ElementFunctions {
                gradients,
                values,
                area,
            })
        }
    }
}

/// Strain-displacement (or gradient) operator for `dim` components.
pub fn b_matrix(gradients: &[Vec2], dim: usize) -> DMatrix<f64> {
    let nf = gradients.len();
    match dim {
        1 => DMatrix::from_fn(2, nf, |r, c| gradients[c][r]),
        2 => {
            let mut b = DMatrix::zeros(3, 2 * nf);
            for (i, g) in gradients.iter().enumerate() {
                b[(0, 2 * i)] = g.x;
                b[(1, 2 * i + 1)] = g.y;
                b[(2, 2 * i)] = g.y;
                b[(2, 2 * i + 1)] = g.x;
            }
            b
        }
        _ => panic!("unsupported field dimension {dim}"),
    }
}

/// `k_e = A Bᵀ D B` (single-point rule).
pub fn element_stiffness(funcs: &ElementFunctions, d: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let b = b_matrix(&funcs.gradients, dim);
    b.transpose() * d * &b * funcs.area
}

/// `f_e = A [N; psi] b` (single-point rule), interleaved by component.
pub fn element_force(funcs: &ElementFunctions, body: &[f64], dim: usize) -> DVector<f64> {
    assert_eq!(body.len(), dim);
    let mut f = DVector::zeros(funcs.values.len() * dim);
    for (i, v) in funcs.values.iter().enumerate() {
        for c in 0..dim {
            f[i * dim + c] = funcs.area * v * body[c];
        }
    }
    f
}

/// Geometry, function layout and global DOFs of integration element `ie`.
pub fn integration_element_setup(model: &EnrichedModel, ie: usize) -> ([Vec2; 3], ElementKind, Vec<usize>) {
    let elem = &model.integration_elements()[ie];
    let mesh = model.mesh();
    let tri = mesh.elements()[elem.parent_element];
    let d = model.field_dim();
    let mut dofs: Vec<usize> = tri
        .iter()
        .flat_map(|&n| (0..d).map(move |c| n * d + c))
        .collect();
    let mut enriched = Vec::new();
    for (l, n) in elem.enriched_locals() {
        enriched.push(l);
        dofs.extend((0..d).map(|c| model.enriched_dof(n, c)));
    }
    let kind = ElementKind::Integration {
        parent: mesh.element_vertices(elem.parent_element),
        enriched,
    };
    (model.integration_vertices(ie), kind, dofs)
}

/// Global DOFs of an uncut parent element.
pub fn standard_element_dofs(model: &EnrichedModel, e: usize) -> Vec<usize> {
    let d = model.field_dim();
    model.mesh().elements()[e]
        .iter()
        .flat_map(|&n| (0..d).map(move |c| n * d + c))
        .collect()
}

fn check_physics(model: &EnrichedModel, materials: &MaterialPair) -> Result<()> {
    if materials.physics().field_dim() != model.field_dim() {
        return Err(Error::InvalidState(format!(
            "model has {} field components but materials are for {:?}",
            model.field_dim(),
            materials.physics()
        )));
    }
    Ok(())
}

/// Assembles the global stiffness matrix and load vector.
pub fn assemble(model: &EnrichedModel, materials: &MaterialPair, loads: &LoadCase) -> Result<(CsrMatrix, Vec<f64>)> {
    check_physics(model, materials)?;
    let dim = model.field_dim();
    let n = model.num_dofs();
    let mesh = model.mesh();
    let d_mat = [materials.constitutive(Phase::Material), materials.constitutive(Phase::Void)];
    let mut triplets = Vec::with_capacity(mesh.num_elements() * 36);
    let mut force = vec![0.0; n];
    let mut scatter = |dofs: &[usize], k: &DMatrix<f64>, f: &DVector<f64>| {
        for (a, &ra) in dofs.iter().enumerate() {
            force[ra] += f[a];
            for (b, &cb) in dofs.iter().enumerate() {
                triplets.push((ra, cb, k[(a, b)]));
            }
        }
    };
    for (e, part) in model.partitions().iter().enumerate() {
        match part {
            ElementPartition::Uncut(phase) => {
                let funcs = element_functions(&mesh.element_vertices(e), &ElementKind::Standard)?;
                let k = element_stiffness(&funcs, &d_mat[phase.index()], dim);
                let f = element_force(&funcs, loads.body(*phase), dim);
                scatter(&standard_element_dofs(model, e), &k, &f);
            }
            ElementPartition::Cut { integration, .. } => {
                for &ie in integration {
                    let phase = model.integration_elements()[ie].material;
                    let (verts, kind, dofs) = integration_element_setup(model, ie);
                    let funcs = element_functions(&verts, &kind)?;
                    let k = element_stiffness(&funcs, &d_mat[phase.index()], dim);
                    let f = element_force(&funcs, loads.body(phase), dim);
                    scatter(&dofs, &k, &f);
                }
            }
        }
    }
    for (node, load) in &loads.point_loads {
        if load.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "point load at node {node} has {} components, expected {dim}",
                load.len()
            )));
        }
        for (c, v) in load.iter().enumerate() {
            force[model.node_dof(*node, c)] += v;
        }
    }
    Ok((CsrMatrix::from_triplets(n, n, triplets), force))
}

/// DOFs held at zero: the supported original DOFs plus enriched DOFs on
/// edges whose two end points are supported in the same component.
pub fn constrained_dofs(model: &EnrichedModel, loads: &LoadCase) -> Vec<usize> {
    let dim = model.field_dim();
    let mut fixed_comp = vec![[false; 2]; model.mesh().num_nodes()];
    let mut dofs = Vec::new();
    for &(node, c) in &loads.fixed {
        fixed_comp[node][c] = true;
        dofs.push(model.node_dof(node, c));
    }
    for (n, en) in model.enriched_nodes().iter().enumerate() {
        let [j, k] = en.parent_edge;
        for c in 0..dim {
            if fixed_comp[j][c] && fixed_comp[k][c] {
                dofs.push(model.enriched_dof(n, c));
            }
        }
    }
    dofs.sort_unstable();
    dofs.dedup();
    dofs
}

/// Human-readable name of a global DOF.
pub fn describe_dof(model: &EnrichedModel, dof: usize) -> String {
    let d = model.field_dim();
    if dof < model.num_original_dofs() {
        let node = dof / d;
        let p = model.mesh().node(node);
        format!("node {node} at ({}, {}) component {}", p.x, p.y, dof % d)
    } else {
        let n = (dof - model.num_original_dofs()) / d;
        let p = model.enriched_nodes()[n].location;
        format!("enriched node {n} at ({}, {}) component {}", p.x, p.y, dof % d)
    }
}

/// Solves `K U = F` with the listed DOFs held at zero. The reduced system
/// is Jacobi-scaled and factorized with a sparse Cholesky.
pub fn solve(k: &CsrMatrix, f: &[f64], constrained: &[usize]) -> Result<Vec<f64>> {
    let n = k.nrows();
    let mut is_fixed = vec![false; n];
    for &c in constrained {
        is_fixed[c] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !is_fixed[i]).collect();
    let mut u = vec![0.0; n];
    if free.is_empty() {
        return Ok(u);
    }
    let kff = k.principal_submatrix(&free);
    let ff: Vec<f64> = free.iter().map(|&i| f[i]).collect();
    let diag = kff.diagonal();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Singular(format!("free DOF {} has no stiffness", free[i])));
    }
    let scale: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut triplets = Vec::with_capacity(kff.nnz());
    for i in 0..kff.nrows() {
        let (cols, vals) = kff.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            triplets.push((i, c, scale[i] * v * scale[c]));
        }
    }
    let scaled = CsrMatrix::from_triplets(kff.nrows(), kff.ncols(), triplets);
    let rhs: Vec<f64> = ff.iter().zip(&scale).map(|(v, s)| v * s).collect();
    let factor = EnvelopeCholesky::factorize(&scaled, PIVOT_TOL).map_err(|p| {
        Error::Singular(format!(
            "unconstrained mode at DOF {} (scaled pivot {:e})",
            free[p.row], p.pivot
        ))
    })?;
    let mut x = factor.solve(&rhs);
    let rhs_norm = norm(&rhs);
    let residual = |x: &[f64]| -> (Vec<f64>, f64) {
        let ax = scaled.mul_vec(x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let n = if rhs_norm > 0.0 { norm(&r) / rhs_norm } else { 0.0 };
        (r, n)
    };
    let (mut r, mut res) = residual(&x);
    for _ in 0..MAX_REFINEMENTS {
        if res <= 1e-3 * SOLVE_RESIDUAL_TOL {
            break;
        }
        let dx = factor.solve(&r);
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(xi, d)| xi + d).collect();
        let (trial_r, trial_res) = residual(&trial);
        if !(trial_res < res) {
            break;
        }
        x = trial;
        r = trial_r;
        res = trial_res;
    }
    if !(res <= SOLVE_RESIDUAL_TOL) {
        return Err(Error::NumericGuard(format!(
            "relative residual {res:e} of the scaled system exceeds {SOLVE_RESIDUAL_TOL:e}"
        )));
    }
    let uf: Vec<f64> = x.iter().zip(&scale).map(|(v, s)| v * s).collect();
    for (&i, v) in free.iter().zip(uf) {
        u[i] = v;
    }
    Ok(u)
}

/// Outcome of one analysis.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub dofs: Vec<f64>,
    pub compliance: f64,
    pub material_volume: f64,
    model_stamp: u64,
}

impl SolveResult {
    /// Stamp of the enriched model this result belongs to.
    pub fn model_stamp(&self) -> u64 {
        self.model_stamp
    }
}

/// Area of the material phase.
pub fn material_volume(model: &EnrichedModel) -> f64 {
    model.phase_area(Phase::Material)
}

/// Assembles, constrains and solves one design; compliance is `Uᵀ F`.
pub fn analyze(model: &EnrichedModel, materials: &MaterialPair, loads: &LoadCase) -> Result<SolveResult> {
    let (k, f) = assemble(model, materials, loads)?;
    let constrained = constrained_dofs(model, loads);
    let u = solve(&k, &f, &constrained).map_err(|e| match e {
        Error::Singular(msg) => {
            let dof = msg
                .split("DOF ")
                .nth(1)
                .and_then(|s| s.split_whitespace().next())
                .and_then(|s| s.parse::<usize>().ok());
            match dof {
                Some(d) => Error::Singular(format!("{msg}: free mode at {}", describe_dof(model, d))),
                None => Error::Singular(msg),
            }
        }
        other => other,
    })?;
    let ku = k.mul_vec(&u);
    let compliance = 2.0 * crate::sparse::dot(&u, &f) - crate::sparse::dot(&u, &ku);
    Ok(SolveResult {
        dofs: u,
        compliance,
        material_volume: material_volume(model),
        model_stamp: model.stamp(),
    })
}

/// Field value at an enriched node: `sum N_i U_i + alpha`.
pub fn enriched_node_value(model: &EnrichedModel, u: &[f64], enriched: usize, component: usize) -> f64 {
    let en = &model.enriched_nodes()[enriched];
    let [j, k] = en.parent_edge;
    let t = en.edge_fraction;
    (1.0 - t) * u[model.node_dof(j, component)]
        + t * u[model.node_dof(k, component)]
        + u[model.enriched_dof(enriched, component)]
}

/// Vertices of an integration element by reference (for exports).
pub fn vertex_refs(model: &EnrichedModel, ie: usize) -> [VertexRef; 3] {
    model.integration_elements()[ie].vertices
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enrichment::snap_nodal_levelset;
    use crate::mesh::{Diagonal, Mesh};

    fn unit_tri() -> [Vec2; 3] {
        [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]
    }

    fn elastic(e_void: f64, nu: f64) -> MaterialPair {
        MaterialPair::Elastic {
            material: ElasticMaterial { youngs_modulus: 1.0, poisson_ratio: nu },
            void: ElasticMaterial { youngs_modulus: e_void, poisson_ratio: nu },
        }
    }

    #[test]
    fn heat_conduction_matrix_of_unit_triangle() {
        let funcs = element_functions(&unit_tri(), &ElementKind::Standard).unwrap();
        let k = element_stiffness(&funcs, &DMatrix::identity(2, 2), 1);
        // hand integration: grads (-1,-1), (1,0), (0,1) times area 1/2
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[(i, j)] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn elastic_element_has_rigid_body_nullspace() {
        let v = [Vec2::new(0.1, 0.2), Vec2::new(1.3, -0.1), Vec2::new(0.4, 0.9)];
        let funcs = element_functions(&v, &ElementKind::Standard).unwrap();
        let k = element_stiffness(&funcs, &elastic(1e-6, 0.3).constitutive(Phase::Material), 2);
        assert!((&k - k.transpose()).norm() < 1e-15);
        let tx = DVector::from_fn(6, |i, _| if i % 2 == 0 { 1.0 } else { 0.0 });
        let ty = DVector::from_fn(6, |i, _| if i % 2 == 1 { 1.0 } else { 0.0 });
        let rot = DVector::from_fn(6, |i, _| if i % 2 == 0 { -v[i / 2].y } else { v[i / 2].x });
        for mode in [tx, ty, rot] {
            assert!((&k * mode).norm() < 1e-14);
        }
    }

    #[test]
    fn degenerate_element_is_rejected() {
        let v = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        assert!(matches!(
            element_functions(&v, &ElementKind::Standard),
            Err(Error::DegenerateElement(_))
        ));
    }

    #[test]
    fn integration_elements_reproduce_parent_with_equal_materials() {
        let mesh = Mesh::new(unit_tri().to_vec(), vec![[0, 1, 2]]).unwrap();
        let model = crate::enrichment::EnrichedModel::build(&mesh, &[-1.0, 2.0, 0.7], 2).unwrap();
        let d = elastic(1.0, 0.3).constitutive(Phase::Material);
        let std = element_stiffness(&element_functions(&unit_tri(), &ElementKind::Standard).unwrap(), &d, 2);
        let mut sum = DMatrix::zeros(6, 6);
        for ie in 0..3 {
            let (verts, kind, _) = integration_element_setup(&model, ie);
            let k = element_stiffness(&element_functions(&verts, &kind).unwrap(), &d, 2);
            assert!((&k - k.transpose()).norm() < 1e-14);
            sum += k.view((0, 0), (6, 6));
        }
        assert!((sum - std).norm() < 1e-12);
    }

    #[test]
    fn element_forces() {
        let funcs = element_functions(&unit_tri(), &ElementKind::Standard).unwrap();
        assert!(element_force(&funcs, &[0.0], 1).iter().all(|&v| v == 0.0));
        let f = element_force(&funcs, &[1.0], 1);
        assert!(f.iter().all(|&v| (v - 0.5 / 3.0).abs() < 1e-15));

        let mesh = Mesh::new(unit_tri().to_vec(), vec![[0, 1, 2]]).unwrap();
        let model = crate::enrichment::EnrichedModel::build(&mesh, &[0.4, -1.0, 0.3], 1).unwrap();
        let mut original_total = 0.0;
        for ie in 0..3 {
            let (verts, kind, _) = integration_element_setup(&model, ie);
            let f = element_force(&element_functions(&verts, &kind).unwrap(), &[1.0], 1);
            original_total += f.rows(0, 3).sum();
            // enriched entries are non-zero on cut elements
            assert!(f.rows(3, f.len() - 3).iter().all(|&v| v > 0.0));
        }
        assert!((original_total - 0.5).abs() < 1e-15);
    }

    #[test]
    fn assembly_of_single_and_patch() {
        let mesh = Mesh::new(unit_tri().to_vec(), vec![[0, 1, 2]]).unwrap();
        let model = crate::enrichment::EnrichedModel::build(&mesh, &[1.0; 3], 1).unwrap();
        let mats = MaterialPair::Thermal { material: 1.0, void: 0.01 };
        let (k, _) = assemble(&model, &mats, &LoadCase { body_source: [vec![0.0], vec![0.0]], ..Default::default() }).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        assert_eq!(k.get(1, 2), 0.0);

        let mesh = Mesh::structured_grid(1.0, 1.0, 2, 2, Diagonal::default()).unwrap();
        let phi = [1.0, -1.0, 1.0, 0.5];
        let model = crate::enrichment::EnrichedModel::build(&mesh, &phi, 2).unwrap();
        let loads = LoadCase { body_source: [vec![0.3, -1.0], vec![0.0, 0.0]], ..Default::default() };
        let (k, f) = assemble(&model, &elastic(1e-3, 0.3), &loads).unwrap();
        assert_eq!(k.nrows(), model.num_dofs());
        assert_eq!(k.asymmetry(), 0.0);
        // loads are conserved over original DOFs
        let fy: f64 = (0..4).map(|n| f[2 * n + 1]).sum();
        let material = model.phase_area(Phase::Material);
        assert!((fy + material).abs() < 1e-14);
    }

    #[test]
    fn homogeneous_linear_field_has_zero_enrichment() {
        // identical phases, linear exact temperature: enriched DOFs vanish
        let mesh = Mesh::structured_grid(1.0, 1.0, 6, 6, Diagonal::default()).unwrap();
        let phi: Vec<f64> = mesh.nodes().iter().map(|p| (p.x - 0.37) + 0.2 * (p.y - 0.5)).collect();
        let phi = snap_nodal_levelset(&phi, 1e-12).unwrap();
        let model = crate::enrichment::EnrichedModel::build(&mesh, &phi, 1).unwrap();
        let mats = MaterialPair::Thermal { material: 1.0, void: 1.0 - 1e-15 };
        let mut loads = LoadCase { body_source: [vec![0.0], vec![0.0]], ..Default::default() };
        for &n in mesh.boundary_nodes("left").unwrap() {
            loads.fixed.push((n, 0));
        }
        let right = mesh.boundary_nodes("right").unwrap();
        let h = 1.0 / 5.0;
        for (i, &n) in right.iter().enumerate() {
            let w = if i == 0 || i == right.len() - 1 { 0.5 } else { 1.0 };
            loads.point_loads.push((n, vec![w * h]));
        }
        let res = analyze(&model, &mats, &loads).unwrap();
        for n in 0..model.enriched_nodes().len() {
            assert!(res.dofs[model.enriched_dof(n, 0)].abs() < 1e-10);
        }
        for (j, p) in mesh.nodes().iter().enumerate() {
            assert!((res.dofs[j] - p.x).abs() < 1e-10);
        }
        let (k, f) = assemble(&model, &mats, &loads).unwrap();
        let ku = k.mul_vec(&res.dofs);
        let utku = crate::sparse::dot(&res.dofs, &ku);
        let utf = crate::sparse::dot(&res.dofs, &f);
        assert!((utku - utf).abs() <= 1e-10 * utf.abs());
        assert!((res.compliance - utf).abs() <= 1e-12 * utf);
    }

    #[test]
    fn unsupported_system_names_a_mode() {
        let mesh = Mesh::structured_grid(1.0, 1.0, 3, 3, Diagonal::default()).unwrap();
        let model = crate::enrichment::EnrichedModel::build(&mesh, &[1.0; 9], 2).unwrap();
        let loads = LoadCase { body_source: [vec![0.0, 0.0], vec![0.0, 0.0]], ..Default::default() };
        let err = analyze(&model, &elastic(1e-6, 0.3), &loads).unwrap_err();
        match err {
            Error::Singular(msg) => assert!(msg.contains("node"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn material_volumes() {
        let mesh = Mesh::structured_grid(2.0, 1.0, 8, 5, Diagonal::default()).unwrap();
        let pos = crate::enrichment::EnrichedModel::build(&mesh, &vec![1.0; 40], 1).unwrap();
        assert!((material_volume(&pos) - 2.0).abs() < 1e-14);
        let neg = crate::enrichment::EnrichedModel::build(&mesh, &vec![-1.0; 40], 1).unwrap();
        assert_eq!(material_volume(&neg), 0.0);
        let phi: Vec<f64> = mesh.nodes().iter().map(|p| p.x - 0.5 * 2.0).collect();
        let phi = snap_nodal_levelset(&phi, 1e-10).unwrap();
        let half = crate::enrichment::EnrichedModel::build(&mesh, &phi, 1).unwrap();
        assert!((material_volume(&half) - 1.0).abs() < 1e-10);
    }
}
