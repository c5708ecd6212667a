//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use igfem_topo::driver::{builtin_problem, run_optimization, Problem, ResolutionOverrides};
use igfem_topo::enrichment::{snap_epsilon, snap_nodal_levelset, ElementPartition, EnrichedModel, Phase, VertexRef};
use igfem_topo::mesh::{Diagonal, Mesh};
use igfem_topo::physics::{
    analyze, element_force, element_functions, element_stiffness, enriched_node_value, integration_element_setup,
    triangle_jacobian, ElasticMaterial, LoadCase, MaterialPair,
};
use igfem_topo::sensitivity::{
    element_force_derivative, element_stiffness_derivative, jacobian_determinant_derivative,
    jacobian_inverse_derivative,
};
use igfem_topo::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn elastic(e_material: f64, e_void: f64, nu: f64) -> MaterialPair {
    MaterialPair::Elastic {
        material: ElasticMaterial { youngs_modulus: e_material, poisson_ratio: nu },
        void: ElasticMaterial { youngs_modulus: e_void, poisson_ratio: nu },
    }
}

pub fn snapped_model<'m>(mesh: &'m Mesh, phi: &[f64], dim: usize) -> EnrichedModel<'m> {
    let snapped = snap_nodal_levelset(phi, snap_epsilon(phi)).unwrap();
    EnrichedModel::build(mesh, &snapped, dim).unwrap()
}

/// Left edge held in x (and the bottom-left corner in y), unit traction in
/// x on the right edge lumped to its nodes.
pub fn uniaxial_loads(mesh: &Mesh, dim: usize) -> LoadCase {
    let left = mesh.boundary_nodes("left").unwrap();
    let right = mesh.boundary_nodes("right").unwrap();
    let mut loads = LoadCase {
        body_source: [vec![0.0; dim], vec![0.0; dim]],
        ..Default::default()
    };
    loads.fixed = left.iter().map(|&n| (n, 0)).collect();
    if dim == 2 {
        let corner = mesh.nearest_node(Vec2::new(0.0, 0.0));
        loads.fixed.push((corner, 1));
    }
    let mut ys: Vec<(f64, usize)> = right.iter().map(|&n| (mesh.node(n).y, n)).collect();
    ys.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (i, &(y, n)) in ys.iter().enumerate() {
        let below = if i > 0 { y - ys[i - 1].0 } else { 0.0 };
        let above = if i + 1 < ys.len() { ys[i + 1].0 - y } else { 0.0 };
        let mut v = vec![0.0; dim];
        v[0] = 0.5 * (below + above);
        loads.point_loads.push((n, v));
    }
    loads
}

/// Largest nodal error of the two-material bar, relative to the largest
/// exact value. The interface `x = interface` separates a stiff left part
/// from a soft right part; with unit flux the exact field is the series
/// spring solution `u(x) = x / k1` left and `a / k1 + (x - a) / k2` right.
pub fn bimaterial_error(materials: &MaterialPair, nx: usize, interface: f64) -> f64 {
    let (k1, k2, dim) = match materials {
        MaterialPair::Elastic { material, void } => (material.youngs_modulus, void.youngs_modulus, 2),
        MaterialPair::Thermal { material, void } => (*material, *void, 1),
    };
    let mesh = Mesh::structured_grid(1.0, 1.0, nx, nx, Diagonal::default()).unwrap();
    let phi: Vec<f64> = mesh.nodes().iter().map(|p| interface - p.x).collect();
    let model = snapped_model(&mesh, &phi, dim);
    assert!(model.num_cut_elements() > 0, "interface must cut the mesh");
    let loads = uniaxial_loads(&mesh, dim);
    let res = analyze(&model, materials, &loads).unwrap();
    let exact = |x: f64| if x <= interface { x / k1 } else { interface / k1 + (x - interface) / k2 };
    let scale = exact(1.0);
    let mut worst = 0.0f64;
    for (i, p) in mesh.nodes().iter().enumerate() {
        worst = worst.max((res.dofs[model.node_dof(i, 0)] - exact(p.x)).abs());
        if dim == 2 {
            worst = worst.max(res.dofs[model.node_dof(i, 1)].abs());
        }
    }
    for (n, en) in model.enriched_nodes().iter().enumerate() {
        worst = worst.max((enriched_node_value(&model, &res.dofs, n, 0) - exact(en.location.x)).abs());
    }
    worst / scale
}

/// Worst relative errors of the element derivatives over random cut
/// triangles: `[dj, dJinv, dk, df]`.
pub fn element_derivative_errors(configs: usize, seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    let h = 1e-7;
    let mut done = 0;
    while done < configs {
        let mut pts: Vec<Vec2> = (0..3).map(|_| Vec2::new(rng.random::<f64>(), rng.random::<f64>())).collect();
        let area = 0.5 * ((pts[1] - pts[0]).perp(&(pts[2] - pts[0])));
        if area.abs() < 0.05 {
            continue;
        }
        if area < 0.0 {
            pts.swap(1, 2);
        }
        let lone = rng.random_range(0..3);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let phi: Vec<f64> = (0..3)
            .map(|i| {
                let m = rng.random_range(0.1..1.0);
                if i == lone { sign * m } else { -sign * m }
            })
            .collect();
        let mesh = Mesh::new(pts, vec![[0, 1, 2]]).unwrap();
        let (materials, dim, body) = if done % 2 == 0 {
            (elastic(1.0, 1e-6, 0.3), 2, vec![0.4, -1.0])
        } else {
            (MaterialPair::Thermal { material: 1.0, void: 0.01 }, 1, vec![1.0])
        };
        let model = snapped_model(&mesh, &phi, dim);
        for ie in 0..model.integration_elements().len() {
            let (v, kind, _) = integration_element_setup(&model, ie);
            let d = materials.constitutive(model.integration_elements()[ie].material);
            let diam = (0..3).map(|i| (v[i] - v[(i + 1) % 3]).norm()).fold(0.0, f64::max);
            let locals: Vec<usize> = model.integration_elements()[ie].enriched_locals().map(|(l, _)| l).collect();
            for &l in &locals {
                for c in 0..2 {
                    let moved = |s: f64| {
                        let mut w = v;
                        w[l][c] += s * h;
                        w
                    };
                    let (p, m) = (moved(1.0), moved(-1.0));
                    let rel = |an: f64, fd: f64, scale: f64| (an - fd).abs() / an.abs().max(1e-8 * scale);

                    let det = |w: &[Vec2; 3]| triangle_jacobian(w).determinant();
                    let an = jacobian_determinant_derivative(&v, Some(l), c);
                    let fd = (det(&p) - det(&m)) / (2.0 * h);
                    worst[0] = worst[0].max(rel(an, fd, det(&v).abs() / diam));

                    let inv = |w: &[Vec2; 3]| triangle_jacobian(w).try_inverse().unwrap();
                    let an = jacobian_inverse_derivative(&v, Some(l), c).unwrap();
                    let fd = (inv(&p) - inv(&m)) / (2.0 * h);
                    worst[1] = worst[1].max((an - fd).norm() / an.norm().max(1e-8 * inv(&v).norm() / diam));

                    let k_at = |w: &[Vec2; 3]| element_stiffness(&element_functions(w, &kind).unwrap(), &d, dim);
                    let an = element_stiffness_derivative(&v, &kind, &d, dim, Some(l), c).unwrap();
                    let fd = (k_at(&p) - k_at(&m)) / (2.0 * h);
                    worst[2] = worst[2].max((&an - &fd).norm() / an.norm().max(1e-8 * k_at(&v).norm() / diam));

                    let f_at = |w: &[Vec2; 3]| element_force(&element_functions(w, &kind).unwrap(), &body, dim);
                    let an = element_force_derivative(&v, &kind, &body, dim, Some(l), c).unwrap();
                    let fd = (f_at(&p) - f_at(&m)) / (2.0 * h);
                    worst[3] = worst[3].max((&an - &fd).norm() / an.norm().max(1e-8 * f_at(&v).norm() / diam));
                }
            }
        }
        done += 1;
    }
    worst
}

/// Random smooth levelset on a random structured mesh.
pub fn random_case(rng: &mut ChaCha8Rng) -> (Mesh, Vec<f64>) {
    let nx = rng.random_range(3..16);
    let ny = rng.random_range(3..16);
    let diag = if rng.random::<bool>() { Diagonal::default() } else { Diagonal::LowerRightUpperLeft };
    let w = rng.random_range(0.5..3.0);
    let mesh = Mesh::structured_grid(w, 1.0, nx, ny, diag).unwrap();
    let (a, b, c, off) = (
        rng.random_range(2.0..9.0),
        rng.random_range(2.0..9.0),
        rng.random_range(0.0..6.3),
        rng.random_range(-0.5..0.5),
    );
    let phi = mesh
        .nodes()
        .iter()
        .map(|p| (a * p.x + c).cos() * (b * p.y).sin() + off)
        .collect();
    (mesh, phi)
}

/// Checks the enrichment invariants on `cases` random levelsets; returns
/// the worst area mismatch, worst psi at original vertices and worst
/// enriched DOF for homogeneous linear fields.
pub fn enrichment_invariants(cases: usize, seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 3];
    for case in 0..cases {
        let (mesh, mut phi) = random_case(&mut rng);
        // keep the loaded right edge uncut
        let right: Vec<usize> = mesh.boundary_nodes("right").unwrap().to_vec();
        for &n in &right {
            phi[n] = phi[n].abs() + 0.5;
        }
        let dim = 1 + case % 2;
        let model = snapped_model(&mesh, &phi, dim);
        for (e, part) in model.partitions().iter().enumerate() {
            if let ElementPartition::Cut { integration, .. } = part {
                let sum: f64 = integration.iter().map(|&ie| model.integration_area(ie)).sum();
                worst[0] = worst[0].max((sum - mesh.element_area(e)).abs());
            }
        }
        let total = model.phase_area(Phase::Material) + model.phase_area(Phase::Void);
        worst[0] = worst[0].max((total - mesh.area()).abs());
        for (ie, el) in model.integration_elements().iter().enumerate() {
            for v in el.vertices {
                match v {
                    VertexRef::Original(j) => {
                        for (_, psi) in model.enrichment_value(ie, mesh.node(j)) {
                            worst[1] = worst[1].max(psi.abs());
                        }
                    }
                    VertexRef::Enriched(n) => {
                        for (m, psi) in model.enrichment_value(ie, model.enriched_nodes()[n].location) {
                            let expected = if m == n { 1.0 } else { 0.0 };
                            worst[1] = worst[1].max((psi - expected).abs());
                        }
                    }
                }
            }
        }
        let materials = if dim == 2 {
            elastic(1.0, 1.0, 0.0)
        } else {
            MaterialPair::Thermal { material: 1.0, void: 1.0 }
        };
        let res = analyze(&model, &materials, &uniaxial_loads(&mesh, dim)).unwrap();
        for d in model.num_original_dofs()..model.num_dofs() {
            worst[2] = worst[2].max(res.dofs[d].abs());
        }
    }
    worst
}

/// Two identical short runs and two identical solves agree bit for bit.
pub fn reruns_are_bitwise_identical() -> bool {
    let mut spec = builtin_problem("heat_sink", ResolutionOverrides::default()).unwrap();
    spec.iterations = 4;
    let p = Problem::new(spec).unwrap();
    let a = run_optimization(&p, |_, _| Ok(())).unwrap();
    let b = run_optimization(&p, |_, _| Ok(())).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let hist = |o: &igfem_topo::driver::RunOutcome| {
        o.history
            .iter()
            .map(|r| (r.compliance.to_bits(), r.volume_fraction.to_bits(), r.enriched_dofs))
            .collect::<Vec<_>>()
    };
    let s = p.initial_design().unwrap();
    let e1 = p.evaluate(&s, true).unwrap();
    let e2 = p.evaluate(&s, true).unwrap();
    hist(&a) == hist(&b)
        && bits(&a.design) == bits(&b.design)
        && e1.compliance.to_bits() == e2.compliance.to_bits()
        && bits(&e1.compliance_gradient) == bits(&e2.compliance_gradient)
}
