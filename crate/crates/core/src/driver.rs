//! Benchmark problems and the optimization loop.
//!
//! Every iteration evaluates the nodal levelset, snaps it, rebuilds the
//! enriched model, solves, and feeds the normalised compliance and the
//! volume constraint `V / (V_c V_total) - 1 <= 0` with their gradients to
//! MMA.

use log::{debug, info};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::enrichment::{snap_epsilon, snap_nodal_levelset, EnrichedModel};
use crate::mesh::{Diagonal, Mesh};
use crate::mma::{MmaSettings, MmaState};
use crate::physics::{analyze, ElasticMaterial, LoadCase, MaterialPair, Physics};
use crate::rbf::{fit_initial_design, LevelsetField, RbfGrid};
use crate::sensitivity::{compliance_gradient, volume_gradient};
use crate::{Error, Result, Vec2};

/// Names accepted by [`builtin_problem`].
pub const BUILTIN_PROBLEMS: [&str; 3] = ["cantilever", "mbb", "heat_sink"];

/// RBF lattices studied for the MBB beam.
pub const MBB_RBF_GRIDS: [[usize; 2]; 4] = [[61, 21], [91, 31], [121, 41], [151, 51]];

/// Selects mesh nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NodeSelector {
    /// All nodes of a tagged boundary (`left`, `right`, `bottom`, `top`).
    Boundary(String),
    /// The node closest to a point.
    Nearest([f64; 2]),
    /// Nodes inside an axis-aligned box.
    Box { min: [f64; 2], max: [f64; 2] },
}

impl NodeSelector {
    pub fn resolve(&self, mesh: &Mesh) -> Result<Vec<usize>> {
        match self {
            NodeSelector::Boundary(tag) => mesh.boundary_nodes(tag).map(|n| n.to_vec()).ok_or_else(|| {
                Error::config(format!(
                    "unknown boundary '{tag}'; known: {}",
                    mesh.boundary_tags().collect::<Vec<_>>().join(", ")
                ))
            }),
            NodeSelector::Nearest(p) => Ok(vec![mesh.nearest_node(Vec2::new(p[0], p[1]))]),
            NodeSelector::Box { min, max } => {
                let (lo, hi) = mesh.bounding_box();
                let tol = 1e-9 * (hi - lo).norm();
                let nodes = mesh.nodes_in_box(Vec2::new(min[0], min[1]), Vec2::new(max[0], max[1]), tol);
                if nodes.is_empty() {
                    return Err(Error::config(format!("box {min:?}..{max:?} selects no nodes")));
                }
                Ok(nodes)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportSpec {
    pub nodes: NodeSelector,
    /// Field components held at zero.
    pub components: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointLoadSpec {
    pub nodes: NodeSelector,
    /// Load applied at every selected node.
    pub value: Vec<f64>,
}

/// Constant body source per phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BodySource {
    pub material: Vec<f64>,
    pub void: Vec<f64>,
}

/// Levelset used to seed the design variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialDesign {
    /// Circular holes; `phi` is the signed distance to the nearest hole,
    /// clamped to `clamp_spacings` RBF spacings.
    Holes {
        centers: Vec<[f64; 2]>,
        radius: f64,
        #[serde(default = "default_clamp")]
        clamp_spacings: f64,
    },
    /// `phi = offset - cos(pi nx x / W) cos(pi ny y / H)`.
    CosineLattice { counts: [usize; 2], offset: f64 },
    Uniform { value: f64 },
}

fn default_clamp() -> f64 {
    3.0
}

fn default_true() -> bool {
    true
}

fn default_tol() -> f64 {
    1e-6
}

fn default_window() -> usize {
    10
}

fn default_radius_factor() -> f64 {
    std::f64::consts::SQRT_2
}

/// Full description of one optimization problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: String,
    pub physics: Physics,
    /// Width and height.
    pub domain: [f64; 2],
    /// Mesh nodes along x and y.
    pub mesh: [usize; 2],
    #[serde(default)]
    pub diagonal: Diagonal,
    /// RBF centers along x and y.
    pub rbf_grid: [usize; 2],
    /// Support radius in units of the RBF x-spacing.
    #[serde(default = "default_radius_factor")]
    pub rbf_radius_factor: f64,
    pub materials: MaterialPair,
    pub supports: Vec<SupportSpec>,
    #[serde(default)]
    pub point_loads: Vec<PointLoadSpec>,
    #[serde(default)]
    pub body_source: BodySource,
    pub volume_fraction: f64,
    pub initial_design: InitialDesign,
    pub iterations: usize,
    #[serde(default)]
    pub optimizer: MmaSettings,
    /// Stop once `max |ds| < convergence_tol` for `convergence_window`
    /// consecutive steps.
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    #[serde(default = "default_window")]
    pub convergence_window: usize,
    /// Divide the objective by the initial compliance.
    #[serde(default = "default_true")]
    pub normalize_objective: bool,
    /// Keep nodes picked by `nearest` supports and loads inside the
    /// material by raising the lower bound of their dominant RBF.
    #[serde(default = "default_true")]
    pub solid_anchors: bool,
}

impl ProblemSpec {
    /// All violations of the physical and structural constraints.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
            errs.push(format!(
                "problem.volume_fraction must lie in (0, 1), got {}",
                self.volume_fraction
            ));
        }
        if !(self.domain[0] > 0.0 && self.domain[1] > 0.0) {
            errs.push(format!("problem.domain must be positive, got {:?}", self.domain));
        }
        if self.mesh[0] < 2 || self.mesh[1] < 2 {
            errs.push(format!("problem.mesh needs at least 2x2 nodes, got {:?}", self.mesh));
        }
        if self.rbf_grid[0] < 2 || self.rbf_grid[1] < 2 {
            errs.push(format!("problem.rbf_grid needs at least 2x2 centers, got {:?}", self.rbf_grid));
        }
        if !(self.rbf_radius_factor > 0.0) {
            errs.push(format!(
                "problem.rbf_radius_factor must be positive, got {}",
                self.rbf_radius_factor
            ));
        }
        if self.materials.physics() != self.physics {
            errs.push(format!(
                "problem.materials are {:?} but physics is {:?}",
                self.materials.physics(),
                self.physics
            ));
        }
        errs.extend(self.materials.validate());
        let dim = self.physics.field_dim();
        for (i, s) in self.supports.iter().enumerate() {
            if s.components.is_empty() || s.components.iter().any(|&c| c >= dim) {
                errs.push(format!(
                    "problem.supports[{i}].components {:?} invalid for {dim} field components",
                    s.components
                ));
            }
        }
        for (i, l) in self.point_loads.iter().enumerate() {
            if l.value.len() != dim {
                errs.push(format!(
                    "problem.point_loads[{i}].value has {} entries, expected {dim}",
                    l.value.len()
                ));
            }
        }
        for (name, v) in [("material", &self.body_source.material), ("void", &self.body_source.void)] {
            if !v.is_empty() && v.len() != dim {
                errs.push(format!(
                    "problem.body_source.{name} has {} entries, expected {dim}",
                    v.len()
                ));
            }
        }
        if self.supports.is_empty() {
            errs.push("problem.supports is empty; the system would be singular".into());
        }
        if self.iterations == 0 {
            errs.push("problem.iterations must be at least 1".into());
        }
        if !(self.convergence_tol >= 0.0) {
            errs.push("problem.convergence_tol must be non-negative".into());
        }
        if self.convergence_window == 0 {
            errs.push("problem.convergence_window must be at least 1".into());
        }
        match &self.initial_design {
            InitialDesign::Holes { radius, clamp_spacings, .. } => {
                if !(*radius >= 0.0) || !(*clamp_spacings > 0.0) {
                    errs.push("problem.initial_design needs radius >= 0 and clamp_spacings > 0".into());
                }
            }
            InitialDesign::CosineLattice { counts, .. } => {
                if counts[0] == 0 || counts[1] == 0 {
                    errs.push("problem.initial_design.counts must be positive".into());
                }
            }
            InitialDesign::Uniform { value } => {
                if !value.is_finite() {
                    errs.push("problem.initial_design.value must be finite".into());
                }
            }
        }
        errs.extend(self.optimizer.validate());
        errs
    }
}

/// Resolution overrides for [`builtin_problem`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ResolutionOverrides {
    pub mesh: Option<[usize; 2]>,
    pub rbf_grid: Option<[usize; 2]>,
}

fn steel_like() -> MaterialPair {
    MaterialPair::Elastic {
        material: ElasticMaterial { youngs_modulus: 1.0, poisson_ratio: 0.3 },
        void: ElasticMaterial { youngs_modulus: 1e-6, poisson_ratio: 0.3 },
    }
}

/// Hole pattern of the 88-line parametric levelset code, scaled to `w x h`.
fn cantilever_holes(w: f64, h: f64) -> Vec<[f64; 2]> {
    let hx = [1.0 / 6.0, 5.0 / 6.0, 1.0 / 6.0, 5.0 / 6.0, 1.0 / 6.0, 5.0 / 6.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 0.5];
    let hy = [0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75, 0.5];
    hx.iter().zip(hy).map(|(x, y)| [x * w, y * h]).collect()
}

/// Staggered lattice: rows at `0, 1/2, 1` with `n` holes at odd multiples
/// of `1/(2n)`, rows at `1/4, 3/4` with `n + 1` holes at multiples of `1/n`.
fn staggered_holes(w: f64, h: f64, n: usize) -> Vec<[f64; 2]> {
    let mut c = Vec::new();
    for y in [0.0, 0.5, 1.0] {
        for i in 0..n {
            c.push([w * (2 * i + 1) as f64 / (2 * n) as f64, h * y]);
        }
    }
    for y in [0.25, 0.75] {
        for i in 0..=n {
            c.push([w * i as f64 / n as f64, h * y]);
        }
    }
    c
}

/// Levelset value guaranteed at anchored nodes.
pub const ANCHOR_MARGIN: f64 = 0.05;

/// Hole radius of the built-in heat-sink seed.
pub const HEAT_SINK_HOLE_RADIUS: f64 = 0.1;

/// Fully populated benchmark specification.
pub fn builtin_problem(name: &str, overrides: ResolutionOverrides) -> Result<ProblemSpec> {
    let mut spec = match name {
        "cantilever" => {
            let (w, h) = (2.0, 1.0);
            let mesh = overrides.mesh.unwrap_or([21, 11]);
            ProblemSpec {
                name: name.into(),
                physics: Physics::Elastostatics,
                domain: [w, h],
                mesh,
                diagonal: Diagonal::default(),
                rbf_grid: overrides.rbf_grid.unwrap_or(mesh),
                rbf_radius_factor: default_radius_factor(),
                materials: steel_like(),
                supports: vec![SupportSpec {
                    nodes: NodeSelector::Boundary("left".into()),
                    components: vec![0, 1],
                }],
                point_loads: vec![PointLoadSpec {
                    nodes: NodeSelector::Nearest([w, h / 2.0]),
                    value: vec![0.0, -1.0],
                }],
                body_source: BodySource::default(),
                volume_fraction: 0.55,
                initial_design: InitialDesign::Holes {
                    centers: cantilever_holes(w, h),
                    radius: 0.1 * h,
                    clamp_spacings: 3.0,
                },
                iterations: 300,
                optimizer: MmaSettings::default(),
                convergence_tol: default_tol(),
                convergence_window: default_window(),
                normalize_objective: true,
                solid_anchors: true,
            }
        }
        "mbb" => {
            let (w, h) = (3.0, 1.0);
            let mesh = overrides.mesh.unwrap_or([151, 51]);
            ProblemSpec {
                name: name.into(),
                physics: Physics::Elastostatics,
                domain: [w, h],
                mesh,
                diagonal: Diagonal::default(),
                rbf_grid: overrides.rbf_grid.unwrap_or(MBB_RBF_GRIDS[0]),
                rbf_radius_factor: default_radius_factor(),
                materials: steel_like(),
                supports: vec![
                    SupportSpec {
                        nodes: NodeSelector::Boundary("left".into()),
                        components: vec![0],
                    },
                    SupportSpec {
                        nodes: NodeSelector::Nearest([w, 0.0]),
                        components: vec![1],
                    },
                ],
                point_loads: vec![PointLoadSpec {
                    nodes: NodeSelector::Nearest([0.0, h]),
                    value: vec![0.0, -1.0],
                }],
                body_source: BodySource::default(),
                volume_fraction: 0.55,
                initial_design: InitialDesign::Holes {
                    centers: staggered_holes(w, h, 5),
                    radius: 0.1 * h,
                    clamp_spacings: 3.0,
                },
                iterations: 300,
                optimizer: MmaSettings::default(),
                convergence_tol: default_tol(),
                convergence_window: default_window(),
                normalize_objective: true,
                solid_anchors: true,
            }
        }
        "heat_sink" => {
            let l = 1.0;
            ProblemSpec {
                name: name.into(),
                physics: Physics::Heat,
                domain: [l, l],
                mesh: overrides.mesh.unwrap_or([41, 41]),
                diagonal: Diagonal::default(),
                rbf_grid: overrides.rbf_grid.unwrap_or([31, 31]),
                rbf_radius_factor: default_radius_factor(),
                materials: MaterialPair::Thermal { material: 1.0, void: 0.01 },
                supports: vec![SupportSpec {
                    nodes: NodeSelector::Nearest([l, 0.0]),
                    components: vec![0],
                }],
                point_loads: Vec::new(),
                body_source: BodySource {
                    material: vec![1.0],
                    void: vec![1.0],
                },
                volume_fraction: 0.45,
                initial_design: InitialDesign::Holes {
                    centers: staggered_holes(l, l, 3),
                    radius: HEAT_SINK_HOLE_RADIUS * l,
                    clamp_spacings: 3.0,
                },
                iterations: 100,
                optimizer: MmaSettings::default(),
                convergence_tol: default_tol(),
                convergence_window: default_window(),
                normalize_objective: true,
                solid_anchors: true,
            }
        }
        other => {
            return Err(Error::config(format!(
                "unknown problem '{other}'; available: {}",
                BUILTIN_PROBLEMS.join(", ")
            )))
        }
    };
    if name != "cantilever" {
        if let Some(m) = overrides.mesh {
            spec.mesh = m;
        }
    }
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    Ok(spec)
}

/// Result of analysing one design.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub compliance: f64,
    pub material_volume: f64,
    pub volume_fraction: f64,
    pub enriched_dofs: usize,
    pub cut_elements: usize,
    /// Empty unless gradients were requested.
    pub compliance_gradient: Vec<f64>,
    pub volume_gradient: Vec<f64>,
    /// Signs of the snapped nodal levelset.
    pub signature: Vec<bool>,
}

/// A specification bound to its mesh, RBF grid and resolved loads.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: ProblemSpec,
    mesh: Mesh,
    template: LevelsetField,
    loads: LoadCase,
    total_area: f64,
    anchors: Vec<usize>,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let [w, h] = spec.domain;
        let mesh = Mesh::structured_grid(w, h, spec.mesh[0], spec.mesh[1], spec.diagonal)?;
        let grid = RbfGrid::rectangular(w, h, spec.rbf_grid[0], spec.rbf_grid[1], spec.rbf_radius_factor)?;
        let template = LevelsetField::new(grid.clone(), &mesh, vec![0.0; grid.len()])?;
        let dim = spec.physics.field_dim();
        let mut loads = LoadCase {
            body_source: [
                if spec.body_source.material.is_empty() { vec![0.0; dim] } else { spec.body_source.material.clone() },
                if spec.body_source.void.is_empty() { vec![0.0; dim] } else { spec.body_source.void.clone() },
            ],
            ..Default::default()
        };
        for s in &spec.supports {
            for n in s.nodes.resolve(&mesh)? {
                for &c in &s.components {
                    loads.fixed.push((n, c));
                }
            }
        }
        loads.fixed.sort_unstable();
        loads.fixed.dedup();
        for l in &spec.point_loads {
            for n in l.nodes.resolve(&mesh)? {
                loads.point_loads.push((n, l.value.clone()));
            }
        }
        let mut anchors = Vec::new();
        if spec.solid_anchors {
            let point_selectors = spec
                .supports
                .iter()
                .map(|s| &s.nodes)
                .chain(spec.point_loads.iter().map(|l| &l.nodes))
                .filter(|sel| matches!(sel, NodeSelector::Nearest(_)));
            for sel in point_selectors {
                anchors.extend(sel.resolve(&mesh)?);
            }
            anchors.sort_unstable();
            anchors.dedup();
        }
        let total_area = mesh.area();
        let problem = Problem {
            spec,
            mesh,
            template,
            loads,
            total_area,
            anchors,
        };
        problem.variable_bounds()?;
        Ok(problem)
    }

    /// Nodes kept inside the material.
    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    /// Per-variable design bounds. An anchored node's dominant RBF gets a
    /// lower bound that keeps `phi >= ANCHOR_MARGIN` at the node whatever
    /// the other variables are.
    pub fn variable_bounds(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (lo, hi) = (self.spec.optimizer.lower_bound, self.spec.optimizer.upper_bound);
        let n = self.num_design_variables();
        let mut lower = vec![lo; n];
        let upper = vec![hi; n];
        let theta = self.template.dphi_ds();
        for &node in &self.anchors {
            let (cols, vals) = theta.row(node);
            let Some(k) = (0..cols.len()).max_by(|&a, &b| vals[a].total_cmp(&vals[b])) else {
                return Err(Error::config(format!("anchored node {node} lies outside every RBF support")));
            };
            let rest: f64 = (0..cols.len())
                .filter(|&i| i != k)
                .map(|i| vals[i] * if vals[i] > 0.0 { lo } else { hi })
                .sum();
            let bound = (ANCHOR_MARGIN - rest) / vals[k];
            if !(bound < hi) {
                return Err(Error::config(format!(
                    "node {node} cannot be kept solid within the design bounds"
                )));
            }
            lower[cols[k]] = lower[cols[k]].max(bound);
        }
        Ok((lower, upper))
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn loads(&self) -> &LoadCase {
        &self.loads
    }

    pub fn rbf_grid(&self) -> &RbfGrid {
        self.template.grid()
    }

    pub fn num_design_variables(&self) -> usize {
        self.template.grid().len()
    }

    pub fn total_area(&self) -> f64 {
        self.total_area
    }

    /// Levelset field for a design vector.
    pub fn field(&self, design: &[f64]) -> Result<LevelsetField> {
        let mut f = self.template.clone();
        f.set_design(design.to_vec())?;
        Ok(f)
    }

    /// Enriched model of the snapped nodal levelset.
    pub fn model(&self, field: &LevelsetField) -> Result<EnrichedModel<'_>> {
        let raw = field.nodal_values();
        let phi = snap_nodal_levelset(raw, snap_epsilon(raw))?;
        EnrichedModel::build(&self.mesh, &phi, self.spec.physics.field_dim())
    }

    /// Initial design vector fitted to the configured seed levelset.
    pub fn initial_design(&self) -> Result<Vec<f64>> {
        let grid = self.template.grid();
        let bounds = (self.spec.optimizer.lower_bound, self.spec.optimizer.upper_bound);
        let [w, h] = self.spec.domain;
        match &self.spec.initial_design {
            InitialDesign::Holes { centers, radius, clamp_spacings } => {
                let cap = clamp_spacings * grid.spacing();
                fit_initial_design(
                    grid,
                    |x| {
                        let d = centers
                            .iter()
                            .map(|c| (x - Vec2::new(c[0], c[1])).norm() - radius)
                            .fold(f64::INFINITY, f64::min);
                        d.clamp(-cap, cap)
                    },
                    bounds,
                )
            }
            InitialDesign::CosineLattice { counts, offset } => fit_initial_design(
                grid,
                |x| {
                    let cx = (std::f64::consts::PI * counts[0] as f64 * x.x / w).cos();
                    let cy = (std::f64::consts::PI * counts[1] as f64 * x.y / h).cos();
                    offset - cx * cy
                },
                bounds,
            ),
            InitialDesign::Uniform { value } => Ok(vec![value.clamp(bounds.0, bounds.1); grid.len()]),
        }
    }

    /// Solves the design and, on request, computes the gradients.
    pub fn evaluate(&self, design: &[f64], gradients: bool) -> Result<Evaluation> {
        let field = self.field(design)?;
        let model = self.model(&field)?;
        let res = analyze(&model, &self.spec.materials, &self.loads)?;
        if !res.compliance.is_finite() {
            return Err(Error::NumericGuard(format!("compliance is {}", res.compliance)));
        }
        let (dc, dv) = if gradients {
            (
                compliance_gradient(&model, &self.spec.materials, &self.loads, &res, &field)?,
                volume_gradient(&model, &field)?,
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Evaluation {
            compliance: res.compliance,
            material_volume: res.material_volume,
            volume_fraction: res.material_volume / self.total_area,
            enriched_dofs: model.num_enriched_dofs(),
            cut_elements: model.num_cut_elements(),
            compliance_gradient: dc,
            volume_gradient: dv,
            signature: model.sign_signature(),
        })
    }
}

/// One row of the optimization history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub compliance: f64,
    pub volume_fraction: f64,
    pub enriched_dofs: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: Vec<IterationRecord>,
    pub design: Vec<f64>,
    pub converged: bool,
}

impl RunOutcome {
    pub fn final_record(&self) -> &IterationRecord {
        self.history.last().expect("history holds at least the initial design")
    }
}

/// Failed run with the offending design kept for inspection.
#[derive(Debug)]
pub struct RunFailure {
    pub iteration: usize,
    pub design: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "iteration {}: {}", self.iteration, self.error)
    }
}

impl std::error::Error for RunFailure {}

/// Runs the optimization from the configured initial design.
pub fn run_optimization<F>(problem: &Problem, observer: F) -> std::result::Result<RunOutcome, RunFailure>
where
    F: FnMut(&IterationRecord, &[f64]) -> Result<()>,
{
    let design = problem.initial_design().map_err(|error| RunFailure {
        iteration: 0,
        design: Vec::new(),
        history: Vec::new(),
        error,
    })?;
    run_optimization_from(problem, design, observer)
}

/// Runs the optimization from `design`. The observer sees every record
/// together with the design it was computed for.
pub fn run_optimization_from<F>(
    problem: &Problem,
    mut design: Vec<f64>,
    mut observer: F,
) -> std::result::Result<RunOutcome, RunFailure>
where
    F: FnMut(&IterationRecord, &[f64]) -> Result<()>,
{
    let spec = problem.spec();
    let mut history = Vec::with_capacity(spec.iterations + 1);
    let n = design.len();
    let setup = MmaState::new(n, 1, spec.optimizer).and_then(|mut m| {
        let (lower, upper) = problem.variable_bounds()?;
        for (j, v) in design.iter_mut().enumerate() {
            *v = v.clamp(lower[j], upper[j]);
        }
        m.set_variable_bounds(lower, upper)?;
        Ok(m)
    });
    let mut mma = match setup {
        Ok(m) => m,
        Err(error) => return Err(RunFailure { iteration: 0, design, history, error }),
    };
    let vmax = spec.volume_fraction * problem.total_area();
    let mut scale = 1.0;
    let mut quiet_steps = 0;
    let mut converged = false;
    let mut k = 0;
    loop {
        let last = k == spec.iterations || converged;
        let eval = match problem.evaluate(&design, !last) {
            Ok(e) => e,
            Err(error) => return Err(RunFailure { iteration: k, design, history, error }),
        };
        let record = IterationRecord {
            iteration: k,
            compliance: eval.compliance,
            volume_fraction: eval.volume_fraction,
            enriched_dofs: eval.enriched_dofs,
        };
        history.push(record);
        if let Err(error) = observer(&record, &design) {
            return Err(RunFailure { iteration: k, design, history, error });
        }
        info!(
            "{} it {k:4}: C = {:.6e}, vf = {:.4}, enriched dofs = {}",
            spec.name, eval.compliance, eval.volume_fraction, eval.enriched_dofs
        );
        if last {
            break;
        }
        if k == 0 && spec.normalize_objective && eval.compliance > 0.0 {
            scale = 1.0 / eval.compliance;
        }
        let f0 = eval.compliance * scale;
        let df0: Vec<f64> = eval.compliance_gradient.iter().map(|g| g * scale).collect();
        let f1 = eval.material_volume / vmax - 1.0;
        let df1: Vec<f64> = eval.volume_gradient.iter().map(|g| g / vmax).collect();
        let next = match mma.step(&design, f0, &df0, &[f1], &[df1]) {
            Ok(x) => x,
            Err(error) => return Err(RunFailure { iteration: k, design, history, error }),
        };
        let change = next
            .iter()
            .zip(&design)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        debug!("step {k}: max |ds| = {change:e}, lambda = {:?}", mma.multipliers());
        quiet_steps = if change < spec.convergence_tol { quiet_steps + 1 } else { 0 };
        converged = quiet_steps >= spec.convergence_window;
        design = next;
        k += 1;
    }
    Ok(RunOutcome {
        history,
        design,
        converged,
    })
}

/// Analytic and finite-difference derivatives for one design variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSample {
    pub variable: usize,
    pub analytic_compliance: f64,
    pub fd_compliance: f64,
    pub analytic_volume: f64,
    pub fd_volume: f64,
    /// The perturbation changed the cut topology.
    pub topology_event: bool,
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub samples: Vec<GradientSample>,
    pub step: f64,
    /// Largest analytic magnitudes over all variables, used as error floors.
    pub compliance_scale: f64,
    pub volume_scale: f64,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, fd: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(fd.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - fd).abs() / denom
    }
}

/// Relative error floor as a fraction of the largest gradient entry.
pub const GRADIENT_FLOOR: f64 = 1e-4;

impl GradientReport {
    /// Samples without topology events.
    pub fn clean(&self) -> impl Iterator<Item = &GradientSample> {
        self.samples.iter().filter(|s| !s.topology_event)
    }

    pub fn compliance_error(&self, s: &GradientSample) -> f64 {
        relative_error(s.analytic_compliance, s.fd_compliance, GRADIENT_FLOOR * self.compliance_scale)
    }

    pub fn volume_error(&self, s: &GradientSample) -> f64 {
        relative_error(s.analytic_volume, s.fd_volume, GRADIENT_FLOOR * self.volume_scale)
    }

    /// Fractions of clean samples whose compliance and volume errors are
    /// within `tol`.
    pub fn pass_fractions(&self, tol: f64) -> (f64, f64) {
        let clean: Vec<_> = self.clean().collect();
        if clean.is_empty() {
            return (0.0, 0.0);
        }
        let c = clean.iter().filter(|s| self.compliance_error(s) <= tol).count();
        let v = clean.iter().filter(|s| self.volume_error(s) <= tol).count();
        (c as f64 / clean.len() as f64, v as f64 / clean.len() as f64)
    }
}

/// Compares analytic gradients with central differences on a random
/// sample of the variables whose gradients are non-zero.
pub fn gradient_check(problem: &Problem, design: &[f64], samples: usize, step: f64, seed: u64) -> Result<GradientReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let base = problem.evaluate(design, true)?;
    let active: Vec<usize> = (0..design.len())
        .filter(|&i| base.compliance_gradient[i] != 0.0 || base.volume_gradient[i] != 0.0)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = samples.min(active.len());
    let mut picked: Vec<usize> = sample(&mut rng, active.len(), count).into_iter().map(|i| active[i]).collect();
    picked.sort_unstable();
    let mut out = Vec::with_capacity(count);
    for i in picked {
        let mut plus = design.to_vec();
        let mut minus = design.to_vec();
        plus[i] += step;
        minus[i] -= step;
        let ep = problem.evaluate(&plus, false)?;
        let em = problem.evaluate(&minus, false)?;
        out.push(GradientSample {
            variable: i,
            analytic_compliance: base.compliance_gradient[i],
            fd_compliance: (ep.compliance - em.compliance) / (2.0 * step),
            analytic_volume: base.volume_gradient[i],
            fd_volume: (ep.material_volume - em.material_volume) / (2.0 * step),
            topology_event: ep.signature != base.signature || em.signature != base.signature,
        });
    }
    let maxabs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(GradientReport {
        samples: out,
        step,
        compliance_scale: maxabs(&base.compliance_gradient),
        volume_scale: maxabs(&base.volume_gradient),
    })
}

/// Largest single-step increase of compliance over a history.
pub fn largest_rise(history: &[IterationRecord]) -> f64 {
    history
        .windows(2)
        .map(|w| (w[1].compliance - w[0].compliance).max(0.0))
        .fold(0.0, f64::max)
}

/// Relative spread `(max - min) / min` of the best-so-far compliance over
/// the last `window` records.
pub fn best_so_far_spread(history: &[IterationRecord], window: usize) -> f64 {
    let mut best = f64::INFINITY;
    let bests: Vec<f64> = history
        .iter()
        .map(|r| {
            best = best.min(r.compliance);
            best
        })
        .collect();
    let tail = &bests[bests.len().saturating_sub(window)..];
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_populate_specs() {
        let c = builtin_problem("cantilever", ResolutionOverrides::default()).unwrap();
        assert_eq!(c.domain, [2.0, 1.0]);
        assert_eq!(c.mesh, [21, 11]);
        assert_eq!(c.rbf_grid, [21, 11]);
        assert_eq!(c.volume_fraction, 0.55);
        let p = Problem::new(c).unwrap();
        assert_eq!(p.loads().point_loads[0].0, p.mesh().nearest_node(Vec2::new(2.0, 0.5)));
        assert_eq!(p.loads().fixed.len(), 22);

        let fine = builtin_problem("cantilever", ResolutionOverrides { mesh: Some([41, 21]), rbf_grid: None }).unwrap();
        assert_eq!(fine.rbf_grid, [41, 21]);

        let m = builtin_problem("mbb", ResolutionOverrides::default()).unwrap();
        assert_eq!(m.mesh, [151, 51]);
        assert_eq!(m.rbf_grid, [61, 21]);
        for g in MBB_RBF_GRIDS {
            let s = builtin_problem("mbb", ResolutionOverrides { mesh: None, rbf_grid: Some(g) }).unwrap();
            assert_eq!(s.rbf_grid, g);
        }
        let h = builtin_problem("heat_sink", ResolutionOverrides::default()).unwrap();
        let p = Problem::new(h).unwrap();
        assert_eq!(p.loads().fixed, vec![(40, 0)]);
        assert_eq!(p.anchors(), &[40]);

        match builtin_problem("bridge", ResolutionOverrides::default()) {
            Err(Error::Config(msg)) => assert!(msg[0].contains("cantilever")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_aggregates() {
        let mut s = builtin_problem("cantilever", ResolutionOverrides::default()).unwrap();
        s.volume_fraction = 1.5;
        s.mesh = [1, 11];
        let errs = s.validate();
        assert_eq!(errs.len(), 2);
        assert!(errs[0].contains("volume_fraction"));
    }

    #[test]
    fn initial_designs_have_holes_and_bounds() {
        for name in BUILTIN_PROBLEMS {
            let p = Problem::new(builtin_problem(name, ResolutionOverrides::default()).unwrap()).unwrap();
            let s = p.initial_design().unwrap();
            assert!(s.iter().all(|v| (-1.0..=1.0).contains(v)));
            let e = p.evaluate(&s, false).unwrap();
            assert!(e.cut_elements > 0);
            assert!(e.volume_fraction > 0.5 && e.volume_fraction < 1.0, "{name}: {}", e.volume_fraction);
        }
    }

    #[test]
    fn short_run_is_deterministic() {
        let mut spec = builtin_problem("cantilever", ResolutionOverrides::default()).unwrap();
        spec.iterations = 3;
        let p = Problem::new(spec).unwrap();
        let mut seen = Vec::new();
        let a = run_optimization(&p, |r, _| {
            seen.push(r.iteration);
            Ok(())
        })
        .unwrap();
        let b = run_optimization(&p, |_, _| Ok(())).unwrap();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert_eq!(a.history, b.history);
        assert_eq!(a.design, b.design);
        assert!(a.history.iter().all(|r| (0.0..=1.0).contains(&r.volume_fraction)));
    }

    #[test]
    fn failing_observer_keeps_design() {
        let mut spec = builtin_problem("cantilever", ResolutionOverrides::default()).unwrap();
        spec.iterations = 5;
        let p = Problem::new(spec).unwrap();
        let err = run_optimization(&p, |r, _| {
            if r.iteration == 2 {
                Err(Error::NumericGuard("stop".into()))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert_eq!(err.iteration, 2);
        assert_eq!(err.design.len(), p.num_design_variables());
        assert_eq!(err.history.len(), 3);
    }

    #[test]
    fn oscillation_metrics() {
        let h: Vec<IterationRecord> = [5.0, 4.0, 4.5, 3.0, 3.2, 3.1]
            .iter()
            .enumerate()
            .map(|(i, &c)| IterationRecord { iteration: i, compliance: c, volume_fraction: 0.5, enriched_dofs: 0 })
            .collect();
        assert_eq!(largest_rise(&h), 0.5);
        assert_eq!(best_so_far_spread(&h, 3), 0.0);
        assert!((best_so_far_spread(&h, 5) - 1.0 / 3.0).abs() < 1e-15);
    }
}
