//! Levelset parametrization by compactly supported radial basis functions.
//!
//! The levelset is `phi(x) = sum_i theta_i(x) s_i` with Wendland C2 kernels
//! `theta_i`. Its values at the mesh nodes are `phi = Theta s`, where the
//! node-by-center matrix `Theta` depends only on geometry and is built once.
//! Sign convention: `phi > 0` is material, `phi < 0` is void.

use crate::mesh::Mesh;
use crate::sparse::{CsrMatrix, EnvelopeCholesky};
use crate::{Error, Result, Vec2};

/// Distances within this relative band of the support radius count as
/// outside the support. Keeps lattice-diagonal neighbours sitting exactly on
/// the support boundary structurally zero regardless of rounding.
const SUPPORT_EDGE_TOL: f64 = 1e-12;

/// Wendland C2 kernel `(1 - r)^4 (4 r + 1)` with compact support on `[0, 1)`.
pub fn wendland(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "RBF radius must be non-negative, got {r}"
        )));
    }
    Ok(wendland_unchecked(r))
}

#[inline]
fn wendland_unchecked(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        let t = 1.0 - r;
        let t2 = t * t;
        t2 * t2 * (4.0 * r + 1.0)
    }
}

/// RBF centers with a common support radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfGrid {
    centers: Vec<Vec2>,
    support_radius: f64,
    spacing: f64,
}

impl RbfGrid {
    pub fn new(centers: Vec<Vec2>, support_radius: f64, spacing: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidArgument("RBF grid has no centers".into()));
        }
        if !(support_radius > 0.0 && support_radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "support radius must be positive, got {support_radius}"
            )));
        }
        Ok(RbfGrid {
            centers,
            support_radius,
            spacing,
        })
    }

    /// Lattice of `nx` by `ny` centers over `[0, width] x [0, height]`.
    /// The spacing `a` is the x-spacing and the support radius is
    /// `radius_factor * a`.
    pub fn rectangular(
        width: f64,
        height: f64,
        nx: usize,
        ny: usize,
        radius_factor: f64,
    ) -> Result<Self> {
        if nx < 2 || ny < 2 || !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "RBF lattice needs >= 2x2 centers on a positive box, got {nx} x {ny} on {width} x {height}"
            )));
        }
        let dx = width / (nx - 1) as f64;
        let dy = height / (ny - 1) as f64;
        let mut centers = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = if i == nx - 1 { width } else { i as f64 * dx };
                let y = if j == ny - 1 { height } else { j as f64 * dy };
                centers.push(Vec2::new(x, y));
            }
        }
        RbfGrid::new(centers, radius_factor * dx, dx)
    }

    pub fn centers(&self) -> &[Vec2] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Kernel value of center `i` at `x`, zero outside the support.
    pub fn kernel(&self, i: usize, x: Vec2) -> f64 {
        let r = (x - self.centers[i]).norm() / self.support_radius;
        if r >= 1.0 - SUPPORT_EDGE_TOL {
            0.0
        } else {
            wendland_unchecked(r)
        }
    }

    /// Levelset value at an arbitrary point by direct summation.
    pub fn evaluate(&self, design: &[f64], x: Vec2) -> f64 {
        (0..self.len()).map(|i| self.kernel(i, x) * design[i]).sum()
    }

    /// Sparse evaluation matrix at `points`: rows are points, columns centers.
    fn evaluation_matrix(&self, points: &[Vec2]) -> Result<CsrMatrix> {
        let mut triplets = Vec::new();
        for (j, p) in points.iter().enumerate() {
            let before = triplets.len();
            for i in 0..self.len() {
                let v = self.kernel(i, *p);
                if v > 0.0 {
                    triplets.push((j, i, v));
                }
            }
            if triplets.len() == before {
                return Err(Error::config(format!(
                    "point {j} at ({}, {}) is not covered by any RBF support",
                    p.x, p.y
                )));
            }
        }
        Ok(CsrMatrix::from_triplets(points.len(), self.len(), triplets))
    }
}

/// Builds the node-by-center matrix `Theta` with entries
/// `wendland(|x_j - x_i| / r_s)`. Fails if some node has no center within
/// the support radius.
pub fn build_theta(grid: &RbfGrid, mesh: &Mesh) -> Result<CsrMatrix> {
    grid.evaluation_matrix(mesh.nodes())
}

/// RBF levelset together with its cached nodal evaluation matrix.
#[derive(Debug, Clone)]
pub struct LevelsetField {
    grid: RbfGrid,
    theta: CsrMatrix,
    design: Vec<f64>,
    nodal_values: Vec<f64>,
}

impl LevelsetField {
    pub fn new(grid: RbfGrid, mesh: &Mesh, design: Vec<f64>) -> Result<Self> {
        let theta = build_theta(&grid, mesh)?;
        let mut field = LevelsetField {
            grid,
            theta,
            design: Vec::new(),
            nodal_values: Vec::new(),
        };
        field.set_design(design)?;
        Ok(field)
    }

    /// Replaces the design vector and refreshes the nodal values.
    pub fn set_design(&mut self, design: Vec<f64>) -> Result<()> {
        if design.len() != self.grid.len() {
            return Err(Error::InvalidState(format!(
                "design has {} entries but the RBF grid has {} centers",
                design.len(),
                self.grid.len()
            )));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("design contains non-finite values".into()));
        }
        self.nodal_values = self.theta.mul_vec(&design);
        self.design = design;
        Ok(())
    }

    pub fn grid(&self) -> &RbfGrid {
        &self.grid
    }

    pub fn design(&self) -> &[f64] {
        &self.design
    }

    /// Cached nodal levelset values.
    pub fn nodal_values(&self) -> &[f64] {
        &self.nodal_values
    }

    /// Recomputes the nodal values from the current design.
    pub fn evaluate_nodal(&self) -> Result<Vec<f64>> {
        if self.design.len() != self.theta.ncols() {
            return Err(Error::InvalidState("design and Theta disagree in size".into()));
        }
        Ok(self.theta.mul_vec(&self.design))
    }

    /// Derivative of the nodal levelset values with respect to the design.
    /// Design independent, so this is the cached `Theta` itself.
    pub fn dphi_ds(&self) -> &CsrMatrix {
        &self.theta
    }

    /// Chains a gradient with respect to nodal values to the design variables.
    pub fn pull_back(&self, d_dphi: &[f64]) -> Vec<f64> {
        self.theta.transpose_mul_vec(d_dphi)
    }

    /// Levelset at an arbitrary point.
    pub fn evaluate_at(&self, x: Vec2) -> f64 {
        self.grid.evaluate(&self.design, x)
    }
}

/// Chooses design values so that the levelset interpolates `initial_phi` at
/// every RBF center, then clamps them to `bounds`.
pub fn fit_initial_design(
    grid: &RbfGrid,
    initial_phi: impl Fn(Vec2) -> f64,
    bounds: (f64, f64),
) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = grid.centers().iter().map(|&c| initial_phi(c)).collect();
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; grid.len()]);
    }
    let colloc = grid.evaluation_matrix(grid.centers())?;
    let factor = EnvelopeCholesky::factorize(&colloc, 1e-12).map_err(|f| {
        Error::config(format!(
            "RBF collocation system is singular near center {} (pivot {:e})",
            f.row, f.pivot
        ))
    })?;
    let s = factor.solve(&rhs);
    Ok(s.into_iter().map(|v| v.clamp(bounds.0, bounds.1)).collect())
}
