//! Levelset topology optimization on fixed, non-matching triangle meshes.
//!
//! Material boundaries are the zero contour of a levelset built from
//! compactly supported Wendland radial basis functions. Each design is
//! analysed with the interface-enriched generalized finite element method:
//! cut edges receive enriched nodes, cut triangles are split into
//! integration elements, and the enrichment functions are the hat functions
//! of those integration elements. Compliance sensitivities are computed
//! analytically through the motion of the enriched nodes, and designs are
//! updated with the method of moving asymptotes.
//!
//! Module map:
//!
//! * [`mesh`]: structured triangle grids and boundary tags.
//! * [`rbf`]: RBF levelset parametrization.
//! * [`enrichment`]: cut detection, enriched nodes, integration elements.
//! * [`physics`]: element matrices, assembly, boundary conditions, solve.
//! * [`sensitivity`]: analytical compliance and volume gradients.
//! * [`mma`]: the moving-asymptotes update.
//! * [`driver`]: benchmark problems and the optimization loop.
//! * [`io`]: configuration files, history CSV and geometry export.

pub mod driver;
pub mod enrichment;
mod error;
pub mod io;
pub mod mesh;
pub mod mma;
pub mod physics;
pub mod rbf;
pub mod sensitivity;
pub mod sparse;

pub use error::{Error, Result};

/// Two-dimensional point / vector type used throughout.
pub type Vec2 = nalgebra::Vector2<f64>;
