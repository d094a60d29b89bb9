//! Spectral-gap computations for linearized Boltzmann collision operators.
//!
//! The operator is projected onto a Discontinuous Galerkin velocity mesh over
//! a truncated cube, conservation constraints are enforced, and the gap is
//! read off a symmetric (generalized) eigenproblem. Two assembly backends are
//! provided:
//!
//! * [`grad::assemble_grad`] — splitting of the operator into a collision
//!   frequency multiplier plus a compact integral operator with explicit
//!   kernels, valid for integrable angular cross-sections (`alpha < 0`);
//! * [`assembly::assemble_direct`] — direct quadrature of the Dirichlet form
//!   with angular integrals resolved per mesh cell on the collision sphere,
//!   valid for every `alpha < 2` including non-integrable cross-sections.
//!
//! The [`driver`] module runs parameter sweeps and persists results as
//! CSV/JSON; the `boltzgap` binary in the companion CLI crate wraps it.

pub mod assembly;
pub mod constraints;
pub mod driver;
mod error;
pub mod grad;
pub mod kernels;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod special;
pub mod spectra;
pub mod sphere;

pub use assembly::{assemble_direct, quadratic_form, CollisionMatrix, TriangleRule};
pub use constraints::{conservation_correct, constraint_matrix, nullspace_basis, ConstraintSet};
pub use driver::{run, ResultRecord, RunConfig};
pub use error::{Error, Result};
pub use grad::{assemble_grad, kernel_k1, kernel_k2, PlanarQuadrature};
pub use kernels::{collision_frequency, cross_section_b, maxwellian, CrossSection, NuProfile};
pub use mesh::{
    build_mesh, l2_project, mass_matrix, BasisSpec, CoefficientVector, MassMatrix, Mesh,
    OperatorParams, Representation,
};
pub use spectra::{eig_sym, maxwell_lambda, spectral_gap, MaxwellEigenOracle, SpectralResult};
