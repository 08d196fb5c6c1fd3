//! Localized orthogonal decomposition (LOD) for two-dimensional elliptic
//! problems with mixed, possibly oscillating, Dirichlet and Neumann data.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: structured nested triangulations of the unit square and the
//!   admissible localization patches built on them.
//! * [`linsolve`]: CSR matrices, Jacobi-preconditioned CG, an envelope
//!   Cholesky factorization and the constrained (KKT) solver used by every
//!   corrector problem.
//! * [`fem`]: P1 assembly, the Dirichlet extension, the fine reference solve
//!   and error norms.
//! * [`interp`]: the weighted Clément quasi-interpolation and the constraint
//!   rows describing its kernel.
//! * [`corrector`]: element, Dirichlet and Neumann correctors on patches, and
//!   decay diagnostics.
//! * [`lod`]: the multiscale basis, the coarse LOD system and the dense
//!   ideal-method oracle.
//! * [`problems`]: the three model problems.
//! * [`experiment`] and [`vtk`]: configuration, table sweeps and field export.

pub mod corrector;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod interp;
pub mod linsolve;
pub mod lod;
pub mod mesh;
pub mod problems;
pub mod vtk;

pub use error::{Error, Result};
