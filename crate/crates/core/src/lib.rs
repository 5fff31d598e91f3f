//! Numerical spectral calculus for sub-Laplacians on two-step stratified Lie groups.
//!
//! The crate covers the symplectic normal form of the skew forms `J_mu`, the
//! Laguerre eigenstructure of anisotropic twisted Laplacians, Mehler heat
//! kernels, spectral-cluster operator norms, Plancherel kernel norms of
//! restriction-type multipliers, and an experiment harness tying them together.

pub mod cluster;
pub mod error;
pub mod grid;
pub mod group;
pub mod harness;
pub mod heat;
pub mod laguerre;
pub mod lattice;
pub mod quadrature;
pub mod restriction;
pub mod symplectic;
pub mod twisted;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction};
pub use group::{GroupClass, GroupKind, GroupSpec, Preset, Rational};
pub use lattice::{BlockParams, LatticePoint};
pub use num_complex::Complex64;
pub use symplectic::MuDecomposition;
pub use twisted::TwistedKernel;
