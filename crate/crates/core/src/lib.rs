//! Numerical tools for the Parisi functional of vector spin glasses with
//! self-overlap correction.
//!
//! The crate is organised bottom-up:
//!
//! * [`symmat`] small symmetric matrices, eigendecomposition and PSD roots;
//! * [`model`] Hadamard-power mixture covariance functions `ξ`;
//! * [`paths`] step CDFs `α`, matrix paths `Ψ` and the derived `μ`, `γ`;
//! * [`pde`] the levelwise Cole–Hopf solver on a tensor grid;
//! * [`mcoracle`] an independent nested Monte Carlo evaluator;
//! * [`functional`] the three-term functional and its tilted base measure;
//! * [`optimize`] projected gradient descent over the levels of `α`;
//! * [`sdecheck`] the stochastic control representation;
//! * [`potts`] algebraic identities and experiments for the Potts model;
//! * [`verify`] a deterministic, keyed report over all of the above.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
pub mod error;
pub mod functional;
pub mod grid;
pub mod mcoracle;
pub mod model;
pub mod optimize;
pub mod par;
pub mod paths;
pub mod pde;
pub mod potts;
pub mod quadrature;
pub mod sdecheck;
pub mod symmat;
pub mod verify;

pub use error::{Error, Result};
pub use model::MixtureModel;
pub use paths::{DerivedPath, DiscreteCdf, MatrixPath, StepPath};
pub use pde::{BaseMeasure, GridSpec, PdeSolution};
pub use symmat::SymMat;
