//! Symbolic-numeric toolkit for Ito stochastic differential equations.
//!
//! The crate verifies Lie-point symmetries of Ito systems, builds the
//! change of variables induced by a symmetry, applies the Ito
//! transformation rule to produce reduced (quadrature-ready) equations,
//! and validates every reduction with shared-noise Monte Carlo runs.
//!
//! Modules are layered bottom-up:
//!
//! * [`expr`] — expression trees: parsing, differentiation, simplification,
//!   rule-based integration, fast compiled evaluation.
//! * [`model`] — SDE systems, vector fields, the Ito Laplacian and related
//!   operators, plus the on-disk model file format.
//! * [`symcheck`] — residuals of the symmetry determining equations,
//!   ansatz-based symmetry search, compatibility and kernel tests.
//! * [`transform`] — changes of variables and the Ito transformation rule,
//!   in both directions, with symbolic-first and numeric fallbacks.
//! * [`reduce`] — symmetry-driven integration and dimensional reduction,
//!   including staged reduction along a solvable chain.
//! * [`mc`] — Euler-Maruyama simulation with counter-based noise streams,
//!   pathwise and in-law validation of transformations.
//! * [`report`] — structured pass/fail reports with stable text and JSON
//!   renderings.
//! * [`fixtures`] — the bundled example systems used by the test suite and
//!   the `fixtures` CLI subcommand.

pub mod error;
pub mod expr;
pub mod fixtures;
pub mod mc;
pub mod model;
pub mod reduce;
pub mod report;
pub mod symcheck;
pub mod transform;

pub mod cli;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
