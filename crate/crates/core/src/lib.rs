//! Multi-scale checkerboard densities and the quantities used to show that
//! they are not Jacobians of bi-Lipschitz maps.
//!
//! - [`hierarchy`] and [`density`]: admissible rectangles and cubes in exact
//!   rational arithmetic, the refined densities and their pair discrepancies.
//! - [`fields`] and [`sums`]: sampled Lipschitz fields, determinant integrals,
//!   the local estimates, and formal Lipschitz sums with their regular form.
//! - [`dichotomy`]: rectangle classification, good pairs and the budget check.
//! - [`solver`]: projected gradient descent for `Σ f_i det Dπ_i = ρ` under
//!   Lipschitz budgets, and the depth/budget sweep.
//! - [`suites`], [`config`], [`report`]: verification suites, run
//!   configuration and CSV layouts used by the `pje` command line tool.

pub mod config;
pub mod density;
pub mod dichotomy;
pub mod error;
pub mod fields;
pub mod hierarchy;
pub mod linalg;
pub mod rational;
pub mod registry;
pub mod report;
pub mod solver;
pub mod suites;
pub mod sums;
pub mod synthetic;
pub mod tolerance;

pub use error::{Error, Result};
