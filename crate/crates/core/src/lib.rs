//! Dyson-series propagators for possibly non-normal Hamiltonians `H = H0 + H1`
//! on graded finite-dimensional spaces, certified by a-priori truncation bounds,
//! together with a small indefinite-metric Fock model of Lorenz-gauge QED.

pub mod cli;
pub mod dyson;
pub mod error;
pub mod evolution;
pub mod fock;
pub mod graded;
pub mod linalg;
pub mod models;
pub mod oracle;
pub mod qed;
pub mod quadrature;
pub mod report;
pub mod suite;

pub use dyson::{
    apriori_bound, evolve_adjoint, evolve_vector, interaction_picture, DysonEngine, DysonTerm, SeriesResult, TimeGrid,
};
pub use error::{Assumption, Error, Result};
pub use graded::{
    grade_shift_bound, relative_bound_constant, sector_projector, weighted_norm, GradeCert, GradedSpace, LinOp,
};
pub use report::Report;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
