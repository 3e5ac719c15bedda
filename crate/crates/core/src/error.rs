use std::fmt;

use thiserror::Error;

/// Structural hypotheses a model must satisfy before the series machinery applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// The free Hamiltonian is self-adjoint and leaves every grade sector invariant.
    FreeHamiltonianGraded,
    /// The interaction shifts grades by a bounded amount and is relatively bounded by the grading.
    InteractionGraded,
    /// The adjoint of the interaction is graded in the same sense.
    AdjointInteractionGraded,
    /// An observable and its adjoint shift grades by a bounded amount.
    ObservableGraded,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            Assumption::FreeHamiltonianGraded => "free Hamiltonian must be self-adjoint and commute with the grading",
            Assumption::InteractionGraded => "interaction must have a finite grade shift and relative bound",
            Assumption::AdjointInteractionGraded => {
                "adjoint interaction must have a finite grade shift and relative bound"
            }
            Assumption::ObservableGraded => "observable and its adjoint must shift the grade by a bounded amount",
        };
        f.write_str(text)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("assumption violated ({assumption}): {detail}")]
    Assumption { assumption: Assumption, detail: String },

    #[error("series truncation failed at order {order}: tail bound {tail_bound:e} exceeds tolerance {tol:e}")]
    Truncation { order: usize, tail_bound: f64, tol: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown mode label `{0}`")]
    UnknownMode(String),

    #[error("matrix exponential overflow: {0}")]
    Overflow(String),

    #[error("step size underflow at t = {t}: step {step:e} (stiff or non-finite right-hand side)")]
    Stiffness { t: f64, step: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn assumption(assumption: Assumption, detail: impl Into<String>) -> Self {
        Error::Assumption {
            assumption,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
