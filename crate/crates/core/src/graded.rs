//! Finite graded Hilbert spaces, grade-shift certificates and grade-weighted norms.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, spectral_norm, CMat, CVec, C64};

/// Entries below this fraction of the largest entry are treated as round-off.
pub const SHIFT_ENTRY_THRESHOLD: f64 = 1e-14;
/// Vector components at or below this magnitude do not count towards the support grade.
pub const SUPPORT_THRESHOLD: f64 = 1e-14;
/// A grade `g` lies in `V_L` when `g ≤ L + GRADE_TOLERANCE`, so that levels
/// such as `L + b` computed in floating point still contain the grades they name.
pub const GRADE_TOLERANCE: f64 = 1e-9;

/// An orthonormal basis carrying a non-negative grade per index: the spectral
/// decomposition of the grading operator `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedSpace {
    grades: Vec<f64>,
}

impl GradedSpace {
    pub fn new(grades: Vec<f64>) -> Result<Self> {
        if grades.is_empty() {
            return Err(Error::Malformed("graded space needs dim >= 1".into()));
        }
        if let Some((j, g)) = grades.iter().enumerate().find(|(_, g)| !g.is_finite() || **g < 0.0) {
            return Err(Error::Malformed(format!(
                "grade[{j}] = {g} is not a finite non-negative real"
            )));
        }
        Ok(GradedSpace { grades })
    }

    /// Space with every grade zero.
    pub fn flat(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.grades.len()
    }

    pub fn grades(&self) -> &[f64] {
        &self.grades
    }

    pub fn max_grade(&self) -> f64 {
        self.grades.iter().cloned().fold(0.0, f64::max)
    }

    /// Grade of the highest sector that `v` touches (`L_ξ`). Zero vectors report 0.
    pub fn support_grade(&self, v: &CVec) -> Result<f64> {
        self.check_len(v.len())?;
        Ok(v.iter()
            .zip(&self.grades)
            .filter(|(z, _)| z.norm() > SUPPORT_THRESHOLD)
            .map(|(_, g)| *g)
            .fold(0.0, f64::max))
    }

    /// Norm of the components of `v` whose grade exceeds `level`.
    pub fn mass_above(&self, v: &CVec, level: f64) -> f64 {
        v.iter()
            .zip(&self.grades)
            .filter(|(_, g)| **g > level + GRADE_TOLERANCE)
            .map(|(z, _)| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: n,
            });
        }
        Ok(())
    }
}

/// Grade shift `b` and relative bound `C` of an operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeCert {
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

/// Dense complex operator on a graded space.
#[derive(Debug, Clone)]
pub struct LinOp {
    space: Arc<GradedSpace>,
    matrix: CMat,
    meta: Option<GradeCert>,
}

impl LinOp {
    pub fn new(space: Arc<GradedSpace>, matrix: CMat) -> Result<Self> {
        let n = space.dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if matrix.nrows() != n {
                    matrix.nrows()
                } else {
                    matrix.ncols()
                },
            });
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Malformed("operator has non-finite entries".into()));
        }
        Ok(LinOp {
            space,
            matrix,
            meta: None,
        })
    }

    pub fn identity(space: Arc<GradedSpace>) -> Self {
        let n = space.dim();
        LinOp {
            space,
            matrix: CMat::identity(n, n),
            meta: None,
        }
    }

    pub fn zeros(space: Arc<GradedSpace>) -> Self {
        let n = space.dim();
        LinOp {
            space,
            matrix: CMat::zeros(n, n),
            meta: None,
        }
    }

    pub fn from_diagonal(space: Arc<GradedSpace>, diag: &[C64]) -> Result<Self> {
        space.check_len(diag.len())?;
        let m = CMat::from_diagonal(&CVec::from_column_slice(diag));
        LinOp::new(space, m)
    }

    pub fn space(&self) -> &Arc<GradedSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    /// Same space, new matrix; cached metadata is dropped.
    pub fn with_matrix(&self, matrix: CMat) -> Result<Self> {
        LinOp::new(self.space.clone(), matrix)
    }

    pub fn adjoint(&self) -> Self {
        LinOp {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
            meta: None,
        }
    }

    pub fn apply(&self, v: &CVec) -> Result<CVec> {
        self.space.check_len(v.len())?;
        Ok(&self.matrix * v)
    }

    pub fn compose(&self, other: &LinOp) -> Result<Self> {
        self.same_space(other)?;
        self.with_matrix(&self.matrix * &other.matrix)
    }

    pub fn add(&self, other: &LinOp) -> Result<Self> {
        self.same_space(other)?;
        self.with_matrix(&self.matrix + &other.matrix)
    }

    pub fn scale(&self, s: C64) -> Self {
        LinOp {
            space: self.space.clone(),
            matrix: &self.matrix * s,
            meta: None,
        }
    }

    /// Spectral norm of `self − self*` relative to the spectral norm of `self`.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = &self.matrix - self.matrix.adjoint();
        let dn = spectral_norm(&d);
        if dn == 0.0 {
            return 0.0;
        }
        dn / spectral_norm(&self.matrix)
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|k| (0..n).all(|j| j == k || self.matrix[(j, k)] == C64::new(0.0, 0.0)))
    }

    /// Returns the cached certificate, computing it when absent.
    pub fn cert(&self) -> GradeCert {
        self.meta.unwrap_or_else(|| GradeCert {
            b: grade_shift_bound(self),
            c: relative_bound_constant(self),
        })
    }

    /// Copy of this operator with its certificate computed and cached.
    pub fn certified(&self) -> Self {
        let mut out = self.clone();
        out.meta = Some(self.cert());
        out
    }

    pub fn cached_cert(&self) -> Option<GradeCert> {
        self.meta
    }

    pub(crate) fn same_space(&self, other: &LinOp) -> Result<()> {
        if self.space.as_ref() != other.space.as_ref() {
            return Err(Error::Malformed("operators live on different graded spaces".into()));
        }
        Ok(())
    }
}

/// Diagonal projector onto `V_L`, the span of basis vectors with grade ≤ `level`
/// (up to [`GRADE_TOLERANCE`]).
pub fn sector_projector(space: &Arc<GradedSpace>, level: f64) -> Result<LinOp> {
    if !(level >= 0.0) {
        return Err(Error::Malformed(format!("sector level {level} must be >= 0")));
    }
    let diag: Vec<C64> = space
        .grades()
        .iter()
        .map(|g| C64::new(if *g <= level + GRADE_TOLERANCE { 1.0 } else { 0.0 }, 0.0))
        .collect();
    LinOp::from_diagonal(space.clone(), &diag)
}

/// Minimal `b` with `op(V_L) ⊆ V_{L+b}` for every `L`, read off the matrix support.
pub fn grade_shift_bound(op: &LinOp) -> f64 {
    let m = op.matrix();
    let cutoff = SHIFT_ENTRY_THRESHOLD * max_abs(m);
    let g = op.space().grades();
    let mut b = 0.0_f64;
    for (k, col) in m.column_iter().enumerate() {
        for (j, z) in col.iter().enumerate() {
            if z.norm() > cutoff && z.norm() > 0.0 {
                b = b.max(g[j] - g[k]);
            }
        }
    }
    b
}

/// `C = ‖op · (A+1)^{-1/2}‖₂`.
pub fn relative_bound_constant(op: &LinOp) -> f64 {
    let g = op.space().grades();
    let mut m = op.matrix().clone();
    for (k, mut col) in m.column_iter_mut().enumerate() {
        col.scale_mut(1.0 / (g[k] + 1.0).sqrt());
    }
    spectral_norm(&m)
}

/// `‖K^α v‖ = (Σ_j (g_j+1)^α |v_j|²)^{1/2}` with `K = (A+1)^{1/2}`.
pub fn weighted_norm(space: &GradedSpace, v: &CVec, alpha: f64) -> Result<f64> {
    space.check_len(v.len())?;
    if alpha == 0.0 {
        return Ok(crate::linalg::vec_norm(v));
    }
    Ok(v.iter()
        .zip(space.grades())
        .map(|(z, g)| (g + 1.0).powf(alpha) * z.norm_sqr())
        .sum::<f64>()
        .sqrt())
}

/// JSON form of an operator: `{"dim", "grades", "matrix": [[re, im], ...]}`, row-major.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LinOpDoc {
    pub dim: usize,
    pub grades: Vec<f64>,
    pub matrix: Vec<[f64; 2]>,
}

impl From<&LinOp> for LinOpDoc {
    fn from(op: &LinOp) -> Self {
        let n = op.dim();
        let mut matrix = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                let z = op.matrix()[(j, k)];
                matrix.push([z.re, z.im]);
            }
        }
        LinOpDoc {
            dim: n,
            grades: op.space().grades().to_vec(),
            matrix,
        }
    }
}

impl LinOpDoc {
    pub fn to_linop(&self) -> Result<LinOp> {
        if self.grades.len() != self.dim {
            return Err(Error::Malformed(format!(
                "`grades` has {} entries but `dim` is {}",
                self.grades.len(),
                self.dim
            )));
        }
        if self.matrix.len() != self.dim * self.dim {
            return Err(Error::Malformed(format!(
                "`matrix` has {} entries, expected dim² = {}",
                self.matrix.len(),
                self.dim * self.dim
            )));
        }
        let space = Arc::new(GradedSpace::new(self.grades.clone())?);
        let n = self.dim;
        let m = CMat::from_fn(n, n, |j, k| {
            let [re, im] = self.matrix[j * n + k];
            C64::new(re, im)
        });
        LinOp::new(space, m)
    }

    /// Matrix entries only, for documents that share one space across operators.
    pub fn to_linop_on(&self, space: &Arc<GradedSpace>) -> Result<LinOp> {
        let op = self.to_linop()?;
        op.same_space(&LinOp::zeros(space.clone()))?;
        LinOp::new(space.clone(), op.into_matrix())
    }
}

/// Serializes a complex vector as `[[re, im], ...]`.
pub fn vector_to_pairs(v: &CVec) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

pub fn vector_from_pairs(pairs: &[[f64; 2]]) -> CVec {
    CVec::from_iterator(pairs.len(), pairs.iter().map(|[re, im]| C64::new(*re, *im)))
}
