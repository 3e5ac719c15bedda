//! Small dense-matrix helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Largest absolute entry.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn is_diagonal(m: &CMat) -> bool {
    m.is_square()
        && m.column_iter()
            .enumerate()
            .all(|(k, col)| col.iter().enumerate().all(|(j, z)| j == k || *z == C64::new(0.0, 0.0)))
}

/// Largest singular value. Zero and diagonal matrices skip the SVD.
pub fn spectral_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let mx = max_abs(m);
    if mx == 0.0 {
        return 0.0;
    }
    if is_diagonal(m) {
        return mx;
    }
    if m.nrows().min(m.ncols()) >= LANCZOS_MIN_DIM {
        return lanczos_norm(m);
    }
    let sv = m.clone().singular_values();
    sv.iter().cloned().fold(0.0, f64::max)
}

/// Matrices at least this large get their spectral norm from Lanczos on `M*M`.
pub const LANCZOS_MIN_DIM: usize = 160;

/// Largest eigenvalue of `M*M` by Lanczos with full reorthogonalisation,
/// iterated until the top Ritz pair has residual below `1e-15·θ` or the
/// Krylov space is exhausted.
fn lanczos_norm(m: &CMat) -> f64 {
    use nalgebra::linalg::SymmetricEigen;
    use rand::SeedableRng;

    let n = m.ncols();
    let fwd = SparseCols::from_dense(m);
    let adj = SparseCols::from_dense(&m.adjoint());
    let mut tmp = vec![C64::new(0.0, 0.0); m.nrows()];
    let mut apply = |x: &CVec| -> CVec {
        let mut out = vec![C64::new(0.0, 0.0); n];
        fwd.mul_into(x.as_slice(), &mut tmp);
        adj.mul_into(&tmp, &mut out);
        CVec::from_vec(out)
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x1a2c_2050);
    let mut q = random_unit_vector(&mut rng, n);
    let mut basis: Vec<CVec> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut theta = 0.0f64;
    for k in 0..n {
        let mut w = apply(&q);
        let a = inner(&q, &w).re;
        basis.push(q.clone());
        alphas.push(a);
        for _ in 0..2 {
            for b in &basis {
                let proj = inner(b, &w);
                w.axpy(-proj, b, C64::new(1.0, 0.0));
            }
        }
        let beta = vec_norm(&w);
        let dim = k + 1;
        let t = DMatrix::<f64>::from_fn(dim, dim, |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j {
                betas[i]
            } else if j + 1 == i {
                betas[j]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (top, &value) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        theta = value;
        let residual = beta * eig.eigenvectors[(dim - 1, top)].abs();
        if residual <= 1e-15 * theta.abs() || beta <= 1e-300 || dim == n {
            break;
        }
        betas.push(beta);
        q = w / C64::new(beta, 0.0);
    }
    theta.max(0.0).sqrt()
}

/// Spectral norm of `m`, but returns early with the Frobenius norm when that
/// already certifies `‖m‖₂ ≤ tol`. Used by tolerance checks on large matrices.
pub fn spectral_norm_upto(m: &CMat, tol: f64) -> f64 {
    let f = frobenius(m);
    if f <= tol {
        f
    } else {
        spectral_norm(m)
    }
}

/// `max` that propagates NaN, so a NaN residual cannot vanish from a worst case.
pub trait NanMax {
    fn nan_max(self, other: f64) -> f64;
}

impl NanMax for f64 {
    fn nan_max(self, other: f64) -> f64 {
        if self.is_nan() || other.is_nan() {
            f64::NAN
        } else {
            self.max(other)
        }
    }
}

pub fn vec_norm(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// ⟨a, b⟩, antilinear in the first slot.
pub fn inner(a: &CVec, b: &CVec) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CVec {
    CVec::from_fn(dim, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Random complex Gaussian vector scaled to unit norm.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CVec {
    let v = random_vector(rng, dim);
    let n = vec_norm(&v);
    v.unscale(n)
}

pub fn unit_vector(dim: usize, j: usize) -> CVec {
    let mut v = CVec::zeros(dim);
    v[j] = C64::new(1.0, 0.0);
    v
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn anticommutator(a: &CMat, b: &CMat) -> CMat {
    a * b + b * a
}

/// Column-major dense matrix-vector product that skips stored zeros.
#[derive(Debug, Clone)]
pub struct SparseCols {
    dim: usize,
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseCols {
    pub fn from_dense(m: &CMat) -> Self {
        let mut col_ptr = Vec::with_capacity(m.ncols() + 1);
        let mut rows = Vec::new();
        let mut vals = Vec::new();
        col_ptr.push(0);
        for col in m.column_iter() {
            for (j, z) in col.iter().enumerate() {
                if *z != C64::new(0.0, 0.0) {
                    rows.push(j);
                    vals.push(*z);
                }
            }
            col_ptr.push(rows.len());
        }
        SparseCols {
            dim: m.nrows(),
            col_ptr,
            rows,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Accumulates `m · x` into `out` (which is overwritten).
    pub fn mul_into(&self, x: &[C64], out: &mut [C64]) {
        debug_assert_eq!(out.len(), self.dim);
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for (k, xk) in x.iter().enumerate() {
            if *xk == C64::new(0.0, 0.0) {
                continue;
            }
            let (s, e) = (self.col_ptr[k], self.col_ptr[k + 1]);
            for idx in s..e {
                out[self.rows[idx]] += self.vals[idx] * xk;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_rank_one() {
        let u = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0), c(0.0, 0.0)]);
        let m = &u * u.adjoint();
        assert!((spectral_norm(&m) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lanczos_agrees_with_svd() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = LANCZOS_MIN_DIM + 10;
        let m = CMat::from_fn(n, n, |j, k| {
            if (j * 7 + k * 3) % 5 == 0 {
                random_vector(&mut rng, 1)[0]
            } else {
                c(0.0, 0.0)
            }
        });
        let svd = m.clone().singular_values().iter().cloned().fold(0.0, f64::max);
        assert!((spectral_norm(&m) - svd).abs() <= 1e-12 * svd);
        let dense = CMat::from_fn(n, n, |_, _| random_vector(&mut rng, 1)[0]);
        let svd = dense.clone().singular_values().iter().cloned().fold(0.0, f64::max);
        assert!((spectral_norm(&dense) - svd).abs() <= 1e-12 * svd);
        let id = CMat::identity(n, n) + CMat::from_fn(n, n, |j, k| if j + 1 == k { c(1e-3, 0.0) } else { c(0.0, 0.0) });
        let svd = id.clone().singular_values().iter().cloned().fold(0.0, f64::max);
        assert!((spectral_norm(&id) - svd).abs() <= 1e-12 * svd);
    }

    #[test]
    fn sparse_product_matches_dense() {
        let m = CMat::from_fn(4, 4, |j, k| {
            if (j + k) % 3 == 0 {
                c(j as f64, k as f64)
            } else {
                c(0.0, 0.0)
            }
        });
        let x = CVec::from_fn(4, |j, _| c(1.0 + j as f64, -0.5));
        let sp = SparseCols::from_dense(&m);
        let mut out = vec![C64::new(0.0, 0.0); 4];
        sp.mul_into(x.as_slice(), &mut out);
        let dense = &m * &x;
        for j in 0..4 {
            assert!((out[j] - dense[j]).norm() < 1e-14);
        }
    }
}
