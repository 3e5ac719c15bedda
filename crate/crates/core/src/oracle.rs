//! Independent reference computations: dense matrix exponential, the closed-form
//! finite-dimensional propagator, and an adaptive Runge–Kutta integrator.

use nalgebra::SymmetricEigen;

use crate::error::{Assumption, Error, Result};
use crate::graded::LinOp;
use crate::linalg::{CMat, CVec, C64};

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];
const THETA13: f64 = 5.371920351148152;

fn all_finite<'a>(mut zs: impl Iterator<Item = &'a C64>) -> bool {
    zs.all(|z| z.re.is_finite() && z.im.is_finite())
}

fn one_norm(m: &CMat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `(U, V)` with `U` odd and `V` even parts of the degree-m Padé numerator.
fn pade_low(a: &CMat, coeffs: &[f64]) -> (CMat, CMat) {
    let n = a.nrows();
    let id = CMat::identity(n, n);
    let a2 = a * a;
    let mut u = id.scale(coeffs[1]);
    let mut v = id.scale(coeffs[0]);
    let mut pow = id;
    let mut k = 2;
    while k < coeffs.len() {
        pow = &pow * &a2;
        v += pow.scale(coeffs[k]);
        if k + 1 < coeffs.len() {
            u += pow.scale(coeffs[k + 1]);
        }
        k += 2;
    }
    (a * u, v)
}

fn pade13(a: &CMat) -> (CMat, CMat) {
    let b = &PADE13;
    let n = a.nrows();
    let id = CMat::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (a6.scale(b[13]) + a4.scale(b[11]) + a2.scale(b[9]));
    let u = a * (inner_u + a6.scale(b[7]) + a4.scale(b[5]) + a2.scale(b[3]) + id.scale(b[1]));
    let inner_v = &a6 * (a6.scale(b[12]) + a4.scale(b[10]) + a2.scale(b[8]));
    let v = inner_v + a6.scale(b[6]) + a4.scale(b[4]) + a2.scale(b[2]) + id.scale(b[0]);
    (u, v)
}

/// `e^T` by scaling and squaring with a diagonal Padé approximant.
pub fn expm(t: &CMat) -> Result<CMat> {
    let n = t.nrows();
    if n != t.ncols() {
        return Err(Error::Malformed("matrix exponential needs a square matrix".into()));
    }
    if !all_finite(t.iter()) {
        return Err(Error::Overflow("input has non-finite entries".into()));
    }
    let norm = one_norm(t);
    if !norm.is_finite() {
        return Err(Error::Overflow("input has non-finite 1-norm".into()));
    }
    if norm == 0.0 {
        return Ok(CMat::identity(n, n));
    }
    let (u, v, squarings) = match THETA.iter().find(|(_, th)| norm <= *th) {
        Some((3, _)) => {
            let (u, v) = pade_low(t, &PADE3);
            (u, v, 0)
        }
        Some((5, _)) => {
            let (u, v) = pade_low(t, &PADE5);
            (u, v, 0)
        }
        Some((7, _)) => {
            let (u, v) = pade_low(t, &PADE7);
            (u, v, 0)
        }
        Some(_) => {
            let (u, v) = pade_low(t, &PADE9);
            (u, v, 0)
        }
        None => {
            let s = (norm / THETA13).log2().ceil().max(0.0) as i32;
            if s > 1000 {
                return Err(Error::Overflow(format!("1-norm {norm:e} needs {s} squarings")));
            }
            let scaled = t.scale(2f64.powi(-s));
            let (u, v) = pade13(&scaled);
            (u, v, s)
        }
    };
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Overflow("Padé denominator is singular".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if !all_finite(r.iter()) {
        return Err(Error::Overflow("result has non-finite entries".into()));
    }
    Ok(r)
}

/// [`expm`] on a graded operator.
pub fn matrix_exp(t: &LinOp) -> Result<LinOp> {
    t.with_matrix(expm(t.matrix())?)
}

/// `e^{itH0} e^{-i(t-t')(H0+H1)} e^{-it'H0}`. For non-symmetric `H1` this rests on
/// uniqueness of solutions of the interaction-picture equation, so reports label
/// it a derived oracle.
pub fn oracle_propagator(h0: &LinOp, h1: &LinOp, t: f64, t_prime: f64) -> Result<LinOp> {
    h0.same_space(h1)?;
    let i = C64::new(0.0, 1.0);
    let h = h0.matrix() + h1.matrix();
    let left = expm(&(h0.matrix() * (i * t)))?;
    let mid = expm(&(h * (-i * (t - t_prime))))?;
    let right = expm(&(h0.matrix() * (-i * t_prime)))?;
    h0.with_matrix(left * mid * right)
}

pub const ORACLE_LABEL: &str = "derived oracle";

/// Right-hand side `−i H1(τ) y` built from a full eigendecomposition of `H0`.
struct PictureRhs {
    energies: Vec<f64>,
    basis: CMat,
    h1_eigen: CMat,
}

impl PictureRhs {
    fn new(h0: &LinOp, h1: &LinOp) -> Result<Self> {
        let m = h0.matrix();
        let scale = m.iter().fold(0.0_f64, |a, z| a.max(z.norm()));
        let skew = (m - m.adjoint()).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
        if skew > 1e-12 * scale.max(f64::MIN_POSITIVE) && skew > 0.0 {
            return Err(Error::assumption(
                Assumption::FreeHamiltonianGraded,
                format!("H0 is not Hermitian (max skew entry {skew:e})"),
            ));
        }
        let herm = (m + m.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(herm);
        let basis = eig.eigenvectors;
        let h1_eigen = basis.adjoint() * h1.matrix() * &basis;
        Ok(PictureRhs {
            energies: eig.eigenvalues.iter().cloned().collect(),
            basis,
            h1_eigen,
        })
    }

    /// Works on eigenbasis coordinates.
    fn eval(&self, tau: f64, y: &CVec) -> CVec {
        let mut x = y.clone();
        for (z, e) in x.iter_mut().zip(&self.energies) {
            *z *= C64::from_polar(1.0, -tau * e);
        }
        let mut out = &self.h1_eigen * x;
        for (z, e) in out.iter_mut().zip(&self.energies) {
            *z *= C64::new(0.0, -1.0) * C64::from_polar(1.0, tau * e);
        }
        out
    }
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `∂_t U(t, t')ξ = −i H1(t) U(t, t')ξ` from `t'` to `t` with an
/// adaptive Dormand–Prince 5(4) pair at local tolerance `tol`.
pub fn ode_oracle(h0: &LinOp, h1: &LinOp, xi: &CVec, t: f64, t_prime: f64, tol: f64) -> Result<CVec> {
    h0.same_space(h1)?;
    h0.space().check_len(xi.len())?;
    if !(tol > 0.0) {
        return Err(Error::Malformed(format!("tolerance {tol} must be > 0")));
    }
    let rhs = PictureRhs::new(h0, h1)?;
    let mut y = rhs.basis.ad_mul(xi);
    let span = t - t_prime;
    if span == 0.0 {
        return Ok(xi.clone());
    }
    let dir = span.signum();
    let mut tau = t_prime;
    let mut h = dir * (span.abs() / 100.0).min(0.01);
    let mut k: Vec<CVec> = Vec::with_capacity(7);
    let mut steps = 0usize;
    while (t - tau) * dir > 0.0 {
        if (tau + h - t) * dir > 0.0 {
            h = t - tau;
        }
        k.clear();
        for s in 0..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                if DP_A[s][j] != 0.0 {
                    ys += kj * C64::new(h * DP_A[s][j], 0.0);
                }
            }
            k.push(rhs.eval(tau + DP_C[s] * h, &ys));
        }
        let mut y5 = y.clone();
        let mut err_vec = CVec::zeros(y.len());
        for s in 0..7 {
            y5 += &k[s] * C64::new(h * DP_B5[s], 0.0);
            err_vec += &k[s] * C64::new(h * (DP_B5[s] - DP_B4[s]), 0.0);
        }
        let err = err_vec
            .iter()
            .zip(y.iter().zip(y5.iter()))
            .map(|(e, (a, b))| e.norm() / (tol + tol * a.norm().max(b.norm())))
            .fold(0.0, f64::max);
        if !err.is_finite() || !all_finite(y5.iter()) {
            return Err(Error::Stiffness { t: tau, step: h.abs() });
        }
        if err <= 1.0 {
            tau += h;
            y = y5;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        steps += 1;
        if h.abs() < 1e-14 * tau.abs().max(1.0) || steps > 10_000_000 {
            return Err(Error::Stiffness { t: tau, step: h.abs() });
        }
    }
    Ok(&rhs.basis * y)
}
