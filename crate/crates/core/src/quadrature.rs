//! Gauss–Legendre rules with spectral cumulative-integration matrices.

/// Evaluates `(P_n(x), P_{n-1}(x))` by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

pub fn legendre(n: usize, x: f64) -> f64 {
    legendre_pair(n, x).0
}

/// An `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Besides nodes and weights it stores `integ[k][j] = ∫_{-1}^{x_k} ℓ_j(s) ds`,
/// where `ℓ_j` is the Lagrange basis polynomial through the nodes. Applying it
/// to samples of a function integrates the degree-`n-1` interpolant from the
/// left end of the panel up to each node.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub integ: Vec<Vec<f64>>,
    /// `tail_coeff[j]` maps samples to the coefficient of `P_{n-1}` in the interpolant.
    pub tail_coeff: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Chebyshev-like initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            for _ in 0..100 {
                let (p, pm) = legendre_pair(n, x);
                let dp = nf * (x * p - pm) / (x * x - 1.0);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (p, pm) = legendre_pair(n, x);
            let dp = nf * (x * p - pm) / (x * x - 1.0);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }

        let lagrange = |j: usize, s: f64| -> f64 {
            let mut v = 1.0;
            for m in 0..n {
                if m != j {
                    v *= (s - nodes[m]) / (nodes[j] - nodes[m]);
                }
            }
            v
        };
        let integ = (0..n)
            .map(|k| {
                let half = 0.5 * (nodes[k] + 1.0);
                (0..n)
                    .map(|j| {
                        (0..n)
                            .map(|q| {
                                let s = -1.0 + half * (nodes[q] + 1.0);
                                weights[q] * lagrange(j, s)
                            })
                            .sum::<f64>()
                            * half
                    })
                    .collect()
            })
            .collect();
        let top = n - 1;
        let scale = (2.0 * top as f64 + 1.0) / 2.0;
        let tail_coeff = (0..n).map(|j| scale * weights[j] * legendre(top, nodes[j])).collect();
        GaussRule {
            nodes,
            weights,
            integ,
            tail_coeff,
        }
    }
}
