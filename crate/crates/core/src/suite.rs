//! Verification suites: algebraic identities of the propagator, agreement
//! with the independent oracles, a-priori bound audits, and grade-weighted
//! convergence tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dyson::{apriori_bound, Direction, DysonEngine, DysonTerm, TimeGrid, BOUND_SLACK};
use crate::error::Result;
use crate::evolution::propagators_u;
use crate::graded::weighted_norm;
use crate::linalg::{inner, random_unit_vector, spectral_norm, vec_norm, CMat, CVec, NanMax};
use crate::models::RandomModel;
use crate::oracle::{ode_oracle, oracle_propagator, ORACLE_LABEL};
use crate::report::Report;

/// Knobs for [`identity_suite`].
#[derive(Debug, Clone, Serialize)]
pub struct IdentityParams {
    /// Random `(t, t', t'', s)` tuples.
    pub tuples: usize,
    /// Random `(η, ξ)` pairs for the duality check.
    pub pairs: usize,
    pub seed: u64,
    /// Times are drawn from `[−time_range, time_range]`.
    pub time_range: f64,
    /// Series tolerance.
    pub tol: f64,
    /// Threshold for cocycle, covariance and inverse residuals.
    pub identity_tol: f64,
    pub unitarity_tol: f64,
    pub duality_tol: f64,
}

impl Default for IdentityParams {
    fn default() -> Self {
        IdentityParams {
            tuples: 10,
            pairs: 20,
            seed: 0x1d_5eed,
            time_range: 1.0,
            tol: 1e-10,
            identity_tol: 1e-7,
            unitarity_tol: 1e-8,
            duality_tol: 1e-9,
        }
    }
}

/// Cocycle, translation covariance, inverse, duality and (for Hermitian
/// interactions) unitarity of `U(t, t')`, each reported as its worst residual.
pub fn identity_suite(engine: &DysonEngine, params: &IdentityParams) -> Result<Vec<Report>> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = engine.dim();
    let tol = params.tol;
    let r = params.time_range;
    let mut cocycle = 0.0f64;
    let mut covariance = 0.0f64;
    let mut inverse = 0.0f64;
    for _ in 0..params.tuples {
        let t: f64 = rng.random_range(-r..=r);
        let tp: f64 = rng.random_range(-r..=r);
        let tpp: f64 = rng.random_range(-r..=r);
        let s: f64 = rng.random_range(-r..=r);
        let xi = random_unit_vector(&mut rng, n);

        let via = engine.propagate(&engine.propagate(&xi, tp, tpp, tol)?, t, tp, tol)?;
        let direct = engine.propagate(&xi, t, tpp, tol)?;
        cocycle = cocycle.nan_max(vec_norm(&(via - &direct)));

        let free = engine.free();
        let conj = free.apply_free(-s, &engine.propagate(&free.apply_free(s, &xi), t, tp, tol)?);
        let shifted = engine.propagate(&xi, t + s, tp + s, tol)?;
        covariance = covariance.nan_max(vec_norm(&(conj - shifted)));

        let round = engine.propagate(&engine.propagate(&xi, tp, t, tol)?, t, tp, tol)?;
        inverse = inverse.nan_max(vec_norm(&(round - &xi)));
    }
    let mut duality = 0.0f64;
    for _ in 0..params.pairs {
        let t: f64 = rng.random_range(-r..=r);
        let tp: f64 = rng.random_range(-r..=r);
        let eta = random_unit_vector(&mut rng, n);
        let xi = random_unit_vector(&mut rng, n);
        let lhs = inner(&engine.propagate(&eta, t, tp, tol)?, &xi);
        let rhs = inner(&eta, &engine.propagate_adjoint(&xi, t, tp, tol)?);
        duality = duality.nan_max((lhs - rhs).norm());
    }
    let ctx = |rep: Report| {
        rep.with("dim", n)
            .with("b", engine.cert().b)
            .with("C", engine.cert().c)
            .with("seed", params.seed)
            .with("series_tol", tol)
    };
    let mut reports = vec![
        ctx(Report::new("cocycle", cocycle, params.identity_tol).with("tuples", params.tuples)),
        ctx(Report::new("translation_covariance", covariance, params.identity_tol).with("tuples", params.tuples)),
        ctx(Report::new("inverse", inverse, params.identity_tol).with("tuples", params.tuples)),
        ctx(Report::new("adjoint_duality", duality, params.duality_tol).with("pairs", params.pairs)),
    ];
    if engine.h1().hermiticity_defect() == 0.0 {
        let t = rng.random_range(-r..=r);
        let u = propagators_u(engine, 0.0, &[t], tol)?.remove(0);
        let defect = spectral_norm(&(u.adjoint() * &u - CMat::identity(n, n)));
        reports.push(ctx(Report::new("unitarity", defect, params.unitarity_tol).with("t", t)));
    }
    Ok(reports)
}

/// `‖U(t, 0) − e^{itH0} e^{−itH}‖₂` for the column-assembled propagator at each time.
pub fn oracle_equivalence(engine: &DysonEngine, times: &[f64], tol: f64, threshold: f64) -> Result<Vec<Report>> {
    let us = propagators_u(engine, 0.0, times, tol)?;
    times
        .iter()
        .zip(us)
        .map(|(&t, u)| {
            let oracle = oracle_propagator(engine.h0(), engine.h1(), t, 0.0)?;
            Ok(
                Report::new("oracle_equivalence", spectral_norm(&(u - oracle.matrix())), threshold)
                    .with("t", t)
                    .with("dim", engine.dim())
                    .with("series_tol", tol)
                    .with("oracle", ORACLE_LABEL),
            )
        })
        .collect()
}

/// Agreement of the matrix-exponential oracle with the Runge–Kutta oracle on
/// seeded random vectors.
pub fn oracle_cross_check(engine: &DysonEngine, t: f64, samples: usize, seed: u64, threshold: f64) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = oracle_propagator(engine.h0(), engine.h1(), t, 0.0)?;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let xi = random_unit_vector(&mut rng, engine.dim());
        let ode = ode_oracle(engine.h0(), engine.h1(), &xi, t, 0.0, threshold * 1e-3)?;
        worst = worst.nan_max(vec_norm(&(u.matrix() * &xi - ode)));
    }
    Ok(Report::new("oracle_cross_check", worst, threshold)
        .with("t", t)
        .with("samples", samples)
        .with("oracle", ORACLE_LABEL))
}

/// Counts orders whose sup-norm over the grid exceeds the a-priori bound
/// (with relative slack `1e−6`), over every basis vector and `extra` random
/// vectors, for the series from `0` to `t`.
pub fn bound_audit(engine: &DysonEngine, t: f64, tol: f64, extra: usize, seed: u64) -> Result<Report> {
    let n = engine.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors: Vec<CVec> = (0..n).map(|j| crate::linalg::unit_vector(n, j)).collect();
    vectors.extend((0..extra).map(|_| random_unit_vector(&mut rng, n)));
    let results: Vec<(usize, usize, usize, f64)> = vectors
        .par_iter()
        .map(|xi| {
            let grid = engine.auto_grid(Direction::Forward, 0.0, t, xi, tol)?;
            let r = engine.evolve_vector(xi, &grid, tol)?;
            let worst_ratio = r
                .per_order_sup_norms
                .iter()
                .zip(&r.per_order_bounds)
                .filter(|(_, b)| **b > 0.0)
                .map(|(s, b)| s / b)
                .fold(0.0, f64::nan_max);
            Ok((r.bound_violations, r.achieved_order, r.support_violations, worst_ratio))
        })
        .collect::<Result<_>>()?;
    let violations: usize = results.iter().map(|r| r.0).sum();
    let support: usize = results.iter().map(|r| r.2).sum();
    let max_order = results.iter().map(|r| r.1).max().unwrap_or(0);
    let ratio = results.iter().map(|r| r.3).fold(0.0, f64::nan_max);
    Ok(Report::new("apriori_bound", violations as f64, 0.0)
        .with("vectors", vectors.len())
        .with("max_achieved_order", max_order)
        .with("max_sup_to_bound_ratio", ratio)
        .with("support_violations", support)
        .with("slack", BOUND_SLACK)
        .with("t", t))
}

/// Grade-weighted distances `‖φ_n − φ‖_{α,∞}` of the partial sums from the
/// limit, one column per `α`, with the matching a-priori tail bounds.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub alphas: Vec<f64>,
    pub orders: Vec<usize>,
    /// `observed[a][n]` for `alphas[a]` and `orders[n]`.
    pub observed: Vec<Vec<f64>>,
    pub bounds: Vec<Vec<f64>>,
    /// First order from which each column decreases strictly through `N_max`.
    pub onset: Vec<Option<usize>>,
    /// Whether each column stays within `DOMINATION_FACTOR` of its bound.
    pub dominated: Vec<bool>,
    /// Order at which the limit was truncated.
    pub limit_order: usize,
    pub t_start: f64,
    pub t_end: f64,
}

/// Allowed excess of an observed distance over its bound.
pub const DOMINATION_FACTOR: f64 = 1.001;

impl ConvergenceTable {
    /// Rows `(order, observed_α…, bound_α…)`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["order".to_string()];
        header.extend(self.alphas.iter().map(|a| format!("observed_alpha_{a}")));
        header.extend(self.alphas.iter().map(|a| format!("bound_alpha_{a}")));
        w.write_record(&header)?;
        for (i, n) in self.orders.iter().enumerate() {
            let mut row = vec![n.to_string()];
            row.extend(self.observed.iter().map(|c| format!("{:e}", c[i])));
            row.extend(self.bounds.iter().map(|c| format!("{:e}", c[i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Whether every column is dominated and strictly decreasing from some onset.
    pub fn passed(&self) -> bool {
        self.dominated.iter().all(|d| *d) && self.onset.iter().all(|o| o.is_some())
    }

    pub fn reports(&self) -> Vec<Report> {
        self.alphas
            .iter()
            .enumerate()
            .map(|(a, alpha)| {
                let excess = self.observed[a]
                    .iter()
                    .zip(&self.bounds[a])
                    .map(|(o, b)| {
                        if *b > 0.0 {
                            o / b
                        } else if *o > 0.0 {
                            f64::INFINITY
                        } else {
                            0.0
                        }
                    })
                    .fold(0.0, f64::nan_max);
                Report::new(format!("weighted_convergence_alpha_{alpha}"), excess, DOMINATION_FACTOR)
                    .with("alpha", *alpha)
                    .with("onset", self.onset[a].map(|o| o as i64).unwrap_or(-1))
                    .with("limit_order", self.limit_order)
            })
            .collect()
    }
}

/// Tail `Σ_{k>n} a_k(dt) (L + k b + 1)^{α/2}` of the weighted a-priori bounds,
/// summed until the ratio test has kicked in and increments fall below
/// `1e−17` of the running total.
pub fn weighted_tail(n: usize, dt: f64, c: f64, b: f64, l_xi: f64, norm_xi: f64, alpha: f64) -> f64 {
    let weight = |k: usize| (l_xi + k as f64 * b + 1.0).powf(alpha / 2.0);
    let mut k = n + 1;
    let mut a = apriori_bound(k, dt, c, b, l_xi, norm_xi);
    let mut tail = 0.0;
    for _ in 0..1_000_000 {
        let term = a * weight(k);
        tail += term;
        if term == 0.0 || !tail.is_finite() {
            break;
        }
        let ratio = dt * c * (l_xi + k as f64 * b + 1.0).sqrt() / (k + 1) as f64 * weight(k + 1) / weight(k);
        if ratio < 1.0 && term < 1e-17 * tail {
            break;
        }
        a *= dt * c * (l_xi + k as f64 * b + 1.0).sqrt() / (k + 1) as f64;
        k += 1;
    }
    tail
}

/// Builds the table on `grid` (from `t'` to `t`) for orders `0..=n_max`. The
/// limit is approximated by continuing the series until the weighted
/// a-priori tail drops below `1e−20·‖ξ‖` or a term vanishes, and each
/// distance is the norm of the summed remaining terms.
pub fn appendix_convergence(
    engine: &DysonEngine,
    xi: &CVec,
    grid: &TimeGrid,
    alphas: &[f64],
    n_max: usize,
) -> Result<ConvergenceTable> {
    if n_max < 2 {
        return Err(crate::error::Error::Malformed("N_max must be at least 2".into()));
    }
    if alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        return Err(crate::error::Error::Malformed(
            "alphas must be finite and non-negative".into(),
        ));
    }
    let space = engine.space().clone();
    space.check_len(xi.len())?;
    let cert = engine.cert();
    let l_xi = space.support_grade(xi)?;
    let norm = vec_norm(xi);
    let dt = (grid.t_end() - grid.t_start()).abs();
    let alpha_max = alphas.iter().cloned().fold(0.0, f64::max);
    let cap = n_max + engine.options().max_order;

    let mut terms = vec![DysonTerm {
        order: 0,
        values: vec![xi.clone(); grid.node_count()],
        sup_norm: norm,
    }];
    loop {
        let last = terms.last().expect("nonempty");
        let k = last.order;
        let done = k >= n_max
            && (last.sup_norm == 0.0
                || weighted_tail(k, dt, cert.c, cert.b, l_xi, norm, alpha_max) <= 1e-20 * norm
                || k >= cap);
        if done {
            break;
        }
        let next = engine.dyson_step(last, grid)?;
        terms.push(next);
    }
    let limit_order = terms.len() - 1;

    // remainders[n] = Σ_{k>n} U_k at every node, accumulated from the top.
    let nodes = grid.node_count();
    let mut remainder: Vec<CVec> = vec![CVec::zeros(xi.len()); nodes];
    let mut observed = vec![vec![0.0; n_max + 1]; alphas.len()];
    for k in (1..=limit_order).rev() {
        for (r, v) in remainder.iter_mut().zip(&terms[k].values) {
            *r += v;
        }
        let n = k - 1;
        if n <= n_max {
            for (a, alpha) in alphas.iter().enumerate() {
                let mut sup = 0.0f64;
                for r in &remainder {
                    sup = sup.nan_max(weighted_norm(&space, r, *alpha)?);
                }
                observed[a][n] = sup;
            }
        }
    }
    let bounds: Vec<Vec<f64>> = alphas
        .iter()
        .map(|alpha| {
            (0..=n_max)
                .map(|n| weighted_tail(n, dt, cert.c, cert.b, l_xi, norm, *alpha))
                .collect()
        })
        .collect();
    let onset = observed
        .iter()
        .map(|col| {
            let mut start = n_max;
            while start > 0 && col[start - 1] > col[start] {
                start -= 1;
            }
            (start < n_max).then_some(start)
        })
        .collect();
    let dominated = observed
        .iter()
        .zip(&bounds)
        .map(|(o, b)| o.iter().zip(b).all(|(x, y)| *x <= y * DOMINATION_FACTOR))
        .collect();
    Ok(ConvergenceTable {
        alphas: alphas.to_vec(),
        orders: (0..=n_max).collect(),
        observed,
        bounds,
        onset,
        dominated,
        limit_order,
        t_start: grid.t_start(),
        t_end: grid.t_end(),
    })
}

/// Identity suite, oracle equivalence at `oracle_times`, an ODE cross-check
/// at the last time and a bound audit over `[0, 1]`.
pub fn engine_reports(engine: &DysonEngine, params: &IdentityParams, oracle_times: &[f64]) -> Result<Vec<Report>> {
    let mut reports = identity_suite(engine, params)?;
    reports.extend(oracle_equivalence(engine, oracle_times, params.tol, 1e-7)?);
    reports.extend([
        oracle_cross_check(
            engine,
            oracle_times.last().copied().unwrap_or(1.0),
            3,
            params.seed,
            1e-8,
        )?,
        bound_audit(engine, 1.0, params.tol, 4, params.seed)?,
    ]);
    Ok(reports)
}

/// Every check of the fleet suite for one random model.
pub fn model_reports(model: &RandomModel, params: &IdentityParams, oracle_times: &[f64]) -> Result<Vec<Report>> {
    let engine = DysonEngine::new(&model.h0, &model.h1)?;
    Ok(engine_reports(&engine, params, oracle_times)?
        .into_iter()
        .map(|r| r.with("model_seed", model.seed).with("shift", model.spec.shift))
        .collect())
}
