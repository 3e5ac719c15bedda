//! Iterated Dyson series for the interaction-picture propagator `U(t, t')`.
//!
//! All heavy work happens in the eigenbasis of `H0`. `H0` is diagonalised one
//! grade block at a time, so the eigenbasis is itself graded and supports are
//! preserved exactly. In that frame one application of `H1(τ)` is two phase
//! multiplications around a fixed (sparse-skipping) matrix-vector product.

use std::sync::Arc;

use nalgebra::SymmetricEigen;
use serde::Serialize;

use crate::error::{Assumption, Error, Result};
use crate::graded::{vector_to_pairs, GradeCert, GradedSpace, LinOp, GRADE_TOLERANCE, SHIFT_ENTRY_THRESHOLD};
use crate::linalg::{max_abs, vec_norm, CMat, CVec, SparseCols, C64};
use crate::quadrature::GaussRule;

pub const DEFAULT_NODES_PER_PANEL: usize = 8;
pub const DEFAULT_MAX_ORDER: usize = 64;
/// Relative slack allowed when comparing computed terms against the a-priori bound.
pub const BOUND_SLACK: f64 = 1e-6;
/// Relative size below which components outside the predicted sector are ignored.
pub const SUPPORT_SLACK: f64 = 1e-12;
/// Absolute floor (relative to `‖ξ‖`) for the per-node bound check. Near `t'`
/// the high-order terms fall far below double-precision resolution, where
/// interpolation round-off is larger than the exact value.
pub const NODE_FLOOR: f64 = 1e-16;
const HERMITIAN_TOL: f64 = 1e-12;

/// Panel breakpoints from `t_start` to `t_end` plus the per-panel Gauss order.
///
/// Breakpoints run monotonically in either direction; a backward grid
/// (`t_end < t_start`) integrates with signed orientation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    breaks: Vec<f64>,
    nodes_per_panel: usize,
}

impl TimeGrid {
    pub fn uniform(t_start: f64, t_end: f64, panels: usize, nodes_per_panel: usize) -> Result<Self> {
        if panels == 0 {
            return Err(Error::Malformed("time grid needs at least one panel".into()));
        }
        let h = (t_end - t_start) / panels as f64;
        let mut breaks: Vec<f64> = (0..panels).map(|p| t_start + h * p as f64).collect();
        breaks.push(t_end);
        Self::from_breaks(breaks, nodes_per_panel)
    }

    /// Grid starting at `t_start` whose breakpoints include every entry of
    /// `targets` (given in order of increasing distance from `t_start`, all on
    /// one side), with no panel wider than `max_width`.
    pub fn through(t_start: f64, targets: &[f64], max_width: f64, nodes_per_panel: usize) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Malformed("time grid needs at least one target".into()));
        }
        let mut breaks = vec![t_start];
        let mut last = t_start;
        for &t in targets {
            let span = (t - last).abs();
            let pieces = if max_width.is_finite() && max_width > 0.0 {
                ((span / max_width).ceil() as usize).max(1)
            } else {
                1
            };
            for p in 1..pieces {
                breaks.push(last + (t - last) * p as f64 / pieces as f64);
            }
            breaks.push(t);
            last = t;
        }
        Self::from_breaks(breaks, nodes_per_panel)
    }

    pub fn from_breaks(breaks: Vec<f64>, nodes_per_panel: usize) -> Result<Self> {
        if nodes_per_panel < 2 {
            return Err(Error::Malformed("nodes_per_panel must be >= 2".into()));
        }
        if breaks.len() < 2 {
            return Err(Error::Malformed("time grid needs two breakpoints".into()));
        }
        if breaks.iter().any(|t| !t.is_finite()) {
            return Err(Error::Malformed("time grid has non-finite breakpoints".into()));
        }
        let span = breaks[breaks.len() - 1] - breaks[0];
        let dir = if span > 0.0 {
            1.0
        } else if span < 0.0 {
            -1.0
        } else {
            0.0
        };
        let monotone = breaks.windows(2).all(|w| {
            let d = w[1] - w[0];
            if dir == 0.0 {
                d == 0.0
            } else {
                d * dir > 0.0
            }
        });
        if !monotone {
            return Err(Error::Malformed(
                "time grid breakpoints must be strictly monotone".into(),
            ));
        }
        Ok(TimeGrid {
            breaks,
            nodes_per_panel,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn t_end(&self) -> f64 {
        self.breaks[self.breaks.len() - 1]
    }

    pub fn panels(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn nodes_per_panel(&self) -> usize {
        self.nodes_per_panel
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn node_count(&self) -> usize {
        self.panels() * (self.nodes_per_panel + 1) + 1
    }

    /// Index of breakpoint `p` in the node list.
    pub fn break_index(&self, p: usize) -> usize {
        p * (self.nodes_per_panel + 1)
    }

    /// All sample times: each breakpoint followed by the Gauss nodes of the panel it opens.
    pub fn nodes(&self) -> Vec<f64> {
        let rule = GaussRule::new(self.nodes_per_panel);
        self.nodes_with(&rule)
    }

    fn nodes_with(&self, rule: &GaussRule) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.node_count());
        for w in self.breaks.windows(2) {
            out.push(w[0]);
            let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            out.extend(rule.nodes.iter().map(|x| mid + half * x));
        }
        out.push(self.t_end());
        out
    }
}

/// One order of the series sampled on every node of a grid.
#[derive(Debug, Clone)]
pub struct DysonTerm {
    pub order: usize,
    pub values: Vec<CVec>,
    pub sup_norm: f64,
}

impl DysonTerm {
    pub fn compute_sup_norm(&self) -> f64 {
        self.values.iter().map(vec_norm).fold(0.0, f64::max)
    }
}

/// Outcome of summing the series on a grid.
#[derive(Debug, Clone)]
pub struct SeriesResult {
    pub terms: Vec<DysonTerm>,
    pub partial_sum: CVec,
    pub achieved_order: usize,
    pub tail_bound: f64,
    pub quadrature_estimate: f64,
    pub grid: TimeGrid,
    /// `(b, C)` of the operator that drove the recursion.
    pub cert: GradeCert,
    /// Support grade `L_ξ` of the initial vector.
    pub support_grade: f64,
    pub per_order_sup_norms: Vec<f64>,
    /// A-priori bound of each order at the full interval length.
    pub per_order_bounds: Vec<f64>,
    /// Orders whose sup-norm over the grid exceeds the a-priori bound at `|t − t'|`.
    pub bound_violations: usize,
    /// Nodes `τ` at which a term exceeds the bound at `|τ − t'|`, ignoring
    /// values below `NODE_FLOOR · ‖ξ‖`.
    pub node_bound_violations: usize,
    /// Nodes at which a term leaked outside its predicted grade sector.
    pub support_violations: usize,
}

/// JSON shape of a series result.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesReport {
    pub achieved_order: usize,
    pub tail_bound: f64,
    pub per_order_sup_norms: Vec<f64>,
    pub result: Vec<[f64; 2]>,
}

impl SeriesResult {
    pub fn report(&self) -> SeriesReport {
        SeriesReport {
            achieved_order: self.achieved_order,
            tail_bound: self.tail_bound,
            per_order_sup_norms: self.per_order_sup_norms.clone(),
            result: vector_to_pairs(&self.partial_sum),
        }
    }

    /// Rows `(order, sup_norm, apriori_bound)` for the convergence table.
    pub fn write_convergence_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["order", "sup_norm", "apriori_bound"])?;
        for (n, (s, b)) in self.per_order_sup_norms.iter().zip(&self.per_order_bounds).enumerate() {
            w.write_record([n.to_string(), format!("{s:e}"), format!("{b:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(dt^n / n!) · C^n · Π_{k<n} (L + k b + 1)^{1/2} · ‖ξ‖`.
pub fn apriori_bound(n: usize, dt: f64, c: f64, b: f64, l_xi: f64, norm_xi: f64) -> f64 {
    if n == 0 {
        return norm_xi;
    }
    if dt == 0.0 || c == 0.0 || norm_xi == 0.0 {
        return 0.0;
    }
    let mut log = n as f64 * (dt * c).ln() + norm_xi.ln();
    for k in 0..n {
        log += 0.5 * (l_xi + k as f64 * b + 1.0).ln() - ((k + 1) as f64).ln();
    }
    log.exp()
}

/// Sum of the a-priori bounds beyond `order`, stopped once the terms decay
/// and an increment falls below 1e-3 of the running tail.
pub fn tail_bound(order: usize, dt: f64, c: f64, b: f64, l_xi: f64, norm_xi: f64) -> f64 {
    let first = apriori_bound(order + 1, dt, c, b, l_xi, norm_xi);
    // a_{n+1} / a_n = dt · C · (L + n b + 1)^{1/2} / (n + 1)
    tail_with(order, first, |n| {
        dt * c * (l_xi + n as f64 * b + 1.0).sqrt() / (n + 1) as f64
    })
}

/// Sums `a_{order+1} + a_{order+2} + …` given the first term and the ratio
/// `a_{n+1} / a_n` as a function of `n`.
pub(crate) fn tail_with(order: usize, first: f64, ratio: impl Fn(usize) -> f64) -> f64 {
    let mut a = first;
    let mut tail = 0.0;
    let mut n = order + 1;
    for _ in 0..1_000_000 {
        tail += a;
        if a == 0.0 || !tail.is_finite() {
            break;
        }
        let r = ratio(n);
        if r < 1.0 && a < 1e-3 * tail {
            break;
        }
        a *= r;
        n += 1;
    }
    tail
}

/// Spectral data of `H0`, block-diagonalised by grade.
#[derive(Debug, Clone)]
pub struct FreeDiag {
    energies: Vec<f64>,
    /// Unitary eigenvector matrix, `None` when `H0` is already diagonal.
    basis: Option<CMat>,
}

impl FreeDiag {
    pub fn new(h0: &LinOp) -> Result<Self> {
        let m = h0.matrix();
        let defect = h0.hermiticity_defect();
        if defect > HERMITIAN_TOL {
            return Err(Error::assumption(
                Assumption::FreeHamiltonianGraded,
                format!("‖H0 − H0*‖ / ‖H0‖ = {defect:e} exceeds {HERMITIAN_TOL:e}"),
            ));
        }
        let grades = h0.space().grades();
        let cutoff = SHIFT_ENTRY_THRESHOLD * max_abs(m);
        let n = h0.dim();
        for k in 0..n {
            for j in 0..n {
                if grades[j] != grades[k] && m[(j, k)].norm() > cutoff {
                    return Err(Error::assumption(
                        Assumption::FreeHamiltonianGraded,
                        format!("H0[{j}][{k}] couples grade {} to grade {}", grades[j], grades[k]),
                    ));
                }
            }
        }
        if h0.is_diagonal() {
            return Ok(FreeDiag {
                energies: (0..n).map(|j| m[(j, j)].re).collect(),
                basis: None,
            });
        }
        let mut levels: Vec<f64> = grades.to_vec();
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup();
        let mut energies = vec![0.0; n];
        let mut basis = CMat::zeros(n, n);
        for level in levels {
            let idx: Vec<usize> = (0..n).filter(|&j| grades[j] == level).collect();
            let block = CMat::from_fn(idx.len(), idx.len(), |a, b| {
                0.5 * (m[(idx[a], idx[b])] + m[(idx[b], idx[a])].conj())
            });
            let eig = SymmetricEigen::new(block);
            for (a, &ja) in idx.iter().enumerate() {
                energies[ja] = eig.eigenvalues[a];
                for (bb, &jb) in idx.iter().enumerate() {
                    basis[(jb, ja)] = eig.eigenvectors[(bb, a)];
                }
            }
        }
        Ok(FreeDiag {
            energies,
            basis: Some(basis),
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn spread(&self) -> f64 {
        let hi = self.energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.energies.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    /// `V* x`: coordinates in the eigenbasis.
    pub fn to_eigen(&self, x: &CVec) -> CVec {
        match &self.basis {
            Some(v) => v.ad_mul(x),
            None => x.clone(),
        }
    }

    pub fn from_eigen(&self, x: &CVec) -> CVec {
        match &self.basis {
            Some(v) => v * x,
            None => x.clone(),
        }
    }

    pub fn op_to_eigen(&self, m: &CMat) -> CMat {
        match &self.basis {
            Some(v) => v.adjoint() * m * v,
            None => m.clone(),
        }
    }

    pub fn op_from_eigen(&self, m: &CMat) -> CMat {
        match &self.basis {
            Some(v) => v * m * v.adjoint(),
            None => m.clone(),
        }
    }

    /// Matrix of `e^{-i s H0}`.
    pub fn free_evolution(&self, s: f64) -> CMat {
        if s == 0.0 {
            return CMat::identity(self.energies.len(), self.energies.len());
        }
        let d = CVec::from_iterator(
            self.energies.len(),
            self.energies.iter().map(|e| C64::from_polar(1.0, -s * e)),
        );
        match &self.basis {
            Some(v) => {
                let mut vd = v.clone();
                for (k, mut col) in vd.column_iter_mut().enumerate() {
                    col *= d[k];
                }
                vd * v.adjoint()
            }
            None => CMat::from_diagonal(&d),
        }
    }

    /// `e^{-i s H0} x`.
    pub fn apply_free(&self, s: f64, x: &CVec) -> CVec {
        if s == 0.0 {
            return x.clone();
        }
        let mut y = self.to_eigen(x);
        for (z, e) in y.iter_mut().zip(&self.energies) {
            *z *= C64::from_polar(1.0, -s * e);
        }
        self.from_eigen(&y)
    }
}

/// `e^{iτH0} H1 e^{-iτH0}`.
pub fn interaction_picture(h0: &LinOp, h1: &LinOp, tau: f64) -> Result<LinOp> {
    h0.same_space(h1)?;
    let diag = FreeDiag::new(h0)?;
    let e = diag.energies();
    let mut m = diag.op_to_eigen(h1.matrix());
    for k in 0..m.ncols() {
        for j in 0..m.nrows() {
            m[(j, k)] *= C64::from_polar(1.0, tau * (e[j] - e[k]));
        }
    }
    h1.with_matrix(diag.op_from_eigen(&m))
}

/// Tuning knobs for the series engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EngineOptions {
    pub max_order: usize,
    pub nodes_per_panel: usize,
    /// Panel width is at most `width_factor / (C · (reach + 1)^{1/2})`.
    pub width_factor: f64,
    /// Panel width is at most `phase_factor / spread(H0)`.
    pub phase_factor: f64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            max_order: DEFAULT_MAX_ORDER,
            nodes_per_panel: DEFAULT_NODES_PER_PANEL,
            width_factor: 0.1,
            phase_factor: 0.5,
        }
    }
}

/// Which recursion a sweep runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Terms of `U(t, t')ξ`, driven by `H1(τ)`.
    Forward,
    /// Terms of `U(t, t')*ξ`, driven by `H1(τ)*` and integrated from `t` back to `t'`.
    Adjoint,
}

/// A validated model `H = H0 + H1` with cached spectral data and certificates.
#[derive(Debug, Clone)]
pub struct DysonEngine {
    h0: LinOp,
    h1: LinOp,
    free: FreeDiag,
    h1_eigen: SparseCols,
    h1_adj_eigen: SparseCols,
    cert: GradeCert,
    cert_adj: GradeCert,
    options: EngineOptions,
}

struct Sweep {
    /// Series sum at each breakpoint (original basis).
    sums: Vec<CVec>,
    terms: Vec<DysonTerm>,
    achieved_order: usize,
    tail_bound: f64,
    quadrature_estimate: f64,
    support_grade: f64,
    sup_norms: Vec<f64>,
    bounds: Vec<f64>,
    bound_violations: usize,
    node_bound_violations: usize,
    support_violations: usize,
}

impl DysonEngine {
    pub fn new(h0: &LinOp, h1: &LinOp) -> Result<Self> {
        Self::with_options(h0, h1, EngineOptions::default())
    }

    pub fn with_options(h0: &LinOp, h1: &LinOp, options: EngineOptions) -> Result<Self> {
        h0.same_space(h1)?;
        if options.nodes_per_panel < 2 {
            return Err(Error::Malformed("nodes_per_panel must be >= 2".into()));
        }
        let free = FreeDiag::new(h0)?;
        let h1 = h1.certified();
        let h1_adj = h1.adjoint().certified();
        let cert = h1.cert();
        let cert_adj = h1_adj.cert();
        for (c, which) in [
            (cert, Assumption::InteractionGraded),
            (cert_adj, Assumption::AdjointInteractionGraded),
        ] {
            if !(c.b.is_finite() && c.c.is_finite()) {
                return Err(Error::assumption(
                    which,
                    format!("certificate b = {}, C = {}", c.b, c.c),
                ));
            }
        }
        let h1_eigen_dense = free.op_to_eigen(h1.matrix());
        let h1_eigen = SparseCols::from_dense(&h1_eigen_dense);
        let h1_adj_eigen = SparseCols::from_dense(&h1_eigen_dense.adjoint());
        Ok(DysonEngine {
            h0: h0.clone(),
            h1,
            free,
            h1_eigen,
            h1_adj_eigen,
            cert,
            cert_adj,
            options,
        })
    }

    pub fn h0(&self) -> &LinOp {
        &self.h0
    }

    pub fn h1(&self) -> &LinOp {
        &self.h1
    }

    pub fn space(&self) -> &Arc<GradedSpace> {
        self.h0.space()
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn free(&self) -> &FreeDiag {
        &self.free
    }

    pub fn cert(&self) -> GradeCert {
        self.cert
    }

    pub fn cert_adjoint(&self) -> GradeCert {
        self.cert_adj
    }

    pub fn options(&self) -> EngineOptions {
        self.options
    }

    /// Full Hamiltonian `H0 + H1`.
    pub fn hamiltonian(&self) -> LinOp {
        self.h0.add(&self.h1).expect("same space by construction")
    }

    pub fn interaction_picture(&self, tau: f64) -> LinOp {
        let e = self.free.energies();
        let mut m = self.free.op_to_eigen(self.h1.matrix());
        for k in 0..m.ncols() {
            for j in 0..m.nrows() {
                m[(j, k)] *= C64::from_polar(1.0, tau * (e[j] - e[k]));
            }
        }
        LinOp::new(self.space().clone(), self.free.op_from_eigen(&m)).expect("finite entries")
    }

    fn cert_for(&self, dir: Direction) -> GradeCert {
        match dir {
            Direction::Forward => self.cert,
            Direction::Adjoint => self.cert_adj,
        }
    }

    /// Smallest order whose a-priori tail over `dt` drops below `tol`.
    pub fn predicted_order(&self, dir: Direction, dt: f64, l_xi: f64, norm_xi: f64, tol: f64) -> Result<(usize, f64)> {
        if !(tol > 0.0) {
            return Err(Error::Malformed(format!("tolerance {tol} must be > 0")));
        }
        let GradeCert { b, c } = self.cert_for(dir);
        let mut last = f64::INFINITY;
        for n in 0..=self.options.max_order {
            last = tail_bound(n, dt, c, b, l_xi, norm_xi);
            if last < tol {
                return Ok((n, last));
            }
        }
        Err(Error::Truncation {
            order: self.options.max_order,
            tail_bound: last,
            tol,
        })
    }

    /// Largest admissible panel width for a sweep over `dt` from a vector of support grade `l_xi`.
    pub fn panel_width(&self, dir: Direction, dt: f64, l_xi: f64, norm_xi: f64, tol: f64) -> Result<f64> {
        let (order, _) = self.predicted_order(dir, dt, l_xi, norm_xi, tol)?;
        let GradeCert { b, c } = self.cert_for(dir);
        let reach = (l_xi + order as f64 * b).min(self.space().max_grade());
        let mut width = f64::INFINITY;
        if c > 0.0 {
            width = width.min(self.options.width_factor / (c * (reach + 1.0).sqrt()));
        }
        let spread = self.free.spread();
        if spread > 0.0 {
            width = width.min(self.options.phase_factor / spread);
        }
        Ok(width)
    }

    /// Grid from `t_start` to `t_end` with automatically chosen panel count.
    pub fn auto_grid(&self, dir: Direction, t_start: f64, t_end: f64, xi: &CVec, tol: f64) -> Result<TimeGrid> {
        let l_xi = self.space().support_grade(xi)?;
        let width = self.panel_width(dir, (t_end - t_start).abs(), l_xi, vec_norm(xi), tol)?;
        TimeGrid::through(t_start, &[t_end], width, self.options.nodes_per_panel)
    }

    /// `U(t_end, t_start)ξ` on the given grid.
    pub fn evolve_vector(&self, xi: &CVec, grid: &TimeGrid, tol: f64) -> Result<SeriesResult> {
        let s = self.sweep(Direction::Forward, xi, grid, tol, true)?;
        Ok(self.finish(s, grid))
    }

    /// `U(t_start, t_end)*ξ`: the adjoint series integrated from `t_start` (the
    /// propagator's final time) back to `t_end` (its initial time).
    ///
    /// The grid therefore runs from `t` to `t'`; the result sits at its end.
    pub fn evolve_adjoint(&self, xi: &CVec, grid: &TimeGrid, tol: f64) -> Result<SeriesResult> {
        let s = self.sweep(Direction::Adjoint, xi, grid, tol, true)?;
        Ok(self.finish(s, grid))
    }

    fn finish(&self, s: Sweep, grid: &TimeGrid) -> SeriesResult {
        SeriesResult {
            partial_sum: s.sums.last().cloned().expect("grid has breakpoints"),
            terms: s.terms,
            achieved_order: s.achieved_order,
            tail_bound: s.tail_bound,
            quadrature_estimate: s.quadrature_estimate,
            grid: grid.clone(),
            cert: self.cert,
            support_grade: s.support_grade,
            per_order_sup_norms: s.sup_norms,
            per_order_bounds: s.bounds,
            bound_violations: s.bound_violations,
            node_bound_violations: s.node_bound_violations,
            support_violations: s.support_violations,
        }
    }

    /// `U(t, t')ξ` with an automatic grid.
    pub fn propagate(&self, xi: &CVec, t: f64, t_prime: f64, tol: f64) -> Result<CVec> {
        Ok(self.propagate_many(xi, t_prime, &[t], tol)?.remove(0))
    }

    /// `U(t, t')*ξ` with an automatic grid.
    pub fn propagate_adjoint(&self, xi: &CVec, t: f64, t_prime: f64, tol: f64) -> Result<CVec> {
        Ok(self.points(Direction::Adjoint, xi, t, &[t_prime], tol)?.remove(0))
    }

    /// `U(t_k, t')ξ` for every `t_k` in `targets`, in input order. Targets on
    /// the same side of `t'` share one sweep whose breakpoints include them all.
    pub fn propagate_many(&self, xi: &CVec, t_prime: f64, targets: &[f64], tol: f64) -> Result<Vec<CVec>> {
        self.points(Direction::Forward, xi, t_prime, targets, tol)
    }

    fn points(&self, dir: Direction, xi: &CVec, start: f64, targets: &[f64], tol: f64) -> Result<Vec<CVec>> {
        self.space().check_len(xi.len())?;
        let mut out: Vec<Option<CVec>> = vec![None; targets.len()];
        let l_xi = self.space().support_grade(xi)?;
        let norm = vec_norm(xi);
        for side in [1.0, -1.0] {
            let mut idx: Vec<usize> = (0..targets.len())
                .filter(|&k| (targets[k] - start) * side > 0.0)
                .collect();
            if idx.is_empty() {
                continue;
            }
            idx.sort_by(|&a, &b| {
                (targets[a] - start)
                    .abs()
                    .partial_cmp(&(targets[b] - start).abs())
                    .unwrap()
            });
            let mut stops: Vec<f64> = idx.iter().map(|&k| targets[k]).collect();
            stops.dedup();
            let far = (stops[stops.len() - 1] - start).abs();
            let width = self.panel_width(dir, far, l_xi, norm, tol)?;
            let grid = TimeGrid::through(start, &stops, width, self.options.nodes_per_panel)?;
            let sweep = self.sweep(dir, xi, &grid, tol, false)?;
            let breaks = grid.breaks();
            for &k in &idx {
                let p = breaks
                    .iter()
                    .position(|t| *t == targets[k])
                    .expect("target is a breakpoint");
                out[k] = Some(sweep.sums[p].clone());
            }
        }
        Ok(out.into_iter().map(|v| v.unwrap_or_else(|| xi.clone())).collect())
    }

    /// Computes order `prev.order + 1` from `prev` on `grid`, in the original basis.
    pub fn dyson_step(&self, prev: &DysonTerm, grid: &TimeGrid) -> Result<DysonTerm> {
        if prev.values.len() != grid.node_count() {
            return Err(Error::DimensionMismatch {
                expected: grid.node_count(),
                found: prev.values.len(),
            });
        }
        let rule = GaussRule::new(grid.nodes_per_panel());
        let nodes = grid.nodes_with(&rule);
        let dim = self.dim();
        let mut flat = Vec::with_capacity(nodes.len() * dim);
        for v in &prev.values {
            self.space().check_len(v.len())?;
            flat.extend(self.free.to_eigen(v).iter().cloned());
        }
        let mut phases = Vec::with_capacity(nodes.len() * dim);
        for &t in &nodes {
            phases.extend(self.free.energies().iter().map(|e| C64::from_polar(1.0, -t * e)));
        }
        let (next, _) = self.step_flat(Direction::Forward, &flat, grid, &rule, &phases);
        let values: Vec<CVec> = next
            .chunks(dim)
            .map(|c| self.free.from_eigen(&CVec::from_column_slice(c)))
            .collect();
        let mut term = DysonTerm {
            order: prev.order + 1,
            values,
            sup_norm: 0.0,
        };
        term.sup_norm = term.compute_sup_norm();
        Ok(term)
    }

    /// One recursion step on node-major flat storage in the eigenbasis.
    /// Returns the new term and its quadrature-error estimate.
    fn step_flat(
        &self,
        dir: Direction,
        prev: &[C64],
        grid: &TimeGrid,
        rule: &GaussRule,
        phases: &[C64],
    ) -> (Vec<C64>, f64) {
        let dim = self.dim();
        let n = rule.nodes.len();
        let op = match dir {
            Direction::Forward => &self.h1_eigen,
            Direction::Adjoint => &self.h1_adj_eigen,
        };
        let zero = C64::new(0.0, 0.0);
        let mut out = vec![zero; prev.len()];
        let mut acc = vec![zero; dim];
        let mut tmp = vec![zero; dim];
        let mut integrand = vec![zero; n * dim];
        let mut coeff = vec![zero; dim];
        let mut estimate = 0.0;
        let minus_i = C64::new(0.0, -1.0);
        for (p, w) in grid.breaks().windows(2).enumerate() {
            let half = 0.5 * (w[1] - w[0]);
            let base = grid.break_index(p);
            // Integrand −i H1(τ_j) prev(τ_j) at the Gauss nodes of this panel.
            for j in 0..n {
                let node = base + 1 + j;
                let ph = &phases[node * dim..(node + 1) * dim];
                let x = &prev[node * dim..(node + 1) * dim];
                for ((t, xv), phv) in tmp.iter_mut().zip(x).zip(ph) {
                    *t = xv * phv;
                }
                let g = &mut integrand[j * dim..(j + 1) * dim];
                op.mul_into(&tmp, g);
                for (gv, phv) in g.iter_mut().zip(ph) {
                    *gv = minus_i * *gv * phv.conj();
                }
            }
            // Interior nodes: interpolant integrated from the panel start.
            for k in 0..n {
                let node = base + 1 + k;
                let dst = &mut out[node * dim..(node + 1) * dim];
                dst.copy_from_slice(&acc);
                for j in 0..n {
                    let s = half * rule.integ[k][j];
                    for (d, g) in dst.iter_mut().zip(&integrand[j * dim..(j + 1) * dim]) {
                        *d += g * s;
                    }
                }
            }
            // Next breakpoint: full Gauss sum.
            coeff.iter_mut().for_each(|z| *z = zero);
            for j in 0..n {
                let s = half * rule.weights[j];
                let c = rule.tail_coeff[j];
                for ((a, cf), g) in acc
                    .iter_mut()
                    .zip(coeff.iter_mut())
                    .zip(&integrand[j * dim..(j + 1) * dim])
                {
                    *a += g * s;
                    *cf += g * c;
                }
            }
            estimate += half.abs() * coeff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let node = grid.break_index(p + 1);
            out[node * dim..(node + 1) * dim].copy_from_slice(&acc);
        }
        (out, estimate)
    }

    fn sweep(&self, dir: Direction, xi: &CVec, grid: &TimeGrid, tol: f64, keep: bool) -> Result<Sweep> {
        self.space().check_len(xi.len())?;
        if grid.nodes_per_panel() < 2 {
            return Err(Error::Malformed("nodes_per_panel must be >= 2".into()));
        }
        let dim = self.dim();
        let space = self.space();
        let l_xi = space.support_grade(xi)?;
        let norm_xi = vec_norm(xi);
        let t0 = grid.t_start();
        let dt = (grid.t_end() - t0).abs();
        let (order, tail) = self.predicted_order(dir, dt, l_xi, norm_xi, tol)?;
        let GradeCert { b, c } = self.cert_for(dir);

        let rule = GaussRule::new(grid.nodes_per_panel());
        let nodes = grid.nodes_with(&rule);
        let mut phases = Vec::with_capacity(nodes.len() * dim);
        for &t in &nodes {
            phases.extend(self.free.energies().iter().map(|e| C64::from_polar(1.0, -t * e)));
        }
        let xi_e = self.free.to_eigen(xi);
        let mut current: Vec<C64> = Vec::with_capacity(nodes.len() * dim);
        for _ in 0..nodes.len() {
            current.extend(xi_e.iter().cloned());
        }
        let break_nodes: Vec<usize> = (0..=grid.panels()).map(|p| grid.break_index(p)).collect();
        // Orders >= 1 accumulate here; order 0 is added back in the original frame.
        let mut sums: Vec<CVec> = break_nodes.iter().map(|_| CVec::zeros(dim)).collect();

        let mut terms_flat: Vec<Vec<C64>> = Vec::new();
        let mut sup_norms = vec![norm_xi];
        let mut bounds = vec![norm_xi];
        let mut quad = 0.0;
        let mut bound_violations = 0;
        let mut node_bound_violations = 0;
        let mut support_violations = 0;
        if keep {
            terms_flat.push(current.clone());
        }
        for n in 1..=order {
            let (next, est) = self.step_flat(dir, &current, grid, &rule, &phases);
            quad += est;
            let level = l_xi + n as f64 * b + GRADE_TOLERANCE;
            let mut sup = 0.0_f64;
            for (i, &t) in nodes.iter().enumerate() {
                let v = &next[i * dim..(i + 1) * dim];
                let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                sup = sup.max(nv);
                let bound = apriori_bound(n, (t - t0).abs(), c, b, l_xi, norm_xi);
                if nv > bound * (1.0 + BOUND_SLACK) + NODE_FLOOR * norm_xi {
                    node_bound_violations += 1;
                }
                let outside = v
                    .iter()
                    .zip(space.grades())
                    .filter(|(_, g)| **g > level)
                    .map(|(z, _)| z.norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                if outside > SUPPORT_SLACK * nv {
                    support_violations += 1;
                }
            }
            let full = apriori_bound(n, dt, c, b, l_xi, norm_xi);
            if sup > full * (1.0 + BOUND_SLACK) {
                bound_violations += 1;
            }
            sup_norms.push(sup);
            bounds.push(full);
            for (s, &node) in sums.iter_mut().zip(&break_nodes) {
                for (z, v) in s.iter_mut().zip(&next[node * dim..(node + 1) * dim]) {
                    *z += v;
                }
            }
            if keep {
                terms_flat.push(next.clone());
            }
            current = next;
        }
        let terms = terms_flat
            .into_iter()
            .enumerate()
            .map(|(k, flat)| {
                if k == 0 {
                    return DysonTerm {
                        order: 0,
                        values: vec![xi.clone(); nodes.len()],
                        sup_norm: norm_xi,
                    };
                }
                let values: Vec<CVec> = flat
                    .chunks(dim)
                    .map(|ch| self.free.from_eigen(&CVec::from_column_slice(ch)))
                    .collect();
                DysonTerm {
                    order: k,
                    values,
                    sup_norm: sup_norms[k],
                }
            })
            .collect();
        Ok(Sweep {
            sums: sums
                .iter()
                .map(|s| {
                    if order == 0 {
                        xi.clone()
                    } else {
                        xi + self.free.from_eigen(s)
                    }
                })
                .collect(),
            terms,
            achieved_order: order,
            tail_bound: tail,
            quadrature_estimate: quad,
            support_grade: l_xi,
            sup_norms,
            bounds,
            bound_violations,
            node_bound_violations,
            support_violations,
        })
    }
}

/// Free-function form of [`DysonEngine::evolve_vector`].
pub fn evolve_vector(h0: &LinOp, h1: &LinOp, xi: &CVec, grid: &TimeGrid, tol: f64) -> Result<SeriesResult> {
    DysonEngine::new(h0, h1)?.evolve_vector(xi, grid, tol)
}

/// Free-function form of [`DysonEngine::evolve_adjoint`].
pub fn evolve_adjoint(h0: &LinOp, h1: &LinOp, xi: &CVec, grid: &TimeGrid, tol: f64) -> Result<SeriesResult> {
    DysonEngine::new(h0, h1)?.evolve_adjoint(xi, grid, tol)
}
