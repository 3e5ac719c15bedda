//! Physical-picture dynamics built from the series: `W(t) = e^{-itH0} U(t, 0)`,
//! Schrödinger trajectories and Heisenberg observables `B(t) = W(−t) B W(t)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dyson::DysonEngine;
use crate::error::{Assumption, Error, Result};
use crate::graded::{grade_shift_bound, vector_to_pairs, LinOp};
use crate::linalg::{
    commutator, inner, random_unit_vector, spectral_norm, unit_vector, vec_norm, CMat, CVec, NanMax, C64, I,
};
use crate::report::Report;

/// Seed of the generator behind the weak-form test pairs.
pub const WEAK_PAIR_SEED: u64 = 0x5eed_0bad_cafe;
pub const WEAK_PAIRS: usize = 20;

/// `U(t_k, t')` for each target time, assembled column by column.
pub fn propagators_u(engine: &DysonEngine, t_prime: f64, times: &[f64], tol: f64) -> Result<Vec<CMat>> {
    let n = engine.dim();
    let columns: Vec<Vec<CVec>> = (0..n)
        .into_par_iter()
        .map(|j| engine.propagate_many(&unit_vector(n, j), t_prime, times, tol))
        .collect::<Result<_>>()?;
    Ok((0..times.len())
        .map(|k| CMat::from_fn(n, n, |r, j| columns[j][k][r]))
        .collect())
}

/// `W(t_k)` for each time.
pub fn propagators_w(engine: &DysonEngine, times: &[f64], tol: f64) -> Result<Vec<LinOp>> {
    let us = propagators_u(engine, 0.0, times, tol)?;
    us.into_iter()
        .zip(times)
        .map(|(u, &t)| LinOp::new(engine.space().clone(), engine.free().free_evolution(t) * u))
        .collect()
}

/// `W(t) = e^{-itH0} U(t, 0)`.
pub fn propagator_w(engine: &DysonEngine, t: f64, tol: f64) -> Result<LinOp> {
    Ok(propagators_w(engine, &[t], tol)?.remove(0))
}

/// `W(t_k)ξ` for each time.
pub fn apply_w(engine: &DysonEngine, xi: &CVec, times: &[f64], tol: f64) -> Result<Vec<CVec>> {
    let us = engine.propagate_many(xi, 0.0, times, tol)?;
    Ok(us
        .iter()
        .zip(times)
        .map(|(u, &t)| engine.free().apply_free(t, u))
        .collect())
}

/// `W(t)*ξ = U(t, 0)* e^{itH0} ξ`.
pub fn apply_w_adjoint(engine: &DysonEngine, xi: &CVec, t: f64, tol: f64) -> Result<CVec> {
    let v = engine.free().apply_free(-t, xi);
    engine.propagate_adjoint(&v, t, 0.0, tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(serialize_with = "serialize_states")]
    pub states: Vec<CVec>,
    /// Schrödinger defect at interior times; `None` at the two ends.
    pub residuals: Vec<Option<f64>>,
}

fn serialize_states<S: serde::Serializer>(states: &[CVec], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(states.len()))?;
    for v in states {
        seq.serialize_element(&vector_to_pairs(v))?;
    }
    seq.end()
}

impl Trajectory {
    /// Rows `(time, norm, residual)`; the residual is empty at the ends.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "norm", "residual"])?;
        for ((t, s), r) in self.times.iter().zip(&self.states).zip(&self.residuals) {
            w.write_record([
                format!("{t}"),
                format!("{:e}", vec_norm(s)),
                r.map(|x| format!("{x:e}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().flatten().cloned().fold(0.0, f64::nan_max)
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Malformed("times must be finite".into()));
    }
    if !times.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::Malformed("times must be strictly increasing".into()));
    }
    Ok(())
}

/// Central-difference derivative at interior index `k` of a sampled function.
fn central<T>(times: &[f64], values: &[T], k: usize, diff: impl Fn(&T, &T) -> T, scale: impl Fn(T, f64) -> T) -> T {
    let d = diff(&values[k + 1], &values[k - 1]);
    scale(d, 1.0 / (times[k + 1] - times[k - 1]))
}

/// States `W(t_k)ξ` with Schrödinger residuals `‖Δξ/Δt + iHξ(t_k)‖`.
pub fn schrodinger_trajectory(engine: &DysonEngine, xi: &CVec, times: &[f64], tol: f64) -> Result<Trajectory> {
    check_times(times)?;
    if !times.contains(&0.0) {
        return Err(Error::Malformed("trajectory times must contain 0".into()));
    }
    if vec_norm(xi) == 0.0 {
        return Err(Error::Malformed("initial vector must be nonzero".into()));
    }
    let states = apply_w(engine, xi, times, tol)?;
    let h = engine.hamiltonian();
    let n = times.len();
    let residuals = (0..n)
        .map(|k| {
            if k == 0 || k + 1 == n {
                return None;
            }
            let d = central(times, &states, k, |a, b| a - b, |v, s| v * C64::new(s, 0.0));
            let r = d + h.matrix() * &states[k] * I;
            Some(vec_norm(&r))
        })
        .collect();
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        residuals,
    })
}

#[derive(Debug, Clone)]
pub struct ObservableTrack {
    pub times: Vec<f64>,
    pub matrices: Vec<LinOp>,
    pub source: LinOp,
}

impl ObservableTrack {
    /// Rows `(time, norm, residual)` with spectral norms of `B(t)` and optional residuals
    /// aligned to interior times.
    pub fn write_csv<W: std::io::Write>(&self, out: W, residuals: Option<&[f64]>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "norm", "residual"])?;
        let n = self.times.len();
        for (k, (t, m)) in self.times.iter().zip(&self.matrices).enumerate() {
            let r = match residuals {
                Some(r) if k > 0 && k + 1 < n => format!("{:e}", r[k - 1]),
                _ => String::new(),
            };
            w.write_record([format!("{t}"), format!("{:e}", spectral_norm(m.matrix())), r])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Largest grade shift an observable may have: that of the interaction or its adjoint.
pub fn default_observable_shift_limit(engine: &DysonEngine) -> f64 {
    engine.cert().b.max(engine.cert_adjoint().b)
}

fn check_observable(engine: &DysonEngine, b: &LinOp, limit: Option<f64>) -> Result<()> {
    engine.h0().same_space(b)?;
    let limit = limit.unwrap_or_else(|| default_observable_shift_limit(engine));
    let b0 = grade_shift_bound(b).max(grade_shift_bound(&b.adjoint()));
    if b0 > limit {
        return Err(Error::assumption(
            Assumption::ObservableGraded,
            format!("observable shifts grades by {b0}, beyond the admissible {limit} in this truncation"),
        ));
    }
    Ok(())
}

/// `B(t_k) = W(−t_k) B W(t_k)`. `shift_limit` defaults to [`default_observable_shift_limit`].
pub fn heisenberg_track(
    engine: &DysonEngine,
    b: &LinOp,
    times: &[f64],
    tol: f64,
    shift_limit: Option<f64>,
) -> Result<ObservableTrack> {
    check_observable(engine, b, shift_limit)?;
    check_times(times)?;
    let mut all: Vec<f64> = times.to_vec();
    all.extend(times.iter().map(|t| -t));
    let ws = propagators_w(engine, &all, tol)?;
    let n = times.len();
    let matrices = (0..n)
        .map(|k| b.with_matrix(ws[n + k].matrix() * b.matrix() * ws[k].matrix()))
        .collect::<Result<_>>()?;
    Ok(ObservableTrack {
        times: times.to_vec(),
        matrices,
        source: b.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    Weak,
    Strong,
}

/// Heisenberg-equation residuals at interior times of a uniformly sampled track.
pub fn heisenberg_residuals(track: &ObservableTrack, h: &LinOp, mode: ResidualMode) -> Result<Vec<f64>> {
    let t = &track.times;
    if t.len() < 3 {
        return Err(Error::Malformed("residuals need at least 3 time points".into()));
    }
    let step = t[1] - t[0];
    if t.windows(2)
        .any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs().max(1e-300))
    {
        return Err(Error::Malformed("residuals need a uniform time grid".into()));
    }
    let ih = h.matrix() * I;
    let mats: Vec<&CMat> = track.matrices.iter().map(|m| m.matrix()).collect();
    let n = t.len();
    match mode {
        ResidualMode::Strong => Ok((1..n - 1)
            .map(|k| {
                let d = (mats[k + 1] - mats[k - 1]) / C64::new(t[k + 1] - t[k - 1], 0.0);
                spectral_norm(&(d - commutator(&ih, mats[k])))
            })
            .collect()),
        ResidualMode::Weak => {
            let dim = h.dim();
            let mut rng = ChaCha8Rng::seed_from_u64(WEAK_PAIR_SEED);
            let pairs: Vec<(CVec, CVec)> = (0..WEAK_PAIRS)
                .map(|_| (random_unit_vector(&mut rng, dim), random_unit_vector(&mut rng, dim)))
                .collect();
            let ih_adj = ih.adjoint();
            Ok((1..n - 1)
                .map(|k| {
                    pairs
                        .iter()
                        .map(|(eta, xi)| {
                            let form = |m: &CMat| inner(eta, &(m * xi));
                            let d = (form(mats[k + 1]) - form(mats[k - 1])) / (t[k + 1] - t[k - 1]);
                            let bxi = mats[k] * xi;
                            let rhs = inner(&(&ih_adj * eta), &bxi) - inner(&(mats[k].adjoint() * eta), &(&ih * xi));
                            (d - rhs).norm()
                        })
                        .fold(0.0, f64::nan_max)
                })
                .collect())
        }
    }
}

/// Spectral-norm gap between the split form
/// `W(−t)[iH1, B]W(t) + U(0,t) B0'(t) U(t,0)` with `B0'(t) = e^{itH0}[iH0, B]e^{−itH0}`
/// and the commutator form `[iH, B(t)]`.
pub fn split_form_residual(engine: &DysonEngine, b: &LinOp, t: f64, tol: f64) -> Result<f64> {
    engine.h0().same_space(b)?;
    let ws = propagators_w(engine, &[t, -t], tol)?;
    let (w_t, w_mt) = (ws[0].matrix(), ws[1].matrix());
    let u_t0 = propagators_u(engine, 0.0, &[t], tol)?.remove(0);
    let u_0t = propagators_u(engine, t, &[0.0], tol)?.remove(0);
    let ih0 = engine.h0().matrix() * I;
    let ih1 = engine.h1().matrix() * I;
    let free = engine.free();
    let b0_prime = free.free_evolution(-t) * commutator(&ih0, b.matrix()) * free.free_evolution(t);
    let split = w_mt * commutator(&ih1, b.matrix()) * w_t + u_0t * b0_prime * u_t0;
    let bt = w_mt * b.matrix() * w_t;
    let ih = &ih0 + &ih1;
    Ok(spectral_norm(&(split - commutator(&ih, &bt))))
}

/// `B(t)ξ = W(−t) B W(t) ξ` without assembling matrices.
pub fn observable_apply(engine: &DysonEngine, b: &LinOp, t: f64, xi: &CVec, tol: f64) -> Result<CVec> {
    let wt = apply_w(engine, xi, &[t], tol)?.remove(0);
    let v = b.apply(&wt)?;
    Ok(apply_w(engine, &v, &[-t], tol)?.remove(0))
}

/// Vector form of the strong residual at `t`: `‖(B(t+h) − B(t−h))ξ/(2h) − [iH, B(t)]ξ‖`.
pub fn heisenberg_vector_residual(engine: &DysonEngine, b: &LinOp, t: f64, h: f64, xi: &CVec, tol: f64) -> Result<f64> {
    let ham = engine.hamiltonian();
    let plus = observable_apply(engine, b, t + h, xi, tol)?;
    let minus = observable_apply(engine, b, t - h, xi, tol)?;
    let d = (plus - minus) / C64::new(2.0 * h, 0.0);
    let bt_xi = observable_apply(engine, b, t, xi, tol)?;
    let ihxi = ham.apply(xi)? * I;
    let rhs = ham.apply(&bt_xi)? * I - observable_apply(engine, b, t, &ihxi, tol)?;
    Ok(vec_norm(&(d - rhs)))
}

/// Expected ratio of central-difference residuals when the step halves.
pub const RESIDUAL_ORDER_RATIO: f64 = 4.0;
/// Admitted relative deviation from [`RESIDUAL_ORDER_RATIO`].
pub const RESIDUAL_ORDER_TOL: f64 = 0.2;

fn order_report(name: &str, t: f64, steps: [f64; 2], r: [f64; 2]) -> Report {
    let ratio = r[0] / r[1];
    let deviation = (ratio / RESIDUAL_ORDER_RATIO - 1.0).abs();
    Report::new(
        name,
        if deviation.is_finite() {
            deviation
        } else {
            f64::INFINITY
        },
        RESIDUAL_ORDER_TOL,
    )
    .with("t", t)
    .with("steps", steps.to_vec())
    .with("residuals", r.to_vec())
    .with("ratio", ratio)
}

fn check_steps(t: f64, steps: [f64; 2]) -> Result<()> {
    if !(steps[0] > steps[1] && steps[1] > 0.0 && steps[0] < t.abs()) {
        return Err(Error::Malformed(format!(
            "residual steps {steps:?} must be decreasing, positive and smaller than |t| = {}",
            t.abs()
        )));
    }
    Ok(())
}

/// Schrödinger residual at `t` for steps `h` and `h/2`. The report residual
/// is the relative deviation of their ratio from [`RESIDUAL_ORDER_RATIO`].
pub fn schrodinger_residual_order(
    engine: &DysonEngine,
    xi: &CVec,
    t: f64,
    steps: [f64; 2],
    tol: f64,
) -> Result<Report> {
    check_steps(t, steps)?;
    let mut r = [0.0; 2];
    for (slot, h) in r.iter_mut().zip(steps) {
        let mut times = vec![0.0, t - h, t, t + h];
        if t < 0.0 {
            times = vec![t - h, t, t + h, 0.0];
        }
        let traj = schrodinger_trajectory(engine, xi, &times, tol)?;
        *slot = traj.residuals[if t < 0.0 { 1 } else { 2 }].expect("interior time");
    }
    Ok(order_report("schrodinger_residual_order", t, steps, r))
}

/// Vector Heisenberg residual of `B` at `t` for two step sizes, judged like
/// [`schrodinger_residual_order`].
pub fn heisenberg_residual_order(
    engine: &DysonEngine,
    b: &LinOp,
    xi: &CVec,
    t: f64,
    steps: [f64; 2],
    tol: f64,
) -> Result<Report> {
    check_observable(engine, b, None)?;
    check_steps(t, steps)?;
    let mut r = [0.0; 2];
    for (slot, h) in r.iter_mut().zip(steps) {
        *slot = heisenberg_vector_residual(engine, b, t, h, xi, tol)?;
    }
    Ok(order_report("heisenberg_residual_order", t, steps, r))
}
