use std::f64::consts::PI;
use std::sync::Arc;

use dysonprop::dyson::{Direction, DysonEngine, DysonTerm, TimeGrid};
use dysonprop::linalg::{c, inner, random_unit_vector, spectral_norm, unit_vector, vec_norm, CMat, CVec, C64};
use dysonprop::models::{random_model, Coupling, ModelSpec};
use dysonprop::oracle::{expm, ode_oracle, oracle_propagator};
use dysonprop::{interaction_picture, Error, GradedSpace, LinOp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(seed: u64, dim: usize, shift: u32, coupling: Coupling) -> (LinOp, LinOp) {
    let m = random_model(
        seed,
        ModelSpec {
            dim,
            shift,
            coupling,
            rel_bound: 0.5,
            free_scale: 1.0,
        },
    )
    .unwrap();
    (m.h0, m.h1)
}

/// H0 = diag(0, ω), H1 = σx on a two-level space with grades [0, 1].
fn two_level(omega: f64) -> (LinOp, LinOp) {
    let s = Arc::new(GradedSpace::new(vec![0.0, 1.0]).unwrap());
    let h0 = LinOp::from_diagonal(s.clone(), &[c(0.0, 0.0), c(omega, 0.0)]).unwrap();
    let mut m = CMat::zeros(2, 2);
    m[(0, 1)] = c(1.0, 0.0);
    m[(1, 0)] = c(1.0, 0.0);
    (h0, LinOp::new(s, m).unwrap())
}

#[test]
fn interaction_picture_at_zero_is_h1() {
    let (h0, h1) = model(1, 8, 1, Coupling::NonNormal);
    let p = interaction_picture(&h0, &h1, 0.0).unwrap();
    assert!(spectral_norm(&(p.matrix() - h1.matrix())) < 1e-13);
}

#[test]
fn interaction_picture_phase_formula() {
    let s = Arc::new(GradedSpace::flat(2).unwrap());
    let h0 = LinOp::from_diagonal(s.clone(), &[c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
    let mut m = CMat::zeros(2, 2);
    m[(0, 1)] = c(1.0, 0.0);
    let h1 = LinOp::new(s, m).unwrap();
    let p = interaction_picture(&h0, &h1, PI).unwrap();
    assert!((p.matrix()[(0, 1)] - c(-1.0, 0.0)).norm() < 1e-15);
}

#[test]
fn interaction_picture_matches_matrix_exponential() {
    let (h0, h1) = model(2, 8, 2, Coupling::NonNormal);
    let tau = 0.83;
    let i = C64::new(0.0, 1.0);
    let oracle = expm(&(h0.matrix() * (i * tau))).unwrap() * h1.matrix() * expm(&(h0.matrix() * (-i * tau))).unwrap();
    let p = interaction_picture(&h0, &h1, tau).unwrap();
    assert!(spectral_norm(&(p.matrix() - oracle)) < 1e-12);
}

#[test]
fn zero_interaction_gives_identity() {
    let (h0, _) = model(3, 6, 1, Coupling::NonNormal);
    let h1 = LinOp::zeros(h0.space().clone());
    let engine = DysonEngine::new(&h0, &h1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xi = random_unit_vector(&mut rng, 6);
    let grid = TimeGrid::uniform(0.0, 1.3, 3, 8).unwrap();
    let r = engine.evolve_vector(&xi, &grid, 1e-10).unwrap();
    assert_eq!(r.achieved_order, 0);
    assert_eq!(r.partial_sum, xi);
    let step = engine.dyson_step(&r.terms[0], &grid).unwrap();
    assert_eq!(step.sup_norm, 0.0);
}

#[test]
fn equal_times_give_identity() {
    let (h0, h1) = model(4, 6, 1, Coupling::NonNormal);
    let engine = DysonEngine::new(&h0, &h1).unwrap();
    let xi = unit_vector(6, 2);
    let grid = TimeGrid::uniform(0.4, 0.4, 1, 8).unwrap();
    let r = engine.evolve_vector(&xi, &grid, 1e-10).unwrap();
    assert_eq!(r.partial_sum, xi);
    assert_eq!(engine.propagate(&xi, 0.4, 0.4, 1e-10).unwrap(), xi);
}

#[test]
fn constant_integrand_step() {
    // H1 commutes with H0 and has ξ as eigenvector with eigenvalue λ.
    let s = Arc::new(GradedSpace::flat(2).unwrap());
    let h0 = LinOp::from_diagonal(s.clone(), &[c(0.3, 0.0), c(-0.2, 0.0)]).unwrap();
    let lambda = c(0.7, -0.1);
    let h1 = LinOp::from_diagonal(s, &[lambda, c(0.1, 0.0)]).unwrap();
    let engine = DysonEngine::new(&h0, &h1).unwrap();
    let xi = unit_vector(2, 0);
    let grid = TimeGrid::uniform(0.5, -1.0, 3, 4).unwrap();
    let zeroth = DysonTerm {
        order: 0,
        values: vec![xi.clone(); grid.node_count()],
        sup_norm: 1.0,
    };
    let first = engine.dyson_step(&zeroth, &grid).unwrap();
    for (tau, v) in grid.nodes().iter().zip(&first.values) {
        let expected = xi.clone() * (C64::new(0.0, -1.0) * lambda * (tau - 0.5));
        assert!((v - expected).norm() < 1e-14);
    }
}

/// Closed forms on the two-level model with ξ = e_1:
/// U_1 component 0 = (e^{-iωt} − e^{-iωt'})/ω,
/// U_2 component 1 = [(t−t') − (e^{iω(t−t')} − 1)/(iω)]/(iω).
fn two_level_terms(omega: f64, t: f64, tp: f64) -> (C64, C64) {
    let i = C64::new(0.0, 1.0);
    let u1 = ((-i * omega * t).exp() - (-i * omega * tp).exp()) / omega;
    // U_2 component 1 = (−i)² ∫_{t'}^t dτ e^{iωτ} ∫_{t'}^τ e^{−iωσ} dσ
    //                = −∫_{t'}^t [1 − e^{iω(τ−t')}]/(−iω) dτ
    let d = t - tp;
    let inner = (d - ((i * omega * d).exp() - 1.0) / (i * omega)) / (i * omega);
    (u1, inner)
}

#[test]
fn two_level_matches_closed_form() {
    let omega = 3.0;
    let (h0, h1) = two_level(omega);
    let engine = DysonEngine::new(&h0, &h1).unwrap();
    let xi = unit_vector(2, 1);
    for (t, tp) in [(1.0, 0.0), (-0.7, 0.4)] {
        let grid = TimeGrid::uniform(tp, t, 10, 8).unwrap();
        let r = engine.evolve_vector(&xi, &grid, 1e-12).unwrap();
        let (u1, u2) = two_level_terms(omega, t, tp);
        let end = r.terms[1].values.len() - 1;
        assert!((r.terms[1].values[end][0] - u1).norm() < 1e-13);
        assert!((r.terms[2].values[end][1] - u2).norm() < 1e-13);
    }
}

#[test]
fn panel_doubling_shows_quadrature_order() {
    let omega = 6.0;
    let (h0, h1) = two_level(omega);
    let engine = DysonEngine::new(&h0, &h1).unwrap();
    let xi = unit_vector(2, 1);
    let n = 2;
    let (u1, u2) = two_level_terms(omega, 1.0, 0.0);
    let defect = |panels: usize| {
        let grid = TimeGrid::uniform(0.0, 1.0, panels, n).unwrap();
        let r = engine.evolve_vector(&xi, &grid, 1e-12).unwrap();
        let end = grid.node_count() - 1;
        (
            (r.terms[1].values[end][0] - u1).norm(),
            (r.terms[2].values[end][1] - u2).norm(),
        )
    };
    let (a1, a2) = defect(16);
    let (b1, b2) = defect(32);
    // Endpoint Gauss sums converge like h^{2n}; interpolated interior values like h^{n+1}.
    let r1 = a1 / b1;
    let r2 = a2 / b2;
    assert!(r1 > 0.8 * 2f64.powi(2 * n as i32), "order-1 ratio {r1}");
    assert!(r2 > 0.8 * 2f64.powi(n as i32 + 1), "order-2 ratio {r2}");
}

#[test]
fn evolve_matches_oracles_on_random_model() {
    let (h0, h1) = model(11, 16, 2, Coupling::NonNormal);
    let engine = DysonEngine::new(&h0, &h1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xi = random_unit_vector(&mut rng, 16);
    let t = 1.0;
    let grid = engine.auto_grid(Direction::Forward, 0.0, t, &xi, 1e-10).unwrap();
    let r = engine.evolve_vector(&xi, &grid, 1e-10).unwrap();
    let exact = oracle_propagator(&h0, &h1, t, 0.0).unwrap().apply(&xi).unwrap();
    assert!(vec_norm(&(r.partial_sum.clone() - &exact)) < 1e-8);
    let ode = ode_oracle(&h0, &h1, &xi, t, 0.0, 1e-12).unwrap();
    assert!(vec_norm(&(ode - &exact)) < 1e-9);
    assert_eq!(r.bound_violations, 0);
    assert_eq!(r.node_bound_violations, 0);
    assert_eq!(r.support_violations, 0);
    assert!(r.tail_bound < 1e-10);
    let sum: CVec = r
        .terms
        .iter()
        .fold(CVec::zeros(16), |acc, term| acc + term.values.last().unwrap());
    assert!(vec_norm(&(sum - &r.partial_sum)) < 1e-14);
}

#[test]
fn adjoint_series_duality() {
    let (h0, h1) = model(12, 8, 1, Coupling::NonNormal);
    let engine = DysonEngine::new(&h0, &h1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (t, tp) = (0.6, -0.3);
    for _ in 0..20 {
        let eta = random_unit_vector(&mut rng, 8);
        let xi = random_unit_vector(&mut rng, 8);
        let u_eta = engine.propagate(&eta, t, tp, 1e-12).unwrap();
        let ustar_xi = engine.propagate_adjoint(&xi, t, tp, 1e-12).unwrap();
        assert!((inner(&u_eta, &xi) - inner(&eta, &ustar_xi)).norm() < 1e-10);
    }
}

#[test]
fn hermitian_adjoint_is_reverse_evolution() {
    let (h0, h1) = model(13, 10, 2, Coupling::Hermitian);
    let engine = DysonEngine::new(&h0, &h1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xi = random_unit_vector(&mut rng, 10);
    let a = engine.propagate_adjoint(&xi, 0.8, 0.1, 1e-11).unwrap();
    let b = engine.propagate(&xi, 0.1, 0.8, 1e-11).unwrap();
    assert!(vec_norm(&(a - b)) < 1e-8);
}

#[test]
fn derivative_in_t_matches_interaction() {
    let (h0, h1) = model(14, 12, 2, Coupling::NonNormal);
    let engine = DysonEngine::new(&h0, &h1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xi = random_unit_vector(&mut rng, 12);
    let (t, tp) = (0.5, 0.0);
    let residual = |h: f64| {
        let v = engine.propagate_many(&xi, tp, &[t - h, t, t + h], 1e-14).unwrap();
        let fd = (&v[2] - &v[0]) / C64::new(2.0 * h, 0.0);
        let rhs = engine.interaction_picture(t).apply(&v[1]).unwrap() * C64::new(0.0, -1.0);
        vec_norm(&(fd - rhs))
    };
    let ratio = residual(1e-3) / residual(5e-4);
    assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
}

#[test]
fn derivative_in_t_prime_matches_interaction() {
    let (h0, h1) = model(15, 12, 1, Coupling::NonNormal);
    let engine = DysonEngine::new(&h0, &h1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xi = random_unit_vector(&mut rng, 12);
    let (t, tp) = (0.4, -0.2);
    let residual = |h: f64| {
        let plus = engine.propagate(&xi, t, tp + h, 1e-14).unwrap();
        let minus = engine.propagate(&xi, t, tp - h, 1e-14).unwrap();
        let fd = (plus - minus) / C64::new(2.0 * h, 0.0);
        let h1xi = engine.interaction_picture(tp).apply(&xi).unwrap();
        let rhs = engine.propagate(&h1xi, t, tp, 1e-14).unwrap() * C64::new(0.0, 1.0);
        vec_norm(&(fd - rhs))
    };
    let ratio = residual(1e-3) / residual(5e-4);
    assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
}

#[test]
fn unreachable_tolerance_is_a_truncation_error() {
    let (h0, h1) = model(16, 6, 3, Coupling::NonNormal);
    let h1 = h1.scale(c(40.0, 0.0));
    let engine = DysonEngine::new(&h0, &h1).unwrap();
    let xi = unit_vector(6, 0);
    let grid = TimeGrid::uniform(0.0, 5.0, 50, 8).unwrap();
    match engine.evolve_vector(&xi, &grid, 1e-10) {
        Err(Error::Truncation { order, tail_bound, .. }) => {
            assert_eq!(order, 64);
            assert!(tail_bound > 1e-10);
        }
        other => panic!("expected truncation error, got {other:?}"),
    }
}
