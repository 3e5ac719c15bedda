use std::sync::Arc;

use dysonprop::dyson::DysonEngine;
use dysonprop::evolution::{
    heisenberg_residuals, heisenberg_track, propagator_w, propagators_w, schrodinger_trajectory, split_form_residual,
    ResidualMode,
};
use dysonprop::linalg::{c, random_unit_vector, spectral_norm, unit_vector, vec_norm, CMat, C64};
use dysonprop::models::{random_model, Coupling, ModelSpec};
use dysonprop::oracle::{expm, oracle_propagator};
use dysonprop::{Assumption, Error, GradedSpace, LinOp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn engine(seed: u64, dim: usize, shift: u32, coupling: Coupling) -> DysonEngine {
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
    DysonEngine::new(&m.h0, &m.h1).unwrap()
}

fn full_evolution(e: &DysonEngine, t: f64) -> CMat {
    let h = e.hamiltonian();
    expm(&(h.matrix() * C64::new(0.0, -t))).unwrap()
}

#[test]
fn w_at_zero_is_identity() {
    let e = engine(1, 10, 1, Coupling::NonNormal);
    let w = propagator_w(&e, 0.0, 1e-10).unwrap();
    assert_eq!(w.matrix(), &CMat::identity(10, 10));
}

#[test]
fn w_without_interaction_is_free_evolution() {
    let e = engine(2, 8, 2, Coupling::NonNormal);
    let zero = LinOp::zeros(e.space().clone());
    let free = DysonEngine::new(e.h0(), &zero).unwrap();
    let w = propagator_w(&free, 0.9, 1e-10).unwrap();
    let oracle = expm(&(e.h0().matrix() * C64::new(0.0, -0.9))).unwrap();
    assert!(spectral_norm(&(w.matrix() - oracle)) < 1e-13);
}

#[test]
fn w_matches_full_exponential() {
    let e = engine(3, 16, 2, Coupling::NonNormal);
    let w = propagator_w(&e, 0.7, 1e-10).unwrap();
    assert!(spectral_norm(&(w.matrix() - full_evolution(&e, 0.7))) < 1e-8);
}

#[test]
fn group_property_in_symmetric_case() {
    let e = engine(4, 12, 1, Coupling::Hermitian);
    let ws = propagators_w(&e, &[0.3, 0.45, 0.75], 1e-11).unwrap();
    let prod = ws[0].matrix() * ws[1].matrix();
    assert!(spectral_norm(&(prod - ws[2].matrix())) < 1e-8);
}

#[test]
fn inverse_property_in_general_case() {
    let e = engine(5, 12, 3, Coupling::NonNormal);
    let ws = propagators_w(&e, &[0.6, -0.6], 1e-11).unwrap();
    let prod = ws[0].matrix() * ws[1].matrix();
    assert!(spectral_norm(&(prod - CMat::identity(12, 12))) < 1e-8);
}

#[test]
fn free_single_level_trajectory() {
    let s = Arc::new(GradedSpace::flat(1).unwrap());
    let h0 = LinOp::from_diagonal(s.clone(), &[c(1.0, 0.0)]).unwrap();
    let h1 = LinOp::zeros(s);
    let e = DysonEngine::new(&h0, &h1).unwrap();
    let times = [0.0, 0.5, 1.0, 2.0];
    let traj = schrodinger_trajectory(&e, &unit_vector(1, 0), &times, 1e-12).unwrap();
    assert_eq!(traj.states[0], unit_vector(1, 0));
    for (t, s) in times.iter().zip(&traj.states) {
        assert!((s[0] - C64::from_polar(1.0, -t)).norm() < 1e-15);
    }
    assert_eq!(traj.residuals.len(), times.len());
}

#[test]
fn trajectory_residual_is_second_order() {
    let e = engine(6, 14, 2, Coupling::NonNormal);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xi = random_unit_vector(&mut rng, 14);
    let at = |h: f64| {
        let k = (0.01 / h).round() as usize;
        let times: Vec<f64> = (0..=k + 2).map(|j| j as f64 * h).collect();
        let traj = schrodinger_trajectory(&e, &xi, &times, 1e-14).unwrap();
        traj.residuals[k].unwrap()
    };
    let ratio = at(1e-3) / at(5e-4);
    assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
}

#[test]
fn hermitian_trajectory_conserves_norm() {
    let e = engine(7, 20, 3, Coupling::Hermitian);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xi = random_unit_vector(&mut rng, 20);
    let times = [-1.0, -0.5, 0.0, 0.25, 1.0];
    let traj = schrodinger_trajectory(&e, &xi, &times, 1e-12).unwrap();
    for s in &traj.states {
        assert!((vec_norm(s) - 1.0).abs() < 1e-10);
    }
}

#[test]
fn trajectory_rejects_bad_times() {
    let e = engine(8, 6, 1, Coupling::NonNormal);
    let xi = unit_vector(6, 0);
    assert!(schrodinger_trajectory(&e, &xi, &[0.0, 0.2, 0.1], 1e-10).is_err());
    assert!(schrodinger_trajectory(&e, &xi, &[0.1, 0.2], 1e-10).is_err());
    let zero = dysonprop::linalg::CVec::zeros(6);
    assert!(schrodinger_trajectory(&e, &zero, &[0.0, 0.2], 1e-10).is_err());
}

#[test]
fn identity_observable_is_stationary() {
    let e = engine(9, 10, 2, Coupling::NonNormal);
    let id = LinOp::identity(e.space().clone());
    let times = [0.0, 0.1, 0.2, 0.3];
    let track = heisenberg_track(&e, &id, &times, 1e-12, None).unwrap();
    for m in &track.matrices {
        assert!(spectral_norm(&(m.matrix() - CMat::identity(10, 10))) < 1e-9);
    }
    let h = e.hamiltonian();
    for mode in [ResidualMode::Strong, ResidualMode::Weak] {
        let r = heisenberg_residuals(&track, &h, mode).unwrap();
        assert!(r.iter().all(|x| *x < 1e-6), "{mode:?} {r:?}");
    }
}

#[test]
fn identity_observable_residual_floor() {
    // W(−t)W(t) = I to high accuracy, so the residual reduces to round-off.
    let e = engine(10, 8, 1, Coupling::Hermitian);
    let id = LinOp::identity(e.space().clone());
    let track = heisenberg_track(&e, &id, &[0.0, 1e-3, 2e-3], 1e-14, None).unwrap();
    let r = heisenberg_residuals(&track, &e.hamiltonian(), ResidualMode::Strong).unwrap();
    assert!(r[0] < 1e-9, "{r:?}");
}

#[test]
fn free_number_operator_is_stationary() {
    let e = engine(11, 12, 2, Coupling::NonNormal);
    let zero = LinOp::zeros(e.space().clone());
    let free = DysonEngine::new(e.h0(), &zero).unwrap();
    let grades: Vec<C64> = e.space().grades().iter().map(|g| c(*g, 0.0)).collect();
    let number = LinOp::from_diagonal(e.space().clone(), &grades).unwrap();
    let track = heisenberg_track(&free, &number, &[0.0, 0.5, 1.0], 1e-12, Some(0.0)).unwrap();
    for mode in [ResidualMode::Strong, ResidualMode::Weak] {
        let r = heisenberg_residuals(&track, &free.hamiltonian(), mode).unwrap();
        assert!(r[0] <= 1e-10, "{mode:?} {r:?}");
    }
}

#[test]
fn track_at_zero_is_source_and_matches_oracle() {
    let e = engine(12, 16, 1, Coupling::NonNormal);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 16;
    // Observable with grade shift 1 in both directions.
    let g = e.space().grades().to_vec();
    let m = CMat::from_fn(n, n, |j, k| {
        if (g[j] - g[k]).abs() <= 1.0 {
            let v = random_unit_vector(&mut rng, 1);
            v[0]
        } else {
            c(0.0, 0.0)
        }
    });
    let b = LinOp::new(e.space().clone(), m).unwrap();
    let times = [0.0, 0.4];
    let track = heisenberg_track(&e, &b, &times, 1e-11, None).unwrap();
    assert!(spectral_norm(&(track.matrices[0].matrix() - b.matrix())) < 1e-12);
    let w = oracle_propagator(e.h0(), e.h1(), 0.4, 0.0).unwrap();
    let w_back = oracle_propagator(e.h0(), e.h1(), -0.4, 0.0).unwrap();
    let free = e.free();
    let oracle = free.free_evolution(-0.4) * w_back.matrix() * b.matrix() * free.free_evolution(0.4) * w.matrix();
    assert!(spectral_norm(&(track.matrices[1].matrix() - oracle)) < 1e-8);
}

#[test]
fn two_level_sigma_x_matches_oracle() {
    let s = Arc::new(GradedSpace::new(vec![0.0, 1.0]).unwrap());
    let h0 = LinOp::from_diagonal(s.clone(), &[c(0.0, 0.0), c(1.3, 0.0)]).unwrap();
    let mut m = CMat::zeros(2, 2);
    m[(0, 1)] = c(0.4, 0.1);
    m[(1, 0)] = c(-0.2, 0.3);
    let h1 = LinOp::new(s.clone(), m).unwrap();
    let mut sx = CMat::zeros(2, 2);
    sx[(0, 1)] = c(1.0, 0.0);
    sx[(1, 0)] = c(1.0, 0.0);
    let b = LinOp::new(s, sx).unwrap();
    let e = DysonEngine::new(&h0, &h1).unwrap();
    let track = heisenberg_track(&e, &b, &[0.0, 0.8], 1e-12, None).unwrap();
    let full = e.hamiltonian();
    let fwd = expm(&(full.matrix() * C64::new(0.0, -0.8))).unwrap();
    let back = expm(&(full.matrix() * C64::new(0.0, 0.8))).unwrap();
    let oracle = back * b.matrix() * fwd;
    assert!(spectral_norm(&(track.matrices[1].matrix() - oracle)) < 1e-8);
}

#[test]
fn strong_residual_is_second_order() {
    let e = engine(13, 10, 2, Coupling::NonNormal);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = LinOp::new(
        e.space().clone(),
        CMat::from_fn(10, 10, |j, k| {
            if j == k {
                random_unit_vector(&mut rng, 1)[0]
            } else {
                c(0.0, 0.0)
            }
        }),
    )
    .unwrap();
    let h = e.hamiltonian();
    let at = |step: f64, mode| {
        let track = heisenberg_track(&e, &b, &[0.3 - step, 0.3, 0.3 + step], 1e-14, None).unwrap();
        heisenberg_residuals(&track, &h, mode).unwrap()[0]
    };
    for mode in [ResidualMode::Strong, ResidualMode::Weak] {
        let ratio = at(1e-3, mode) / at(5e-4, mode);
        assert!((ratio - 4.0).abs() < 0.8, "{mode:?} ratio {ratio}");
    }
}

#[test]
fn split_form_agrees_with_commutator_form() {
    let e = engine(14, 12, 1, Coupling::NonNormal);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = e.space().grades().to_vec();
    let b = LinOp::new(
        e.space().clone(),
        CMat::from_fn(12, 12, |j, k| {
            if (g[j] - g[k]).abs() <= 1.0 {
                random_unit_vector(&mut rng, 1)[0]
            } else {
                c(0.0, 0.0)
            }
        }),
    )
    .unwrap();
    let r = split_form_residual(&e, &b, 0.5, 1e-12).unwrap();
    assert!(r < 1e-8, "split residual {r}");
}

#[test]
fn residuals_need_three_uniform_points() {
    let e = engine(15, 6, 1, Coupling::NonNormal);
    let id = LinOp::identity(e.space().clone());
    let h = e.hamiltonian();
    let two = heisenberg_track(&e, &id, &[0.0, 0.1], 1e-10, None).unwrap();
    assert!(heisenberg_residuals(&two, &h, ResidualMode::Strong).is_err());
    let uneven = heisenberg_track(&e, &id, &[0.0, 0.1, 0.3], 1e-10, None).unwrap();
    assert!(heisenberg_residuals(&uneven, &h, ResidualMode::Weak).is_err());
}

#[test]
fn wide_observable_is_rejected() {
    let e = engine(16, 10, 1, Coupling::NonNormal);
    let n = e.dim();
    let full = LinOp::new(e.space().clone(), CMat::from_element(n, n, c(1.0, 0.0))).unwrap();
    match heisenberg_track(&e, &full, &[0.0, 0.1], 1e-10, None) {
        Err(Error::Assumption { assumption, .. }) => assert_eq!(assumption, Assumption::ObservableGraded),
        other => panic!("expected assumption violation, got {:?}", other.map(|t| t.times)),
    }
}
