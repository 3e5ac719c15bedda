use std::sync::Arc;

use dysonprop::dyson::{apriori_bound, Direction, DysonEngine, TimeGrid};
use dysonprop::linalg::{c, random_unit_vector, spectral_norm, unit_vector, vec_norm, CMat, CVec, C64};
use dysonprop::models::{fleet, random_model, Coupling, ModelSpec};
use dysonprop::oracle::{ode_oracle, oracle_propagator};
use dysonprop::qed::{build_model, random_low_sector_vector, QedConfig};
use dysonprop::suite::*;
use dysonprop::{GradedSpace, LinOp};
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

#[test]
fn identity_suite_without_interaction() {
    let (h0, h1) = model(1, 12, 2, Coupling::Hermitian);
    let zero = LinOp::zeros(h1.space().clone());
    let e = DysonEngine::new(&h0, &zero).unwrap();
    let reports = identity_suite(&e, &IdentityParams::default()).unwrap();
    assert_eq!(reports.len(), 5);
    for r in &reports {
        assert!(r.residual <= 1e-14, "{}", r.summary_line());
    }
}

#[test]
fn identity_suite_hermitian_model() {
    let (h0, h1) = model(2, 16, 1, Coupling::Hermitian);
    let e = DysonEngine::new(&h0, &h1).unwrap();
    let reports = identity_suite(&e, &IdentityParams::default()).unwrap();
    let unitarity = reports
        .iter()
        .find(|r| r.check_name == "unitarity")
        .expect("Hermitian run");
    assert!(unitarity.residual <= 1e-8);
    for r in &reports {
        assert!(r.passed, "{}", r.summary_line());
    }
}

#[test]
fn identity_suite_non_normal_model() {
    let (h0, h1) = model(3, 16, 2, Coupling::NonNormal);
    let e = DysonEngine::new(&h0, &h1).unwrap();
    let reports = identity_suite(&e, &IdentityParams::default()).unwrap();
    assert!(reports.iter().all(|r| r.check_name != "unitarity"));
    let cocycle = reports.iter().find(|r| r.check_name == "cocycle").unwrap();
    assert!(cocycle.residual <= 1e-8);
    for r in &reports {
        assert!(r.passed, "{}", r.summary_line());
    }
}

#[test]
fn identity_suite_is_reproducible() {
    let (h0, h1) = model(4, 10, 3, Coupling::NonNormal);
    let e = DysonEngine::new(&h0, &h1).unwrap();
    let a = identity_suite(&e, &IdentityParams::default()).unwrap();
    let b = identity_suite(&e, &IdentityParams::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn oracle_propagator_trivial_cases() {
    let (h0, h1) = model(5, 8, 1, Coupling::NonNormal);
    let id = CMat::identity(8, 8);
    assert!(spectral_norm(&(oracle_propagator(&h0, &h1, 0.4, 0.4).unwrap().matrix() - &id)) < 1e-14);
    let zero = LinOp::zeros(h1.space().clone());
    assert!(spectral_norm(&(oracle_propagator(&h0, &zero, 0.9, -0.3).unwrap().matrix() - &id)) < 1e-13);
}

#[test]
fn oracles_agree_on_small_model() {
    let (h0, h1) = model(6, 8, 2, Coupling::NonNormal);
    let u = oracle_propagator(&h0, &h1, 0.8, -0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let xi = random_unit_vector(&mut rng, 8);
        let ode = ode_oracle(&h0, &h1, &xi, 0.8, -0.2, 1e-12).unwrap();
        assert!(vec_norm(&(u.matrix() * &xi - ode)) <= 1e-9);
    }
}

#[test]
fn ode_oracle_two_level_closed_form() {
    // H0 = diag(0, ω), H1 = |1⟩⟨0|: U(t,0)e_0 = e_0 − i∫ e^{iωτ} dτ e_1.
    let s = Arc::new(GradedSpace::new(vec![0.0, 1.0]).unwrap());
    let omega = 1.7;
    let h0 = LinOp::from_diagonal(s.clone(), &[c(0.0, 0.0), c(omega, 0.0)]).unwrap();
    let mut m = CMat::zeros(2, 2);
    m[(1, 0)] = c(1.0, 0.0);
    let h1 = LinOp::new(s, m).unwrap();
    let t = 0.9;
    let got = ode_oracle(&h0, &h1, &unit_vector(2, 0), t, 0.0, 1e-12).unwrap();
    let expected = -(C64::from_polar(1.0, omega * t) - 1.0) / omega;
    assert!((got[0] - 1.0).norm() < 1e-12);
    assert!((got[1] - expected).norm() < 1e-10);
    let zero = LinOp::zeros(h0.space().clone());
    let xi = CVec::from_vec(vec![c(0.3, 0.1), c(-0.2, 0.5)]);
    assert_eq!(ode_oracle(&h0, &zero, &xi, 0.7, 0.1, 1e-10).unwrap(), xi);
}

#[test]
fn engine_agrees_with_ode_oracle_on_fleet() {
    for m in fleet(9, 6, None).unwrap() {
        let e = DysonEngine::new(&m.h0, &m.h1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
        let xi = random_unit_vector(&mut rng, m.spec.dim);
        let got = e.propagate(&xi, 0.6, 0.0, 1e-10).unwrap();
        let ode = ode_oracle(&m.h0, &m.h1, &xi, 0.6, 0.0, 1e-12).unwrap();
        assert!(vec_norm(&(got - ode)) <= 1e-8);
    }
}

#[test]
fn oracle_reports_on_fleet_model() {
    let m = &fleet(10, 1, Some(Coupling::NonNormal)).unwrap()[0];
    let e = DysonEngine::new(&m.h0, &m.h1).unwrap();
    for r in oracle_equivalence(&e, &[0.25, 0.5, 1.0], 1e-10, 1e-7).unwrap() {
        assert!(r.passed, "{}", r.summary_line());
        assert_eq!(r.context["oracle"], "derived oracle");
    }
    assert!(oracle_cross_check(&e, 1.0, 3, 2, 1e-8).unwrap().passed);
    let audit = bound_audit(&e, 1.0, 1e-10, 2, 3).unwrap();
    assert_eq!(audit.residual, 0.0, "{:?}", audit.context);
}

#[test]
fn weighted_tail_at_alpha_zero_is_plain_tail() {
    let (dt, c, b, l, n) = (0.8, 0.6, 2.0, 1.0, 1.5);
    let direct: f64 = (4..200).map(|k| apriori_bound(k, dt, c, b, l, n)).sum();
    let tail = weighted_tail(3, dt, c, b, l, n, 0.0);
    assert!((tail - direct).abs() <= 1e-15 * direct);
    let weighted: f64 = (4..200)
        .map(|k| apriori_bound(k, dt, c, b, l, n) * (l + k as f64 * b + 1.0))
        .sum();
    assert!((weighted_tail(3, dt, c, b, l, n, 2.0) - weighted).abs() <= 1e-14 * weighted);
}

#[test]
fn convergence_without_interaction_is_zero() {
    let (h0, h1) = model(11, 10, 1, Coupling::NonNormal);
    let zero = LinOp::zeros(h1.space().clone());
    let e = DysonEngine::new(&h0, &zero).unwrap();
    let xi = unit_vector(10, 0);
    let grid = TimeGrid::uniform(0.0, 1.0, 4, 8).unwrap();
    let table = appendix_convergence(&e, &xi, &grid, &[0.0, 1.0], 4).unwrap();
    for col in &table.observed {
        assert!(col.iter().all(|x| *x == 0.0));
    }
    assert_eq!(table.limit_order, 4);
}

#[test]
fn convergence_rejects_bad_arguments() {
    let (h0, h1) = model(12, 6, 1, Coupling::NonNormal);
    let e = DysonEngine::new(&h0, &h1).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 2, 8).unwrap();
    let xi = unit_vector(6, 0);
    assert!(appendix_convergence(&e, &xi, &grid, &[0.0], 1).is_err());
    assert!(appendix_convergence(&e, &xi, &grid, &[-1.0], 4).is_err());
    assert!(appendix_convergence(&e, &unit_vector(5, 0), &grid, &[0.0], 4).is_err());
}

#[test]
fn convergence_on_random_model() {
    let (h0, h1) = model(13, 24, 2, Coupling::NonNormal);
    let e = DysonEngine::new(&h0, &h1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xi = random_unit_vector(&mut rng, 24);
    let grid = e.auto_grid(Direction::Forward, 0.0, 1.0, &xi, 1e-12).unwrap();
    let table = appendix_convergence(&e, &xi, &grid, &[0.0, 1.0, 2.0], 10).unwrap();
    assert!(table.passed(), "{table:?}");
    for n in 0..=10 {
        assert!(table.observed[0][n] <= table.observed[1][n]);
        assert!(table.observed[1][n] <= table.observed[2][n]);
    }
    // The α = 0 distance at order 0 is the distance from ξ to the propagated vector.
    let target = e.propagate(&xi, 1.0, 0.0, 1e-13).unwrap();
    assert!(table.observed[0][0] >= vec_norm(&(target - &xi)) * (1.0 - 1e-9));
    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("order,observed_alpha_0,observed_alpha_1,observed_alpha_2,bound_alpha_0"));
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn convergence_on_toy_qed() {
    let m = build_model(&QedConfig::default()).unwrap();
    let e = m.engine().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xi = random_low_sector_vector(&m, &mut rng, 1);
    let grid = e.auto_grid(Direction::Forward, 0.0, 1.0, &xi, 1e-12).unwrap();
    let table = appendix_convergence(&e, &xi, &grid, &[0.0, 1.0, 2.0], 12).unwrap();
    for a in 0..3 {
        assert!(table.dominated[a], "{:?} vs {:?}", table.observed[a], table.bounds[a]);
        let onset = table.onset[a].expect("eventually decreasing");
        assert!(onset <= 3, "onset {onset}");
    }
    for r in table.reports() {
        assert!(r.passed, "{}", r.summary_line());
    }
}
