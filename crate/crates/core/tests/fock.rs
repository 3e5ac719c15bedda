use dysonprop::fock::{
    boson_ops, eta_metric, fermion_ops, free_hamiltonian, second_quantize, BosonMode, FermionMode, FockBasis,
    FockConfig, ModeSpec, LEAKAGE_WARN,
};
use dysonprop::linalg::{anticommutator, c, commutator, max_abs, spectral_norm, unit_vector, CMat, C64};
use dysonprop::{grade_shift_bound, sector_projector, Error, LinOp};
use proptest::prelude::*;

fn boson(label: &str, energy: f64, cutoff: u32) -> BosonMode {
    BosonMode {
        label: label.into(),
        energy,
        cutoff,
    }
}

fn fermion(label: &str, energy: f64) -> FermionMode {
    FermionMode {
        label: label.into(),
        energy,
    }
}

fn basis(bosons: Vec<BosonMode>, fermions: Vec<FermionMode>) -> FockBasis {
    FockBasis::new(ModeSpec { bosons, fermions }).unwrap()
}

/// Diagonal projector onto states whose occupation of `slot` is below `cutoff`.
fn below_mode_cutoff(b: &FockBasis, slot: usize, cutoff: u32) -> CMat {
    let n = b.dim();
    CMat::from_fn(n, n, |j, k| {
        if j == k && b.states()[j][slot] < cutoff {
            c(1.0, 0.0)
        } else {
            c(0.0, 0.0)
        }
    })
}

#[test]
fn ccr_defect_sits_on_the_top_occupation() {
    for cutoff in 1..=5u32 {
        let b = basis(vec![boson("a", 1.0, cutoff)], vec![]);
        let (a, ad) = boson_ops(&b, "a").unwrap();
        let n = b.dim();
        let defect = commutator(a.matrix(), ad.matrix()) - CMat::identity(n, n);
        let mut expected = CMat::zeros(n, n);
        expected[(n - 1, n - 1)] = c(-(cutoff as f64 + 1.0), 0.0);
        assert!(max_abs(&(defect - expected)) < 1e-14, "cutoff {cutoff}");
    }
}

#[test]
fn two_fermion_modes_anticommute() {
    let b = basis(vec![], vec![fermion("f1", 1.0), fermion("f2", 2.0)]);
    let (b1, b1d) = fermion_ops(&b, "f1").unwrap();
    let (b2, b2d) = fermion_ops(&b, "f2").unwrap();
    assert_eq!(max_abs(&anticommutator(b1.matrix(), b2d.matrix())), 0.0);
    assert_eq!(max_abs(&anticommutator(b1.matrix(), b2.matrix())), 0.0);
    assert_eq!(
        max_abs(&(anticommutator(b2.matrix(), b2d.matrix()) - CMat::identity(4, 4))),
        0.0
    );
    assert_eq!(max_abs(&anticommutator(b1d.matrix(), b1d.matrix())), 0.0);
    // The second mode picks up a sign when the first one is occupied.
    let idx = |occ: &[u32]| b.index_of(occ).unwrap();
    assert_eq!(b2.matrix()[(idx(&[1, 0]), idx(&[1, 1]))], c(-1.0, 0.0));
    assert_eq!(b2.matrix()[(idx(&[0, 0]), idx(&[0, 1]))], c(1.0, 0.0));
}

#[test]
fn fermion_operators_have_unit_norm() {
    let b = basis(vec![boson("x", 1.0, 2)], vec![fermion("f1", 1.0), fermion("f2", 0.5)]);
    for label in ["f1", "f2"] {
        let (f, fd) = fermion_ops(&b, label).unwrap();
        assert!((spectral_norm(fd.matrix()) - 1.0).abs() < 1e-14);
        assert!((spectral_norm(f.matrix()) - 1.0).abs() < 1e-14);
    }
}

#[test]
fn second_quantization_examples() {
    let b = basis(vec![boson("a", 0.7, 3)], vec![]);
    assert_eq!(second_quantize(&b, &[0.0]).unwrap().matrix(), &CMat::zeros(4, 4));
    let h = second_quantize(&b, &[0.7]).unwrap();
    assert_eq!(h.matrix()[(2, 2)], c(1.4, 0.0));
    assert_eq!(free_hamiltonian(&b).matrix(), h.matrix());
    assert!(second_quantize(&b, &[1.0, 2.0]).is_err());

    let b = basis(vec![boson("a", 0.0, 2), boson("b", 0.0, 1)], vec![fermion("f", 0.0)]);
    let number = second_quantize(&b, &[1.0, 1.0, 0.0]).unwrap();
    for (j, g) in b.space().grades().iter().enumerate() {
        assert_eq!(number.matrix()[(j, j)], c(*g, 0.0));
    }
}

#[test]
fn eta_examples() {
    let b = basis(vec![boson("s", 1.0, 2), boson("t", 1.0, 2)], vec![fermion("f", 1.0)]);
    let n = b.dim();
    assert_eq!(eta_metric(&b, &[]).unwrap().matrix(), &CMat::identity(n, n));
    let eta = eta_metric(&b, &["s".to_string()]).unwrap();
    let one_scalar = b.index_of(&[1, 0, 0]).unwrap();
    let two_scalar = b.index_of(&[2, 1, 1]).unwrap();
    let no_scalar = b.index_of(&[0, 2, 1]).unwrap();
    assert_eq!(eta.matrix()[(one_scalar, one_scalar)], c(-1.0, 0.0));
    assert_eq!(eta.matrix()[(two_scalar, two_scalar)], c(1.0, 0.0));
    assert_eq!(eta.matrix()[(no_scalar, no_scalar)], c(1.0, 0.0));
    assert_eq!(eta.matrix() * eta.matrix(), CMat::identity(n, n));
    assert_eq!(eta.matrix().adjoint(), eta.matrix().clone());
    assert!(matches!(eta_metric(&b, &["f".to_string()]), Err(Error::UnknownMode(_))));
}

#[test]
fn invalid_specs_are_rejected() {
    let err = |bosons, fermions| FockBasis::new(ModeSpec { bosons, fermions }).is_err();
    assert!(err(vec![boson("a", 1.0, 0)], vec![]));
    assert!(err(vec![boson("a", -1.0, 2)], vec![]));
    assert!(err(vec![boson("a", 1.0, 2), boson("a", 2.0, 2)], vec![]));
    assert!(err(vec![], vec![fermion("f", f64::NAN)]));
}

#[test]
fn config_document_schema() {
    let text = r#"{
        "bosons": [{"label": "k0", "energy": 1.0, "cutoff": 2}, {"label": "k1", "energy": 1.0, "cutoff": 2}],
        "fermions": [{"label": "e", "energy": 1.5}],
        "scalar_modes": ["k0"]
    }"#;
    let cfg: FockConfig = serde_json::from_str(text).unwrap();
    let b = FockBasis::new(cfg.spec()).unwrap();
    assert_eq!(b.dim(), 3 * 3 * 2);
    let eta = eta_metric(&b, &cfg.scalar_modes).unwrap();
    assert_eq!(
        eta.matrix()[(b.index_of(&[1, 0, 0]).unwrap(), b.index_of(&[1, 0, 0]).unwrap())],
        c(-1.0, 0.0)
    );
    assert!(serde_json::from_str::<FockConfig>(r#"{"bosons": [], "scalars": []}"#).is_err());
    assert!(serde_json::from_str::<FockConfig>(r#"{"bosons": [{"label": "a", "energy": 1.0}]}"#).is_err());
}

#[test]
fn top_sector_weight_reports_leakage() {
    let b = basis(vec![boson("a", 1.0, 2)], vec![]);
    assert_eq!(b.top_sector_weight(&unit_vector(3, 0)), 0.0);
    assert_eq!(b.top_sector_weight(&unit_vector(3, 2)), 1.0);
    let mut v = unit_vector(3, 0);
    v[2] = c(1e-4, 0.0);
    let w = b.top_sector_weight(&v);
    assert!(w > 0.0 && w < LEAKAGE_WARN * 1.01);
    let p = b.below_top_projector();
    assert_eq!(p.matrix()[(2, 2)], c(0.0, 0.0));
    assert_eq!(p.matrix()[(1, 1)], c(1.0, 0.0));
}

fn spec_strategy() -> impl Strategy<Value = ModeSpec> {
    (
        prop::collection::vec((0.0..3.0f64, 1u32..4), 1..3),
        prop::collection::vec(0.0..3.0f64, 0..4),
    )
        .prop_map(|(bs, fs)| ModeSpec {
            bosons: bs
                .into_iter()
                .enumerate()
                .map(|(k, (e, cut))| boson(&format!("b{k}"), e, cut))
                .collect(),
            fermions: fs
                .into_iter()
                .enumerate()
                .map(|(k, e)| fermion(&format!("f{k}"), e))
                .collect(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dimension_and_enumeration_order(spec in spec_strategy()) {
        let b = FockBasis::new(spec.clone()).unwrap();
        let expected: usize = spec.bosons.iter().map(|m| m.cutoff as usize + 1).product::<usize>() << spec.fermions.len();
        prop_assert_eq!(b.dim(), expected);
        prop_assert!(b.states().windows(2).all(|w| w[0] < w[1]));
        for (j, s) in b.states().iter().enumerate() {
            prop_assert_eq!(b.index_of(s), Some(j));
            let nb: u32 = s[..spec.bosons.len()].iter().sum();
            prop_assert_eq!(b.space().grades()[j], nb as f64);
        }
    }

    #[test]
    fn ccr_below_cutoff_and_cross_commutation(spec in spec_strategy()) {
        let b = FockBasis::new(spec.clone()).unwrap();
        let n = b.dim();
        let ops: Vec<(LinOp, LinOp)> = spec.bosons.iter().map(|m| boson_ops(&b, &m.label).unwrap()).collect();
        for (i, m) in spec.bosons.iter().enumerate() {
            let (a, ad) = &ops[i];
            let p = below_mode_cutoff(&b, i, m.cutoff);
            let defect = (commutator(a.matrix(), ad.matrix()) - CMat::identity(n, n)) * &p;
            prop_assert!(max_abs(&defect) <= 1e-14);
            prop_assert_eq!(grade_shift_bound(ad), 1.0);
            for (j, (a2, ad2)) in ops.iter().enumerate().filter(|(j, _)| *j != i) {
                prop_assert_eq!(max_abs(&commutator(a.matrix(), ad2.matrix())), 0.0, "modes {} {}", i, j);
                prop_assert_eq!(max_abs(&commutator(a.matrix(), a2.matrix())), 0.0);
            }
        }
    }

    #[test]
    fn car_holds_exactly(spec in spec_strategy()) {
        let b = FockBasis::new(spec.clone()).unwrap();
        let n = b.dim();
        let id = CMat::identity(n, n);
        let ops: Vec<(LinOp, LinOp)> = spec.fermions.iter().map(|m| fermion_ops(&b, &m.label).unwrap()).collect();
        for (i, (bi, bid)) in ops.iter().enumerate() {
            for (j, (bj, bjd)) in ops.iter().enumerate() {
                let delta = if i == j { id.clone() } else { CMat::zeros(n, n) };
                prop_assert!(max_abs(&(anticommutator(bi.matrix(), bjd.matrix()) - delta)) <= 1e-14);
                prop_assert!(max_abs(&anticommutator(bi.matrix(), bj.matrix())) <= 1e-14);
                prop_assert!(max_abs(&anticommutator(bid.matrix(), bjd.matrix())) <= 1e-14);
            }
            for m in &spec.bosons {
                let (a, _) = boson_ops(&b, &m.label).unwrap();
                prop_assert_eq!(max_abs(&commutator(a.matrix(), bi.matrix())), 0.0);
            }
        }
    }

    #[test]
    fn eta_commutes_with_number_and_squares_to_one(spec in spec_strategy(), mask in any::<u8>()) {
        let b = FockBasis::new(spec.clone()).unwrap();
        let scalars: Vec<String> = spec
            .bosons
            .iter()
            .enumerate()
            .filter(|(k, _)| mask & (1 << k) != 0)
            .map(|(_, m)| m.label.clone())
            .collect();
        let eta = eta_metric(&b, &scalars).unwrap();
        let ones: Vec<f64> = spec.bosons.iter().map(|_| 1.0).chain(spec.fermions.iter().map(|_| 0.0)).collect();
        let number = second_quantize(&b, &ones).unwrap();
        prop_assert_eq!(max_abs(&commutator(eta.matrix(), number.matrix())), 0.0);
        prop_assert_eq!(eta.matrix() * eta.matrix(), CMat::identity(b.dim(), b.dim()));
        prop_assert_eq!(eta.hermiticity_defect(), 0.0);
    }

    #[test]
    fn second_quantization_commutes_with_sector_projectors(
        spec in spec_strategy(),
        energies in prop::collection::vec(-2.0..2.0f64, 6),
        level in 0.0..7.0f64,
    ) {
        let b = FockBasis::new(spec.clone()).unwrap();
        let modes = spec.bosons.len() + spec.fermions.len();
        let h = second_quantize(&b, &energies[..modes]).unwrap();
        let p = sector_projector(b.space(), level).unwrap();
        prop_assert_eq!(max_abs(&commutator(h.matrix(), p.matrix())), 0.0);
        prop_assert!(h.is_diagonal());
        for (j, s) in b.states().iter().enumerate() {
            let e: f64 = s.iter().zip(&energies).map(|(n, e)| *n as f64 * e).sum();
            prop_assert_eq!(h.matrix()[(j, j)], C64::new(e, 0.0));
        }
    }
}
