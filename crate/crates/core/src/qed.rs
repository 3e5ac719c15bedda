//! Lorenz-gauge QED on a finite lattice with a truncated photon ladder.
//!
//! Photon modes carry four polarizations per momentum point; the scalar
//! (`λ = 0`) ones have negative norm under the metric `η`. Continuum integrals
//! are replaced by weighted sums over the declared grids, and every bound
//! constant is recomputed from those sums.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dyson::DysonEngine;
use crate::error::{Error, Result};
use crate::evolution::{apply_w, apply_w_adjoint};
use crate::fock::{
    boson_ops, eta_metric, fermion_ops, free_hamiltonian, BosonMode, FermionMode, FockBasis, ModeSpec, LEAKAGE_WARN,
};
use crate::graded::{grade_shift_bound, relative_bound_constant, GradedSpace, LinOp};
use crate::linalg::{anticommutator, c, commutator, inner, spectral_norm, vec_norm, CMat, CVec, NanMax, C64, I};
use crate::report::Report;

/// Diagonal of the Minkowski metric, signature `(+, −, −, −)`.
pub const METRIC: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

/// Random pairs drawn by [`eta_unitarity_check`].
pub const ETA_PAIRS: usize = 50;
pub const ETA_PAIR_SEED: u64 = 0x00e7_a5ee_d000;
/// Threshold on the drift of the indefinite pairing.
pub const ETA_DRIFT_TOL: f64 = 1e-6;

fn pauli() -> [CMat; 3] {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    [
        CMat::from_row_slice(2, 2, &[z, one, one, z]),
        CMat::from_row_slice(2, 2, &[z, -I, I, z]),
        CMat::from_row_slice(2, 2, &[one, z, z, -one]),
    ]
}

fn blocks(a: &CMat, b: &CMat, cc: &CMat, d: &CMat) -> CMat {
    let mut m = CMat::zeros(4, 4);
    m.view_mut((0, 0), (2, 2)).copy_from(a);
    m.view_mut((0, 2), (2, 2)).copy_from(b);
    m.view_mut((2, 0), (2, 2)).copy_from(cc);
    m.view_mut((2, 2), (2, 2)).copy_from(d);
    m
}

/// `γ⁰, γ¹, γ², γ³` in the Dirac representation.
pub fn gamma_matrices() -> [CMat; 4] {
    let id = CMat::identity(2, 2);
    let zero = CMat::zeros(2, 2);
    let s = pauli();
    let g0 = blocks(&id, &zero, &zero, &(-&id));
    let gj = |k: usize| blocks(&zero, &s[k], &(-&s[k]), &zero);
    [g0, gj(0), gj(1), gj(2)]
}

/// `α⁰ = I` and `α^j = γ⁰γ^j`; all four are Hermitian.
pub fn alpha_matrices() -> [CMat; 4] {
    let g = gamma_matrices();
    [CMat::identity(4, 4), &g[0] * &g[1], &g[0] * &g[2], &g[0] * &g[3]]
}

/// Positive- and negative-energy solutions of the free Dirac equation at one momentum.
#[derive(Debug, Clone)]
pub struct Spinors {
    pub energy: f64,
    /// `u_{+1/2}, u_{−1/2}`.
    pub u: [CVec; 2],
    /// `v_{+1/2}, v_{−1/2}`.
    pub v: [CVec; 2],
}

fn norm3(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Helicity eigenvectors of `σ·p̂`, or of `σ₃` when `p = 0`.
fn helicity_basis(p: &[f64; 3]) -> [CVec; 2] {
    let r = norm3(p);
    let (theta, phi) = if r == 0.0 {
        (0.0, 0.0)
    } else {
        ((p[2] / r).clamp(-1.0, 1.0).acos(), p[1].atan2(p[0]))
    };
    let (ch, sh) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    [
        CVec::from_vec(vec![c(ch, 0.0), C64::from_polar(sh, phi)]),
        CVec::from_vec(vec![C64::from_polar(-sh, -phi), c(ch, 0.0)]),
    ]
}

/// Spinors with `(α·p + βM)u = E u`, `(α·p + βM)v = −E v`, labelled by helicity.
///
/// Each spinor has squared norm `E = (p² + M²)^{1/2}`, so the eight
/// outer products sum to `E·I`.
pub fn dirac_spinors(p: [f64; 3], mass: f64) -> Result<Spinors> {
    if !(mass > 0.0 && mass.is_finite()) || p.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!(
            "Dirac spinors need M > 0 and finite p, got M = {mass}"
        )));
    }
    let e = (norm3(&p).powi(2) + mass * mass).sqrt();
    let s = pauli();
    let sp = &s[0] * c(p[0], 0.0) + &s[1] * c(p[1], 0.0) + &s[2] * c(p[2], 0.0);
    let scale = ((e + mass) / 2.0).sqrt();
    let chi = helicity_basis(&p);
    let build =
        |upper: &CVec, lower: &CVec| CVec::from_iterator(4, upper.iter().chain(lower.iter()).map(|z| z * scale));
    let u = |x: &CVec| build(x, &(&sp * x / c(e + mass, 0.0)));
    let v = |x: &CVec| build(&(-(&sp * x) / c(e + mass, 0.0)), x);
    Ok(Spinors {
        energy: e,
        u: [u(&chi[0]), u(&chi[1])],
        v: [v(&chi[0]), v(&chi[1])],
    })
}

/// `e^{(0)}, …, e^{(3)}` at `k`: the time direction, a transverse pair built
/// from `k × ẑ`, and the longitudinal direction `(0, k/|k|)`.
pub fn polarization_vectors(k: [f64; 3]) -> Result<[[f64; 4]; 4]> {
    if k.iter().any(|x| !x.is_finite()) || (k[0] == 0.0 && k[1] == 0.0) {
        return Err(Error::Domain(format!(
            "momentum {k:?} lies on the z-axis, where the transverse polarization frame is undefined"
        )));
    }
    let r = norm3(&k);
    let kh = [k[0] / r, k[1] / r, k[2] / r];
    // k × ẑ = (k_y, −k_x, 0)
    let t = (k[0] * k[0] + k[1] * k[1]).sqrt();
    let e1 = [k[1] / t, -k[0] / t, 0.0];
    let e2 = [
        kh[1] * e1[2] - kh[2] * e1[1],
        kh[2] * e1[0] - kh[0] * e1[2],
        kh[0] * e1[1] - kh[1] * e1[0],
    ];
    Ok([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, e1[0], e1[1], e1[2]],
        [0.0, e2[0], e2[1], e2[2]],
        [0.0, kh[0], kh[1], kh[2]],
    ])
}

/// Momentum points with positive quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumGrid {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl MomentumGrid {
    pub fn new(points: Vec<[f64; 3]>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("momentum grid is empty".into()));
        }
        if weights.len() != points.len() {
            return Err(Error::Config(format!(
                "{} momentum points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("quadrature weights must be positive and finite".into()));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Config("momentum components must be finite".into()));
        }
        Ok(MomentumGrid { points, weights })
    }

    /// A photon grid: additionally every point must be off the z-axis.
    pub fn photon(points: Vec<[f64; 3]>, weights: Vec<f64>) -> Result<Self> {
        let g = Self::new(points, weights)?;
        for k in &g.points {
            polarization_vectors(*k)?;
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Model document. Omitted cutoff samples default to Gaussians: the
/// photon and electron cutoffs in momentum space are `e^{−|k|²/2}` (the
/// unitary transform of a unit-width Gaussian) and the spatial cutoff is
/// `e^{−|x|²/2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QedConfig {
    pub momentum_points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum_weights: Option<Vec<f64>>,
    pub fermion_momenta: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fermion_weights: Option<Vec<f64>>,
    pub mass: f64,
    pub coupling: f64,
    pub photon_cap: u32,
    #[serde(default = "default_positions")]
    pub positions: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_sp: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_ph: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_el: Option<Vec<f64>>,
}

fn default_positions() -> Vec<[f64; 3]> {
    vec![[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.5]]
}

/// Lattice cell volume used when position weights are omitted.
pub const DEFAULT_CELL_VOLUME: f64 = 0.125;

impl Default for QedConfig {
    fn default() -> Self {
        QedConfig {
            momentum_points: vec![[0.6, 0.0, 0.8]],
            momentum_weights: None,
            fermion_momenta: vec![[0.0, 0.0, 0.0]],
            fermion_weights: None,
            mass: 1.0,
            coupling: 0.1,
            photon_cap: 3,
            positions: default_positions(),
            position_weights: None,
            chi_sp: None,
            chi_ph: None,
            chi_el: None,
        }
    }
}

fn gaussian(p: &[f64; 3]) -> f64 {
    (-0.5 * norm3(p).powi(2)).exp()
}

fn samples(given: &Option<Vec<f64>>, points: &[[f64; 3]], name: &str) -> Result<Vec<f64>> {
    match given {
        Some(v) if v.len() != points.len() => Err(Error::Config(format!(
            "`{name}` has {} samples for {} grid points",
            v.len(),
            points.len()
        ))),
        Some(v) if v.iter().any(|x| !x.is_finite()) => Err(Error::Config(format!("`{name}` has non-finite samples"))),
        Some(v) => Ok(v.clone()),
        None => Ok(points.iter().map(gaussian).collect()),
    }
}

/// Bound constants recomputed from the lattice sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QedConstants {
    /// `Σ_μ max_x ‖j^μ(x)‖`.
    pub m_el: f64,
    /// `2 ‖χ̂_ph / √(2ω)‖`.
    pub m_ph: f64,
    /// `Σ_x w_x |χ_sp(x)|`.
    pub chi_sp_l1: f64,
    /// `|e| · ‖χ_sp‖₁ · M_el · M_ph`, the predicted bound on `‖H_int (N_b + 1)^{−1/2}‖`.
    pub relative_bound_limit: f64,
}

/// The assembled model on `photons ⊗ fermions`.
#[derive(Debug, Clone)]
pub struct QedModel {
    config: QedConfig,
    photon_grid: MomentumGrid,
    fermion_grid: MomentumGrid,
    position_weights: Vec<f64>,
    chi_sp: Vec<f64>,
    chi_ph: Vec<f64>,
    chi_el: Vec<f64>,
    basis: FockBasis,
    photon_basis: FockBasis,
    fermion_basis: FockBasis,
    /// Full index of `(photon state, fermion state)`.
    pair_index: Vec<Vec<usize>>,
    scalar_modes: Vec<String>,
    polarizations: Vec<[[f64; 4]; 4]>,
    photon_ann: Vec<[CMat; 4]>,
    fields: Vec<[CMat; 4]>,
    psis: Vec<[CMat; 4]>,
    psi_one_particle_norms: Vec<[f64; 4]>,
    currents: Vec<[CMat; 4]>,
    h_fr: LinOp,
    h_int: LinOp,
    eta: LinOp,
    constants: QedConstants,
}

fn photon_label(k: usize, lambda: usize) -> String {
    format!("k{k}.{lambda}")
}

fn fermion_label(kind: char, p: usize, s: usize) -> String {
    format!("{kind}{p}.{}", if s == 0 { '+' } else { '-' })
}

/// Assembles the fields, current, interaction, free Hamiltonian and metric.
pub fn build_model(config: &QedConfig) -> Result<QedModel> {
    if config.photon_cap < 1 {
        return Err(Error::Config("photon_cap must be at least 1".into()));
    }
    if !config.coupling.is_finite() {
        return Err(Error::Config("coupling must be finite".into()));
    }
    let ones = |n: usize| vec![1.0; n];
    let photon_grid = MomentumGrid::photon(
        config.momentum_points.clone(),
        config
            .momentum_weights
            .clone()
            .unwrap_or_else(|| ones(config.momentum_points.len())),
    )?;
    let fermion_grid = MomentumGrid::new(
        config.fermion_momenta.clone(),
        config
            .fermion_weights
            .clone()
            .unwrap_or_else(|| ones(config.fermion_momenta.len())),
    )?;
    if config.positions.is_empty() {
        return Err(Error::Config("position lattice is empty".into()));
    }
    let position_weights = config
        .position_weights
        .clone()
        .unwrap_or_else(|| vec![DEFAULT_CELL_VOLUME; config.positions.len()]);
    if position_weights.len() != config.positions.len() || position_weights.iter().any(|w| !(*w > 0.0 && w.is_finite()))
    {
        return Err(Error::Config(
            "position weights must be positive, one per position".into(),
        ));
    }
    let chi_sp = samples(&config.chi_sp, &config.positions, "chi_sp")?;
    let chi_ph = samples(&config.chi_ph, &photon_grid.points, "chi_ph")?;
    let chi_el = samples(&config.chi_el, &fermion_grid.points, "chi_el")?;
    let spinors: Vec<(Spinors, Spinors)> = fermion_grid
        .points
        .iter()
        .map(|p| {
            Ok((
                dirac_spinors(*p, config.mass)?,
                dirac_spinors([-p[0], -p[1], -p[2]], config.mass)?,
            ))
        })
        .collect::<Result<_>>()?;

    let bosons: Vec<BosonMode> = photon_grid
        .points
        .iter()
        .enumerate()
        .flat_map(|(k, p)| {
            (0..4).map(move |lambda| BosonMode {
                label: photon_label(k, lambda),
                energy: norm3(p),
                cutoff: config.photon_cap,
            })
        })
        .collect();
    let fermions: Vec<FermionMode> = ['b', 'd']
        .iter()
        .flat_map(|&kind| {
            spinors.iter().enumerate().flat_map(move |(p, (sp, _))| {
                (0..2).map(move |s| FermionMode {
                    label: fermion_label(kind, p, s),
                    energy: sp.energy,
                })
            })
        })
        .collect();
    let photon_basis = FockBasis::with_total_cap(
        ModeSpec {
            bosons: bosons.clone(),
            fermions: vec![],
        },
        config.photon_cap,
    )?;
    let fermion_basis = FockBasis::new(ModeSpec {
        bosons: vec![],
        fermions: fermions.clone(),
    })?;
    let basis = FockBasis::with_total_cap(ModeSpec { bosons, fermions }, config.photon_cap)?;
    let pair_index: Vec<Vec<usize>> = photon_basis
        .states()
        .iter()
        .map(|ph| {
            fermion_basis
                .states()
                .iter()
                .map(|f| {
                    let joint: Vec<u32> = ph.iter().chain(f).copied().collect();
                    basis.index_of(&joint).expect("joint state enumerated")
                })
                .collect()
        })
        .collect();
    let scalar_modes: Vec<String> = (0..photon_grid.len()).map(|k| photon_label(k, 0)).collect();

    let polarizations: Vec<[[f64; 4]; 4]> = photon_grid
        .points
        .iter()
        .map(|k| polarization_vectors(*k))
        .collect::<Result<_>>()?;
    let photon_ann: Vec<[CMat; 4]> = (0..photon_grid.len())
        .map(|k| {
            let ops: Vec<CMat> = (0..4)
                .map(|l| boson_ops(&photon_basis, &photon_label(k, l)).map(|(a, _)| a.into_matrix()))
                .collect::<Result<_>>()?;
            Ok([ops[0].clone(), ops[1].clone(), ops[2].clone(), ops[3].clone()])
        })
        .collect::<Result<_>>()?;
    let fermion_ann = |kind: char, p: usize, s: usize| -> Result<CMat> {
        Ok(fermion_ops(&fermion_basis, &fermion_label(kind, p, s))?.0.into_matrix())
    };

    let dph = photon_basis.dim();
    let dfe = fermion_basis.dim();
    let mut fields = Vec::with_capacity(config.positions.len());
    let mut psis = Vec::with_capacity(config.positions.len());
    let mut psi_norms = Vec::with_capacity(config.positions.len());
    let mut currents = Vec::with_capacity(config.positions.len());
    let alphas = alpha_matrices();
    for x in &config.positions {
        let mut field: [CMat; 4] = std::array::from_fn(|_| CMat::zeros(dph, dph));
        for (k, kp) in photon_grid.points.iter().enumerate() {
            let omega = norm3(kp);
            let amp = photon_grid.weights[k].sqrt() * chi_ph[k] / (2.0 * omega).sqrt();
            let phase = C64::from_polar(1.0, dot(kp, x));
            for lambda in 0..4 {
                let a = &photon_ann[k][lambda];
                // η-adjoint of the creator: −g_λλ a*
                let op = a * (phase * amp) + a.adjoint() * (phase.conj() * amp * -METRIC[lambda]);
                for (mu, f) in field.iter_mut().enumerate() {
                    let e = polarizations[k][lambda][mu];
                    if e != 0.0 {
                        *f += &op * c(e, 0.0);
                    }
                }
            }
        }
        let mut psi: [CMat; 4] = std::array::from_fn(|_| CMat::zeros(dfe, dfe));
        let mut norms = [0.0f64; 4];
        for (p, pp) in fermion_grid.points.iter().enumerate() {
            let (sp, reflected) = &spinors[p];
            let amp = fermion_grid.weights[p].sqrt() * chi_el[p] / (2.0 * sp.energy).sqrt();
            let phase = C64::from_polar(1.0, dot(pp, x));
            for s in 0..2 {
                let b = fermion_ann('b', p, s)?;
                let d = fermion_ann('d', p, s)?;
                for (l, op) in psi.iter_mut().enumerate() {
                    let cu = phase * amp * sp.u[s][l];
                    let cv = phase.conj() * amp * reflected.v[s][l];
                    *op += &b * cu + d.adjoint() * cv;
                    norms[l] += cu.norm_sqr() + cv.norm_sqr();
                }
            }
        }
        let current: [CMat; 4] = std::array::from_fn(|mu| {
            let mut j = CMat::zeros(dfe, dfe);
            for l in 0..4 {
                for lp in 0..4 {
                    let a = alphas[mu][(l, lp)];
                    if a != c(0.0, 0.0) {
                        j += psi[l].adjoint() * &psi[lp] * a;
                    }
                }
            }
            j
        });
        fields.push(field);
        psis.push(psi);
        psi_norms.push(norms.map(f64::sqrt));
        currents.push(current);
    }

    let dim = basis.dim();
    let mut h = CMat::zeros(dim, dim);
    for (xi, (&w, &chi)) in position_weights.iter().zip(&chi_sp).enumerate() {
        for mu in 0..4 {
            let coef = config.coupling * w * chi * METRIC[mu];
            if coef == 0.0 {
                continue;
            }
            let field = &fields[xi][mu];
            let current = &currents[xi][mu];
            for (pr, row) in pair_index.iter().enumerate() {
                for pc in 0..dph {
                    let a = field[(pr, pc)];
                    if a == c(0.0, 0.0) {
                        continue;
                    }
                    let col = &pair_index[pc];
                    for fr in 0..dfe {
                        for fc in 0..dfe {
                            let j = current[(fr, fc)];
                            if j != c(0.0, 0.0) {
                                h[(row[fr], col[fc])] += a * j * coef;
                            }
                        }
                    }
                }
            }
        }
    }
    let h_int = LinOp::new(basis.space().clone(), h)?;
    let h_fr = free_hamiltonian(&basis);
    let eta = eta_metric(&basis, &scalar_modes)?;

    let m_el: f64 = (0..4)
        .map(|mu| currents.iter().map(|j| spectral_norm(&j[mu])).fold(0.0, f64::max))
        .sum();
    let m_ph = 2.0
        * photon_grid
            .points
            .iter()
            .zip(&photon_grid.weights)
            .zip(&chi_ph)
            .map(|((k, w), chi)| w * chi * chi / (2.0 * norm3(k)))
            .sum::<f64>()
            .sqrt();
    let chi_sp_l1: f64 = position_weights.iter().zip(&chi_sp).map(|(w, x)| w * x.abs()).sum();
    let constants = QedConstants {
        m_el,
        m_ph,
        chi_sp_l1,
        relative_bound_limit: config.coupling.abs() * chi_sp_l1 * m_el * m_ph,
    };

    Ok(QedModel {
        config: config.clone(),
        photon_grid,
        fermion_grid,
        position_weights,
        chi_sp,
        chi_ph,
        chi_el,
        basis,
        photon_basis,
        fermion_basis,
        pair_index,
        scalar_modes,
        polarizations,
        photon_ann,
        fields,
        psis,
        psi_one_particle_norms: psi_norms,
        currents,
        h_fr,
        h_int: h_int.certified(),
        eta,
        constants,
    })
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl QedModel {
    pub fn config(&self) -> &QedConfig {
        &self.config
    }

    pub fn photon_grid(&self) -> &MomentumGrid {
        &self.photon_grid
    }

    pub fn fermion_grid(&self) -> &MomentumGrid {
        &self.fermion_grid
    }

    pub fn position_weights(&self) -> &[f64] {
        &self.position_weights
    }

    pub fn chi_sp(&self) -> &[f64] {
        &self.chi_sp
    }

    pub fn chi_ph(&self) -> &[f64] {
        &self.chi_ph
    }

    pub fn chi_el(&self) -> &[f64] {
        &self.chi_el
    }

    pub fn coupling(&self) -> f64 {
        self.config.coupling
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn photon_basis(&self) -> &FockBasis {
        &self.photon_basis
    }

    pub fn fermion_basis(&self) -> &FockBasis {
        &self.fermion_basis
    }

    pub fn space(&self) -> &Arc<GradedSpace> {
        self.basis.space()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Labels of the `λ = 0` photon modes.
    pub fn scalar_modes(&self) -> &[String] {
        &self.scalar_modes
    }

    pub fn photon_mode(&self, k: usize, lambda: usize) -> String {
        photon_label(k, lambda)
    }

    pub fn polarizations(&self, k: usize) -> &[[f64; 4]; 4] {
        &self.polarizations[k]
    }

    pub fn h_fr(&self) -> &LinOp {
        &self.h_fr
    }

    pub fn h_int(&self) -> &LinOp {
        &self.h_int
    }

    pub fn eta(&self) -> &LinOp {
        &self.eta
    }

    pub fn constants(&self) -> QedConstants {
        self.constants
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.config.positions
    }

    /// `A_μ(x_i)` on the photon factor.
    pub fn field(&self, position: usize, mu: usize) -> &CMat {
        &self.fields[position][mu]
    }

    /// `ψ_l(x_i)` on the fermion factor.
    pub fn psi(&self, position: usize, l: usize) -> &CMat {
        &self.psis[position][l]
    }

    /// Norm of the one-particle vector behind `ψ_l(x_i)`.
    pub fn psi_one_particle_norm(&self, position: usize, l: usize) -> f64 {
        self.psi_one_particle_norms[position][l]
    }

    /// `j^μ(x_i)` on the fermion factor.
    pub fn current(&self, position: usize, mu: usize) -> &CMat {
        &self.currents[position][mu]
    }

    /// `photon ⊗ fermion` on the joint space; `None` stands for the identity.
    pub fn lift(&self, photon: Option<&CMat>, fermion: Option<&CMat>) -> Result<LinOp> {
        let dph = self.photon_basis.dim();
        let dfe = self.fermion_basis.dim();
        for (m, d) in [(photon, dph), (fermion, dfe)] {
            if let Some(m) = m {
                if m.nrows() != d || m.ncols() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: m.nrows(),
                    });
                }
            }
        }
        let pid = CMat::identity(dph, dph);
        let fid = CMat::identity(dfe, dfe);
        let ph = photon.unwrap_or(&pid);
        let fe = fermion.unwrap_or(&fid);
        let mut m = CMat::zeros(self.dim(), self.dim());
        for pr in 0..dph {
            for pc in 0..dph {
                let a = ph[(pr, pc)];
                if a == c(0.0, 0.0) {
                    continue;
                }
                for fr in 0..dfe {
                    for fc in 0..dfe {
                        m[(self.pair_index[pr][fr], self.pair_index[pc][fc])] += a * fe[(fr, fc)];
                    }
                }
            }
        }
        LinOp::new(self.space().clone(), m)
    }

    /// `a_μ(f) = Σ_{k,λ} √w_k conj(f(k)) e^{(λ)}_μ(k) a_λ(k)` on the photon factor.
    pub fn smeared_annihilator(&self, mu: usize, f: &[C64]) -> Result<CMat> {
        if f.len() != self.photon_grid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.photon_grid.len(),
                found: f.len(),
            });
        }
        let d = self.photon_basis.dim();
        let mut m = CMat::zeros(d, d);
        for (k, fk) in f.iter().enumerate() {
            let w = self.photon_grid.weights[k].sqrt();
            for lambda in 0..4 {
                let e = self.polarizations[k][lambda][mu];
                if e != 0.0 {
                    m += &self.photon_ann[k][lambda] * (fk.conj() * w * e);
                }
            }
        }
        Ok(m)
    }

    /// `η_ph a_μ(f)* η_ph` on the photon factor.
    pub fn smeared_creator(&self, mu: usize, f: &[C64]) -> Result<CMat> {
        let eta = self.photon_eta();
        Ok(&eta * self.smeared_annihilator(mu, f)?.adjoint() * &eta)
    }

    fn photon_eta(&self) -> CMat {
        eta_metric(&self.photon_basis, &self.scalar_modes)
            .expect("scalar modes exist")
            .into_matrix()
    }

    /// `⟨f, g⟩ = Σ_k w_k conj(f(k)) g(k)`.
    pub fn one_particle_inner(&self, f: &[C64], g: &[C64]) -> C64 {
        f.iter()
            .zip(g)
            .zip(&self.photon_grid.weights)
            .map(|((a, b), w)| a.conj() * b * *w)
            .sum()
    }

    /// `η M η`, using that `η` is a diagonal of signs.
    pub fn eta_conjugate(&self, m: &CMat) -> CMat {
        let eta = self.eta.matrix();
        CMat::from_fn(m.nrows(), m.ncols(), |i, j| {
            m[(i, j)] * (eta[(i, i)].re * eta[(j, j)].re)
        })
    }

    pub fn engine(&self) -> Result<DysonEngine> {
        DysonEngine::new(&self.h_fr, &self.h_int)
    }
}

/// `η T* η`.
pub fn eta_adjoint(model: &QedModel, t: &LinOp) -> Result<LinOp> {
    if t.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: t.dim(),
        });
    }
    LinOp::new(t.space().clone(), model.eta_conjugate(&t.matrix().adjoint()))
}

/// Test functions for the commutator check: normalised point masses on
/// every grid point and a few seeded random profiles.
fn grid_functions(model: &QedModel, seed: u64) -> Vec<Vec<C64>> {
    let n = model.photon_grid.len();
    let mut fs: Vec<Vec<C64>> = (0..n)
        .map(|k| {
            let mut f = vec![c(0.0, 0.0); n];
            f[k] = c(1.0 / model.photon_grid.weights[k].sqrt(), 0.0);
            f
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..3 {
        fs.push(
            (0..n)
                .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect(),
        );
    }
    fs
}

/// Maximum over test functions and index pairs of
/// `‖([a_μ(f), a_ν†(g)] + g_μν ⟨f, g⟩) P‖`, with `P` projecting below the photon cap.
pub fn field_commutators(model: &QedModel) -> Result<Report> {
    let fs = grid_functions(model, 17);
    let below = model.photon_basis.below_top_projector().into_matrix();
    let d = model.photon_basis.dim();
    let mut worst = 0.0f64;
    let mut zero_pair_worst = 0.0f64;
    for f in &fs {
        for g in &fs {
            let fg = model.one_particle_inner(f, g);
            for mu in 0..4 {
                let a = model.smeared_annihilator(mu, f)?;
                for nu in 0..4 {
                    let ad = model.smeared_creator(nu, g)?;
                    let mut defect = commutator(&a, &ad);
                    if mu == nu {
                        defect += CMat::identity(d, d) * (fg * METRIC[mu]);
                    }
                    let r = spectral_norm(&(defect * &below));
                    worst = worst.nan_max(r);
                    if mu != nu {
                        zero_pair_worst = zero_pair_worst.nan_max(r);
                    }
                }
            }
        }
    }
    Ok(Report::new("field_commutators", worst, 1e-12)
        .with("test_functions", fs.len())
        .with("off_diagonal_residual", zero_pair_worst)
        .with("photon_cap", model.config.photon_cap))
}

/// `‖η H_int η − H_int*‖`.
pub fn eta_symmetry_check(model: &QedModel) -> Report {
    let r = spectral_norm(&(model.eta_conjugate(model.h_int().matrix()) - model.h_int().matrix().adjoint()));
    Report::new("eta_symmetry", r, 1e-12).with("dim", model.dim())
}

/// Grade shift of `H_int` and of its η-adjoint; both should be exactly one.
pub fn grade_shift_check(model: &QedModel) -> Result<Report> {
    let b = grade_shift_bound(model.h_int());
    let b_dag = grade_shift_bound(&eta_adjoint(model, model.h_int())?);
    let nonzero = model.h_int().matrix().iter().any(|z| *z != c(0.0, 0.0));
    let expected = if nonzero { 1.0 } else { 0.0 };
    Ok(
        Report::new("grade_shift", (b - expected).abs().max((b_dag - expected).abs()), 0.0)
            .with("b", b)
            .with("b_eta_adjoint", b_dag),
    )
}

/// `‖H_int (N_b + 1)^{−1/2}‖` against `|e| ‖χ_sp‖₁ M_el M_ph`; the
/// residual is the excess of the former over the latter.
pub fn relative_bound_check(model: &QedModel) -> Report {
    let k = model.constants();
    let measured = relative_bound_constant(model.h_int());
    Report::new(
        "relative_bound",
        (measured - k.relative_bound_limit).max(0.0),
        1e-12 * k.relative_bound_limit.max(1.0),
    )
    .with("measured", measured)
    .with("limit", k.relative_bound_limit)
    .with("m_el", k.m_el)
    .with("m_ph", k.m_ph)
    .with("chi_sp_l1", k.chi_sp_l1)
}

/// `‖a_μ(f)Ψ‖ ≤ ‖f‖ ‖N_b^{1/2} Ψ‖` for seeded random `f`, `Ψ` on the photon
/// factor; the residual is the largest relative excess.
pub fn annihilator_estimate_check(model: &QedModel, samples: usize, seed: u64) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.photon_grid.len();
    let d = model.photon_basis.dim();
    let grades = model.photon_basis.space().grades().to_vec();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let f: Vec<C64> = (0..n)
            .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let psi = crate::linalg::random_vector(&mut rng, d);
        let f_norm = model.one_particle_inner(&f, &f).re.sqrt();
        let n_half = CVec::from_iterator(d, psi.iter().zip(&grades).map(|(z, g)| z * g.sqrt()));
        let rhs = f_norm * vec_norm(&n_half);
        for mu in 0..4 {
            let lhs = vec_norm(&(model.smeared_annihilator(mu, &f)? * &psi));
            worst = worst.nan_max((lhs - rhs) / rhs.nan_max(f64::MIN_POSITIVE));
        }
    }
    Ok(Report::new("annihilator_estimate", worst.max(0.0), 1e-12).with("samples", samples))
}

/// `‖ψ_l(x)‖` against its one-particle norm; the residual is the largest excess.
pub fn dirac_field_norm_check(model: &QedModel) -> Report {
    let mut worst = 0.0f64;
    for x in 0..model.positions().len() {
        for l in 0..4 {
            let op = spectral_norm(model.psi(x, l));
            worst = worst.nan_max(op - model.psi_one_particle_norm(x, l));
        }
    }
    Report::new("dirac_field_norm", worst.max(0.0), 1e-12)
}

/// Hermiticity of every `j^μ(x)`.
pub fn current_hermiticity_check(model: &QedModel) -> Report {
    let mut worst = 0.0f64;
    for x in 0..model.positions().len() {
        for mu in 0..4 {
            let j = model.current(x, mu);
            worst = worst.nan_max(spectral_norm(&(j - j.adjoint())));
        }
    }
    Report::new("current_hermiticity", worst, 1e-12).with("m_el", model.constants().m_el)
}

/// Draws a unit vector supported on photon number `≤ level`.
pub fn random_low_sector_vector<R: Rng + ?Sized>(model: &QedModel, rng: &mut R, level: u32) -> CVec {
    let grades = model.space().grades();
    let mut v = CVec::from_iterator(
        model.dim(),
        grades.iter().map(|g| {
            let z = c(rng.sample(StandardNormal), rng.sample(StandardNormal));
            if *g <= level as f64 {
                z
            } else {
                c(0.0, 0.0)
            }
        }),
    );
    let n = vec_norm(&v);
    v /= c(n, 0.0);
    v
}

/// Photon sector in which [`eta_unitarity_check`] samples: two quanta below the cap.
pub fn default_pair_sector(model: &QedModel) -> u32 {
    model.config.photon_cap.saturating_sub(2)
}

/// Indefinite-pairing drift `|⟨W(t)Ψ, ηW(t)Φ⟩ − ⟨Ψ, ηΦ⟩|`, the η-inverse
/// defect `‖ηW(t)*ηW(t)Ψ − Ψ‖`, and top-sector leakage of `W(t)Ψ`, over
/// seeded random unit pairs in the low photon sectors.
pub fn eta_unitarity_check(model: &QedModel, t: f64, tol: f64) -> Result<Vec<Report>> {
    let engine = model.engine()?;
    eta_unitarity_check_with(
        model,
        &engine,
        t,
        tol,
        ETA_PAIRS,
        ETA_PAIR_SEED,
        default_pair_sector(model),
    )
}

pub fn eta_unitarity_check_with(
    model: &QedModel,
    engine: &DysonEngine,
    t: f64,
    tol: f64,
    pairs: usize,
    seed: u64,
    sector: u32,
) -> Result<Vec<Report>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta = model.eta().matrix();
    let mut drift = 0.0f64;
    let mut inverse = 0.0f64;
    let mut leakage = 0.0f64;
    for _ in 0..pairs {
        let psi = random_low_sector_vector(model, &mut rng, sector);
        let phi = random_low_sector_vector(model, &mut rng, sector);
        let wpsi = apply_w(engine, &psi, &[t], tol)?.remove(0);
        let wphi = apply_w(engine, &phi, &[t], tol)?.remove(0);
        let before = inner(&psi, &(eta * &phi));
        let after = inner(&wpsi, &(eta * &wphi));
        drift = drift.nan_max((after - before).norm());
        let back = eta * apply_w_adjoint(engine, &(eta * &wpsi), t, tol)?;
        inverse = inverse.nan_max(vec_norm(&(back - &psi)));
        leakage = leakage
            .nan_max(model.basis.top_sector_weight(&wpsi))
            .nan_max(model.basis.top_sector_weight(&wphi));
    }
    let ctx = |r: Report| {
        r.with("t", t)
            .with("tol", tol)
            .with("pairs", pairs)
            .with("seed", seed)
            .with("sector", sector)
    };
    Ok(vec![
        ctx(Report::new("eta_pairing_drift", drift, ETA_DRIFT_TOL)),
        ctx(Report::new("eta_inverse", inverse, ETA_DRIFT_TOL)),
        ctx(Report::new("top_sector_leakage", leakage, LEAKAGE_WARN).with("photon_cap", model.config.photon_cap)),
    ])
}

/// Algebraic checks of the building blocks: γ anticommutators, spinor
/// orthogonality and completeness, polarization completeness.
pub fn structure_reports(model: &QedModel) -> Result<Vec<Report>> {
    let g = gamma_matrices();
    let mut clifford = 0.0f64;
    for mu in 0..4 {
        for nu in 0..4 {
            let mut d = anticommutator(&g[mu], &g[nu]);
            if mu == nu {
                d -= CMat::identity(4, 4) * c(2.0 * METRIC[mu], 0.0);
            }
            clifford = clifford.nan_max(crate::linalg::max_abs(&d));
        }
    }
    let mut spinor = 0.0f64;
    for p in &model.fermion_grid.points {
        spinor = spinor.nan_max(spinor_defect(*p, model.config.mass)?);
    }
    let mut pol = 0.0f64;
    for k in &model.photon_grid.points {
        pol = pol.nan_max(polarization_defect(*k)?);
    }
    Ok(vec![
        Report::new("gamma_anticommutators", clifford, 0.0),
        Report::new("spinor_completeness", spinor, 1e-12),
        Report::new("polarization_completeness", pol, 1e-14),
    ])
}

/// Ladder algebra on the factor bases: CCR between every pair of photon
/// modes below the truncation edge, and CAR between every pair of fermion modes.
pub fn ladder_reports(model: &QedModel) -> Result<Vec<Report>> {
    let ph = model.photon_basis();
    let below = ph.below_top_projector().into_matrix();
    let n = ph.dim();
    let bosons = ph
        .spec()
        .bosons
        .iter()
        .map(|m| boson_ops(ph, &m.label))
        .collect::<Result<Vec<_>>>()?;
    let mut ccr = 0.0f64;
    for (i, (a, _)) in bosons.iter().enumerate() {
        for (j, (a2, ad2)) in bosons.iter().enumerate() {
            let mut d = commutator(a.matrix(), ad2.matrix());
            if i == j {
                d -= CMat::identity(n, n);
            }
            ccr = ccr.nan_max(spectral_norm(&(d * &below)));
            ccr = ccr.nan_max(crate::linalg::max_abs(&commutator(a.matrix(), a2.matrix())));
        }
    }
    let fe = model.fermion_basis();
    let n = fe.dim();
    let fermions = fe
        .spec()
        .fermions
        .iter()
        .map(|m| fermion_ops(fe, &m.label))
        .collect::<Result<Vec<_>>>()?;
    let mut car = 0.0f64;
    for (i, (b, bd)) in fermions.iter().enumerate() {
        for (j, (b2, bd2)) in fermions.iter().enumerate() {
            let mut d = anticommutator(b.matrix(), bd2.matrix());
            if i == j {
                d -= CMat::identity(n, n);
            }
            car = car
                .nan_max(crate::linalg::max_abs(&d))
                .nan_max(crate::linalg::max_abs(&anticommutator(b.matrix(), b2.matrix())))
                .nan_max(crate::linalg::max_abs(&anticommutator(bd.matrix(), bd2.matrix())));
        }
    }
    Ok(vec![
        Report::new("ccr_below_cap", ccr, 1e-14).with("photon_modes", bosons.len()),
        Report::new("car", car, 0.0).with("fermion_modes", fermions.len()),
    ])
}

/// Largest defect among `u*u = v*v = E`, `u*v = 0`, the eigen-equations, and `Σ(uu* + vv*) = E·I`.
pub fn spinor_defect(p: [f64; 3], mass: f64) -> Result<f64> {
    let s = dirac_spinors(p, mass)?;
    let a = alpha_matrices();
    let g = gamma_matrices();
    let h = &a[1] * c(p[0], 0.0) + &a[2] * c(p[1], 0.0) + &a[3] * c(p[2], 0.0) + &g[0] * c(mass, 0.0);
    let e = s.energy;
    let mut worst = 0.0f64;
    let mut sum = CMat::zeros(4, 4);
    for i in 0..2 {
        worst = worst
            .nan_max(vec_norm(&(&h * &s.u[i] - &s.u[i] * c(e, 0.0))) / e)
            .nan_max(vec_norm(&(&h * &s.v[i] + &s.v[i] * c(e, 0.0))) / e);
        for j in 0..2 {
            let delta = if i == j { e } else { 0.0 };
            worst = worst
                .nan_max((inner(&s.u[i], &s.u[j]) - delta).norm() / e)
                .nan_max((inner(&s.v[i], &s.v[j]) - delta).norm() / e)
                .nan_max(inner(&s.u[i], &s.v[j]).norm() / e);
        }
        sum += &s.u[i] * s.u[i].adjoint() + &s.v[i] * s.v[i].adjoint();
    }
    Ok(worst.nan_max(crate::linalg::max_abs(&(sum - CMat::identity(4, 4) * c(e, 0.0))) / e))
}

/// `max |Σ_{λ} e^{(λ)}_μ g_λλ e^{(λ)}_ν − g_μν|`.
pub fn polarization_defect(k: [f64; 3]) -> Result<f64> {
    let e = polarization_vectors(k)?;
    let mut worst = 0.0f64;
    for mu in 0..4 {
        for nu in 0..4 {
            let s: f64 = (0..4).map(|l| e[l][mu] * METRIC[l] * e[l][nu]).sum();
            let target = if mu == nu { METRIC[mu] } else { 0.0 };
            worst = worst.nan_max((s - target).abs());
        }
    }
    Ok(worst)
}
