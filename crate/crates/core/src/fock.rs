//! Truncated Fock spaces in the occupation-number basis.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graded::{GradedSpace, LinOp};
use crate::linalg::{CMat, CVec, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BosonMode {
    pub label: String,
    pub energy: f64,
    pub cutoff: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FermionMode {
    pub label: String,
    pub energy: f64,
}

/// Declared modes. Fermion sign conventions follow declaration order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeSpec {
    #[serde(default)]
    pub bosons: Vec<BosonMode>,
    #[serde(default)]
    pub fermions: Vec<FermionMode>,
}

/// Model document: the mode declarations plus the labels of indefinite-metric modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FockConfig {
    #[serde(default)]
    pub bosons: Vec<BosonMode>,
    #[serde(default)]
    pub fermions: Vec<FermionMode>,
    #[serde(default)]
    pub scalar_modes: Vec<String>,
    /// Optional cap on the total boson number.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_cap: Option<u32>,
}

impl FockConfig {
    pub fn spec(&self) -> ModeSpec {
        ModeSpec {
            bosons: self.bosons.clone(),
            fermions: self.fermions.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Boson(usize),
    Fermion(usize),
}

/// Enumerated occupation basis, lexicographic with bosons first.
///
/// Grades are total boson occupation. With a total cap only tuples whose
/// boson occupations sum to at most the cap are kept.
#[derive(Debug, Clone)]
pub struct FockBasis {
    spec: ModeSpec,
    total_cap: Option<u32>,
    states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
    labels: HashMap<String, Slot>,
    space: Arc<GradedSpace>,
}

impl FockBasis {
    pub fn new(spec: ModeSpec) -> Result<Self> {
        Self::build(spec, None)
    }

    pub fn with_total_cap(spec: ModeSpec, cap: u32) -> Result<Self> {
        Self::build(spec, Some(cap))
    }

    fn build(spec: ModeSpec, total_cap: Option<u32>) -> Result<Self> {
        let mut labels = HashMap::new();
        for (k, m) in spec.bosons.iter().enumerate() {
            if m.cutoff < 1 {
                return Err(Error::Malformed(format!("boson mode `{}` needs cutoff >= 1", m.label)));
            }
            if !(m.energy >= 0.0 && m.energy.is_finite()) {
                return Err(Error::Malformed(format!(
                    "mode `{}` needs a finite energy >= 0",
                    m.label
                )));
            }
            if labels.insert(m.label.clone(), Slot::Boson(k)).is_some() {
                return Err(Error::Malformed(format!("duplicate mode label `{}`", m.label)));
            }
        }
        for (k, m) in spec.fermions.iter().enumerate() {
            if !(m.energy >= 0.0 && m.energy.is_finite()) {
                return Err(Error::Malformed(format!(
                    "mode `{}` needs a finite energy >= 0",
                    m.label
                )));
            }
            if labels.insert(m.label.clone(), Slot::Fermion(k)).is_some() {
                return Err(Error::Malformed(format!("duplicate mode label `{}`", m.label)));
            }
        }
        let limits: Vec<u32> = spec
            .bosons
            .iter()
            .map(|m| m.cutoff)
            .chain(spec.fermions.iter().map(|_| 1))
            .collect();
        let nb = spec.bosons.len();
        let mut states = Vec::new();
        let mut cur = vec![0u32; limits.len()];
        enumerate(&limits, nb, total_cap, 0, 0, &mut cur, &mut states);
        let index = states.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
        let grades = states.iter().map(|s| s[..nb].iter().sum::<u32>() as f64).collect();
        Ok(FockBasis {
            spec,
            total_cap,
            states,
            index,
            labels,
            space: Arc::new(GradedSpace::new(grades)?),
        })
    }

    pub fn spec(&self) -> &ModeSpec {
        &self.spec
    }

    pub fn total_cap(&self) -> Option<u32> {
        self.total_cap
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Vec<u32>] {
        &self.states
    }

    pub fn index_of(&self, occupation: &[u32]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    pub fn space(&self) -> &Arc<GradedSpace> {
        &self.space
    }

    fn boson_slot(&self, label: &str) -> Result<usize> {
        match self.labels.get(label) {
            Some(Slot::Boson(k)) => Ok(*k),
            _ => Err(Error::UnknownMode(label.to_string())),
        }
    }

    fn fermion_slot(&self, label: &str) -> Result<usize> {
        match self.labels.get(label) {
            Some(Slot::Fermion(k)) => Ok(self.spec.bosons.len() + *k),
            _ => Err(Error::UnknownMode(label.to_string())),
        }
    }

    /// Whether a state sits at a truncation edge (some mode at its cutoff, or
    /// the total boson number at the cap).
    pub fn is_top(&self, state: usize) -> bool {
        let s = &self.states[state];
        let nb = self.spec.bosons.len();
        let at_mode_cutoff = self.spec.bosons.iter().zip(s).any(|(m, n)| *n == m.cutoff);
        let at_cap = self.total_cap.is_some_and(|cap| s[..nb].iter().sum::<u32>() == cap);
        at_mode_cutoff || at_cap
    }

    /// Diagonal projector onto states strictly below every truncation edge.
    pub fn below_top_projector(&self) -> LinOp {
        let d: Vec<C64> = (0..self.dim())
            .map(|k| C64::new(if self.is_top(k) { 0.0 } else { 1.0 }, 0.0))
            .collect();
        LinOp::from_diagonal(self.space.clone(), &d).expect("matching length")
    }

    /// Fraction of `‖v‖²` carried by truncation-edge states.
    pub fn top_sector_weight(&self, v: &CVec) -> f64 {
        let total: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let top: f64 = v
            .iter()
            .enumerate()
            .filter(|(k, _)| self.is_top(*k))
            .map(|(_, z)| z.norm_sqr())
            .sum();
        top / total
    }
}

/// Weight above which truncation leakage is flagged.
pub const LEAKAGE_WARN: f64 = 1e-6;

fn enumerate(
    limits: &[u32],
    nb: usize,
    cap: Option<u32>,
    pos: usize,
    used: u32,
    cur: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
) {
    if pos == limits.len() {
        out.push(cur.clone());
        return;
    }
    let mut hi = limits[pos];
    if pos < nb {
        if let Some(c) = cap {
            hi = hi.min(c - used.min(c));
        }
    }
    for n in 0..=hi {
        cur[pos] = n;
        let next_used = if pos < nb { used + n } else { used };
        enumerate(limits, nb, cap, pos + 1, next_used, cur, out);
    }
    cur[pos] = 0;
}

/// Annihilator and creator of a boson mode (`√n` weights).
pub fn boson_ops(basis: &FockBasis, label: &str) -> Result<(LinOp, LinOp)> {
    let slot = basis.boson_slot(label)?;
    let n = basis.dim();
    let mut a = CMat::zeros(n, n);
    for (k, s) in basis.states.iter().enumerate() {
        let occ = s[slot];
        if occ > 0 {
            let mut t = s.clone();
            t[slot] -= 1;
            let j = basis.index[&t];
            a[(j, k)] = C64::new((occ as f64).sqrt(), 0.0);
        }
    }
    let a = LinOp::new(basis.space.clone(), a)?;
    let ad = a.adjoint();
    Ok((a, ad))
}

/// Annihilator and creator of a fermion mode with Jordan–Wigner signs
/// `(−1)^{occupied fermion modes declared earlier}`.
pub fn fermion_ops(basis: &FockBasis, label: &str) -> Result<(LinOp, LinOp)> {
    let slot = basis.fermion_slot(label)?;
    let first = basis.spec.bosons.len();
    let n = basis.dim();
    let mut b = CMat::zeros(n, n);
    for (k, s) in basis.states.iter().enumerate() {
        if s[slot] == 1 {
            let mut t = s.clone();
            t[slot] = 0;
            let parity: u32 = s[first..slot].iter().sum();
            let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
            b[(basis.index[&t], k)] = C64::new(sign, 0.0);
        }
    }
    let b = LinOp::new(basis.space.clone(), b)?;
    let bd = b.adjoint();
    Ok((b, bd))
}

/// `dΓ(h)` for a one-particle operator diagonal in the modes: energies listed
/// bosons first, then fermions, in declaration order.
pub fn second_quantize(basis: &FockBasis, energies: &[f64]) -> Result<LinOp> {
    let modes = basis.spec.bosons.len() + basis.spec.fermions.len();
    if energies.len() != modes {
        return Err(Error::DimensionMismatch {
            expected: modes,
            found: energies.len(),
        });
    }
    let d: Vec<C64> = basis
        .states
        .iter()
        .map(|s| C64::new(s.iter().zip(energies).map(|(n, e)| *n as f64 * e).sum(), 0.0))
        .collect();
    LinOp::from_diagonal(basis.space.clone(), &d)
}

/// `dΓ` of the declared mode energies.
pub fn free_hamiltonian(basis: &FockBasis) -> LinOp {
    let e: Vec<f64> = basis
        .spec
        .bosons
        .iter()
        .map(|m| m.energy)
        .chain(basis.spec.fermions.iter().map(|m| m.energy))
        .collect();
    second_quantize(basis, &e).expect("one energy per mode")
}

/// `η = (−1)^{occupation of scalar modes}` on the occupation basis.
pub fn eta_metric(basis: &FockBasis, scalar_modes: &[String]) -> Result<LinOp> {
    let slots: HashSet<usize> = scalar_modes
        .iter()
        .map(|l| basis.boson_slot(l))
        .collect::<Result<_>>()?;
    let d: Vec<C64> = basis
        .states
        .iter()
        .map(|s| {
            let occ: u32 = slots.iter().map(|&k| s[k]).sum();
            C64::new(if occ % 2 == 0 { 1.0 } else { -1.0 }, 0.0)
        })
        .collect();
    LinOp::from_diagonal(basis.space.clone(), &d)
}
