//! Seeded random graded models that satisfy the grading hypotheses by construction.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graded::{relative_bound_constant, GradedSpace, LinOp};
use crate::linalg::{spectral_norm, CMat, C64};

/// Kind of interaction to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    NonNormal,
    Hermitian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelSpec {
    pub dim: usize,
    /// Target grade shift; the generated `H1` attains it exactly.
    pub shift: u32,
    pub coupling: Coupling,
    /// Target relative bound `C` of `H1`.
    pub rel_bound: f64,
    /// Target spectral norm of `H0`.
    pub free_scale: f64,
}

#[derive(Debug, Clone)]
pub struct RandomModel {
    pub seed: u64,
    pub spec: ModelSpec,
    pub h0: LinOp,
    pub h1: LinOp,
}

fn gaussian(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Draws a model: integer grades in `0..=g_max`, `H0` Hermitian and block
/// diagonal by grade, `H1` supported on entries with `|g_j − g_k| ≤ shift`.
pub fn random_model(seed: u64, spec: ModelSpec) -> Result<RandomModel> {
    assert!(spec.dim >= 2, "random models need dim >= 2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = spec.shift as usize;
    let g_max = b + rng.random_range(0..=3usize);
    let mut grades: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(0..=g_max) as f64).collect();
    grades[0] = 0.0;
    grades[1] = b as f64;
    grades.sort_by(|a, c| a.partial_cmp(c).unwrap());
    let space = Arc::new(GradedSpace::new(grades.clone())?);
    let n = spec.dim;

    let mut h0 = CMat::zeros(n, n);
    for k in 0..n {
        for j in 0..=k {
            if grades[j] == grades[k] {
                let z = if j == k {
                    C64::new(gaussian(&mut rng).re, 0.0)
                } else {
                    gaussian(&mut rng)
                };
                h0[(j, k)] = z;
                h0[(k, j)] = z.conj();
            }
        }
    }
    let norm0 = spectral_norm(&h0);
    if norm0 > 0.0 {
        h0.scale_mut(spec.free_scale / norm0);
    }

    let mut h1 = CMat::zeros(n, n);
    for k in 0..n {
        for j in 0..n {
            if (grades[j] - grades[k]).abs() <= b as f64 {
                h1[(j, k)] = gaussian(&mut rng);
            }
        }
    }
    if spec.coupling == Coupling::Hermitian {
        h1 = (&h1 + h1.adjoint()).scale(0.5);
    }
    let h1 = LinOp::new(space.clone(), h1)?;
    let c = relative_bound_constant(&h1);
    let h1 = h1.scale(C64::new(spec.rel_bound / c, 0.0));
    Ok(RandomModel {
        seed,
        spec,
        h0: LinOp::new(space, h0)?,
        h1,
    })
}

/// `count` models with dims in 4..=64, shifts in {1, 2, 3}, drawn from one seed.
pub fn fleet(seed: u64, count: usize, coupling: Option<Coupling>) -> Result<Vec<RandomModel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let spec = ModelSpec {
                dim: rng.random_range(4..=64),
                shift: rng.random_range(1..=3),
                coupling: coupling.unwrap_or(if k % 2 == 0 {
                    Coupling::NonNormal
                } else {
                    Coupling::Hermitian
                }),
                rel_bound: rng.random_range(0.3..0.6),
                free_scale: rng.random_range(0.5..1.5),
            };
            random_model(rng.random(), spec)
        })
        .collect()
}
