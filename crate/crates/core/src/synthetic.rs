//! Seeded random smooth fields and sums for randomized verification.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fields::{lipschitz_constant, Grid, GridField};
use crate::sums::{LipschitzSum, RegularSum, SumTerm};

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for trial `k` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, k: u64) -> SeededRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k + 1);
    r
}

/// `Σ_m a_m sin(2π k_m·x + φ_m)` with integer frequencies `|k_m| <= 2`.
#[derive(Clone, Debug)]
pub struct TrigPolynomial {
    modes: Vec<(Vec<f64>, f64, f64)>,
    offset: f64,
}

impl TrigPolynomial {
    pub fn random(d: usize, modes: usize, amplitude: f64, rng: &mut impl Rng) -> Self {
        let modes = (0..modes)
            .map(|_| {
                let k: Vec<f64> = (0..d).map(|_| f64::from(rng.gen_range(-2i32..=2))).collect();
                (k, amplitude * rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI))
            })
            .collect();
        Self {
            modes,
            offset: rng.gen_range(-0.5..0.5),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.offset
            + self
                .modes
                .iter()
                .map(|(k, a, phase)| {
                    let t: f64 = k.iter().zip(x).map(|(ki, xi)| ki * xi).sum();
                    a * (2.0 * PI * t + phase).sin()
                })
                .sum::<f64>()
    }
}

/// Scalar field with sup norm and Lipschitz constant at most 1.
pub fn random_scalar(grid: &Grid, rng: &mut impl Rng) -> GridField {
    let p = TrigPolynomial::random(grid.dim(), 3, 0.2, rng);
    let f = GridField::scalar_fn(grid.clone(), |x| p.eval(x));
    let norm = lipschitz_constant(&f).max(f.sup_norms()[0]);
    if norm > 1.0 {
        f.scaled(1.0 / norm)
    } else {
        f
    }
}

/// `x ↦ A x + b + trigonometric perturbation`, rescaled so that every component
/// has Lipschitz constant at most `lip_max`.
pub fn random_smooth_map(grid: &Grid, lip_max: f64, rng: &mut impl Rng) -> GridField {
    let d = grid.dim();
    let a: Vec<f64> = (0..d * d)
        .map(|k| if k / d == k % d { 1.0 } else { 0.0 } + rng.gen_range(-0.5..0.5))
        .collect();
    let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let pert: Vec<TrigPolynomial> = (0..d).map(|_| TrigPolynomial::random(d, 2, 0.05, rng)).collect();
    let f = GridField::from_fn(grid.clone(), d, |x, o| {
        for j in 0..d {
            o[j] = b[j] + (0..d).map(|k| a[j * d + k] * x[k]).sum::<f64>() + pert[j].eval(x);
        }
    });
    let lip = lipschitz_constant(&f);
    if lip > lip_max {
        f.scaled(lip_max / lip)
    } else {
        f
    }
}

/// `map + δ · perturbation`, keeping the Lipschitz bound `lip_max`.
pub fn perturbed_map(map: &GridField, delta: f64, lip_max: f64, rng: &mut impl Rng) -> GridField {
    let d = map.grid().dim();
    let pert: Vec<TrigPolynomial> = (0..map.ncomp()).map(|_| TrigPolynomial::random(d, 2, 1.0, rng)).collect();
    let grid = map.grid().clone();
    let mut out = map.clone();
    let ncomp = map.ncomp();
    for k in 0..grid.node_count() {
        let x = grid.node_coords(&grid.node_multi_index(k));
        for (j, p) in pert.iter().enumerate() {
            out.values_mut()[k * ncomp + j] += delta * p.eval(&x);
        }
    }
    let lip = lipschitz_constant(&out);
    if lip > lip_max {
        out.scaled(lip_max / lip)
    } else {
        out
    }
}

/// Random sum of `n` smooth terms with Lipschitz constants at most 2.
pub fn random_sum(grid: &Grid, n: usize, rng: &mut impl Rng) -> LipschitzSum {
    let terms = (0..n)
        .map(|_| SumTerm {
            f: random_scalar(grid, rng).scaled(rng.gen_range(0.5..2.0)),
            pi: random_smooth_map(grid, 2.0, rng),
        })
        .collect();
    LipschitzSum::new(grid.clone(), terms).expect("terms built on the grid")
}

/// Regular sum with `n` terms and budget exactly `s` (up to rounding).
pub fn random_regular_sum(grid: &Grid, n: usize, s: f64, rng: &mut impl Rng) -> Result<RegularSum> {
    let reg = random_sum(grid, n, rng).regularize();
    if s <= 0.0 {
        let zero = LipschitzSum::new(
            grid.clone(),
            (0..n)
                .map(|_| SumTerm {
                    f: GridField::zeros(grid.clone(), 1),
                    pi: GridField::zeros(grid.clone(), grid.dim()),
                })
                .collect(),
        )?;
        return RegularSum::new(zero, vec![0.0; n], 0.0);
    }
    let current = reg.budget();
    Ok(reg.scaled((s / current).powf(1.0 / grid.dim() as f64)))
}
