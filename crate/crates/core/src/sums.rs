//! Finite formal Lipschitz sums `Σ (f_i, π_i)` on a common grid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    self, boundary_sup_diff, c_d, lipschitz_constant, lipschitz_constants, translated_comparison,
    weighted_det_volume, CellField, EstimateReport, Grid, GridField,
};
use crate::hierarchy::AdjacentPair;
use crate::linalg;
use crate::rational;

/// Grid-realized norms of one term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermNorms {
    pub f_lip: f64,
    pub f_sup: f64,
    pub pi_lips: Vec<f64>,
}

impl TermNorms {
    pub fn measure(f: &GridField, pi: &GridField) -> Self {
        Self {
            f_lip: lipschitz_constant(f),
            f_sup: f.sup_norms()[0],
            pi_lips: lipschitz_constants(pi),
        }
    }

    /// `max{Lip f, ∥f∥_∞}`
    pub fn coefficient_norm(&self) -> f64 {
        self.f_lip.max(self.f_sup)
    }

    /// `max{Lip f, ∥f∥_∞} Π_j Lip π^j`
    pub fn s_value(&self) -> f64 {
        self.coefficient_norm() * self.pi_lips.iter().product::<f64>()
    }

    fn close_to(&self, other: &TermNorms, tol: f64) -> bool {
        (self.f_lip - other.f_lip).abs() <= tol
            && (self.f_sup - other.f_sup).abs() <= tol
            && self.pi_lips.len() == other.pi_lips.len()
            && self.pi_lips.iter().zip(&other.pi_lips).all(|(a, b)| (a - b).abs() <= tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SumTerm {
    pub f: GridField,
    pub pi: GridField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzSum {
    grid: Grid,
    terms: Vec<SumTerm>,
    norms: Vec<TermNorms>,
}

impl LipschitzSum {
    pub fn new(grid: Grid, terms: Vec<SumTerm>) -> Result<Self> {
        let d = grid.dim();
        for t in &terms {
            if t.f.grid() != &grid || t.pi.grid() != &grid {
                return Err(Error::GridMismatch("sum terms must share one grid".into()));
            }
            if t.f.ncomp() != 1 {
                return Err(Error::DimensionMismatch { expected: 1, got: t.f.ncomp() });
            }
            if t.pi.ncomp() != d {
                return Err(Error::DimensionMismatch { expected: d, got: t.pi.ncomp() });
            }
        }
        let norms = terms.iter().map(|t| TermNorms::measure(&t.f, &t.pi)).collect();
        Ok(Self { grid, terms, norms })
    }

    pub fn empty(grid: Grid) -> Self {
        Self {
            grid,
            terms: Vec::new(),
            norms: Vec::new(),
        }
    }

    /// Builds a sum and checks that `recorded` matches the grid-realized norms
    /// within `1e-9`.
    pub fn with_recorded_norms(grid: Grid, terms: Vec<SumTerm>, recorded: &[TermNorms]) -> Result<Self> {
        let sum = Self::new(grid, terms)?;
        if recorded.len() != sum.norms.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.norms.len(),
                got: recorded.len(),
            });
        }
        for (i, (a, b)) in sum.norms.iter().zip(recorded).enumerate() {
            if !a.close_to(b, 1e-9) {
                return Err(Error::Parse(format!(
                    "recorded norms of term {i} do not match the field data: {b:?} vs {a:?}"
                )));
            }
        }
        Ok(sum)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn terms(&self) -> &[SumTerm] {
        &self.terms
    }

    pub fn norms(&self) -> &[TermNorms] {
        &self.norms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `s(Σ (f_i, π_i)) = Σ_i max{Lip f_i, ∥f_i∥_∞} Π_j Lip π_i^j`
    pub fn s_value(&self) -> f64 {
        self.norms.iter().map(TermNorms::s_value).sum()
    }

    /// Cell-wise `Σ_i f_i det Dπ_i`, `f_i` taken at cell centres.
    pub fn em_field(&self) -> CellField {
        let grid = &self.grid;
        let d = grid.dim();
        let mut jac = vec![0.0; d * d];
        let mut values = vec![0.0; grid.cell_count()];
        for t in &self.terms {
            for (k, v) in values.iter_mut().enumerate() {
                let cell = grid.cell_multi_index(k);
                t.pi.cell_jacobian(&cell, &mut jac);
                *v += t.f.cell_center_value(&cell, 0) * linalg::det(&jac, d);
            }
        }
        CellField::new(grid.clone(), values).expect("one value per cell")
    }

    /// Rescales every term to regular form without changing `f_i det Dπ_i`:
    /// `f_i = g_i / a_i`, `π_i^j = (κ_i^j − κ_i^j(0)) L_i / Lip κ_i^j` with
    /// `a_i = max{Lip g_i, ∥g_i∥_∞}` and `L_i = (a_i Π_j Lip κ_i^j)^(1/d)`.
    /// Terms with `a_i = 0` or a constant component become the zero pair.
    /// The base point `0` is the lower corner of the grid.
    pub fn regularize(&self) -> RegularSum {
        let d = self.dim();
        let mut terms = Vec::with_capacity(self.terms.len());
        let mut ls = Vec::with_capacity(self.terms.len());
        for (t, n) in self.terms.iter().zip(&self.norms) {
            let a = n.coefficient_norm();
            if a == 0.0 || n.pi_lips.iter().any(|&l| l == 0.0) {
                terms.push(SumTerm {
                    f: GridField::zeros(self.grid.clone(), 1),
                    pi: GridField::zeros(self.grid.clone(), d),
                });
                ls.push(0.0);
                continue;
            }
            let l = (a * n.pi_lips.iter().product::<f64>()).powf(1.0 / d as f64);
            let f = t.f.map(|v| v / a);
            let origin: Vec<f64> = (0..d).map(|j| t.pi.at(0, j)).collect();
            let scale: Vec<f64> = n.pi_lips.iter().map(|lip| l / lip).collect();
            let mut pi = t.pi.clone();
            for chunk in pi.values_mut().chunks_mut(d) {
                for j in 0..d {
                    chunk[j] = (chunk[j] - origin[j]) * scale[j];
                }
            }
            terms.push(SumTerm { f, pi });
            ls.push(l);
        }
        let sum = LipschitzSum::new(self.grid.clone(), terms).expect("same grid and shapes");
        RegularSum { sum, l: ls }
    }
}

/// A sum with `max{Lip f_i, ∥f_i∥_∞} = 1`, `Lip π_i^j = L_i` for all `j` and
/// `π_i(0) = 0`, or the zero pair with `L_i = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularSum {
    sum: LipschitzSum,
    l: Vec<f64>,
}

impl RegularSum {
    /// Checks the regularity conditions within `tol`.
    pub fn new(sum: LipschitzSum, l: Vec<f64>, tol: f64) -> Result<Self> {
        if l.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                got: l.len(),
            });
        }
        let reg = Self { sum, l };
        if let Some(msg) = reg.regularity_defect(tol) {
            return Err(Error::InvalidParams(msg));
        }
        Ok(reg)
    }

    pub fn empty(grid: Grid) -> Self {
        Self {
            sum: LipschitzSum::empty(grid),
            l: Vec::new(),
        }
    }

    /// First violated regularity condition, if any.
    pub fn regularity_defect(&self, tol: f64) -> Option<String> {
        let d = self.sum.dim();
        for (i, ((t, n), &l)) in self.sum.terms.iter().zip(&self.sum.norms).zip(&self.l).enumerate() {
            let origin_ok = (0..d).all(|j| t.pi.at(0, j).abs() <= tol);
            if l == 0.0 {
                let zero = t.f.values().iter().all(|&v| v == 0.0) && t.pi.values().iter().all(|&v| v == 0.0);
                if !zero {
                    return Some(format!("term {i} has L = 0 but is not the zero pair"));
                }
                continue;
            }
            if (n.coefficient_norm() - 1.0).abs() > tol {
                return Some(format!("term {i}: coefficient norm {} is not 1", n.coefficient_norm()));
            }
            if let Some(lip) = n.pi_lips.iter().find(|&&lip| (lip - l).abs() > tol * l.max(1.0)) {
                return Some(format!("term {i}: component Lipschitz constant {lip} differs from L = {l}"));
            }
            if !origin_ok {
                return Some(format!("term {i} does not vanish at the base point"));
            }
        }
        None
    }

    pub fn sum(&self) -> &LipschitzSum {
        &self.sum
    }

    pub fn l(&self) -> &[f64] {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.sum.dim()
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    /// `S = Σ_i L_i^d`
    pub fn budget(&self) -> f64 {
        let d = self.dim() as i32;
        self.l.iter().map(|l| l.powi(d)).sum()
    }

    /// Multiplies every `π_i` by `t`, so `L_i` becomes `t L_i` and `S` becomes `t^d S`.
    pub fn scaled(&self, t: f64) -> RegularSum {
        let terms = self
            .sum
            .terms
            .iter()
            .map(|term| SumTerm {
                f: term.f.clone(),
                pi: term.pi.scaled(t),
            })
            .collect();
        let sum = LipschitzSum::new(self.sum.grid.clone(), terms).expect("same shapes");
        let l = self.l.iter().map(|l| l * t).collect();
        RegularSum { sum, l }
    }

    /// `√(1 + dS)`, the upper biLipschitz constant of the embedding.
    pub fn embedding_bound(&self) -> f64 {
        (1.0 + self.dim() as f64 * self.budget()).sqrt()
    }

    /// `h(x) = (x, L_1^(d/2−1) π_1(x), ..., L_n^(d/2−1) π_n(x))`.
    pub fn embed_h(&self) -> EmbeddedMap {
        let d = self.dim();
        let weights = self
            .l
            .iter()
            .map(|&l| if l == 0.0 { 0.0 } else { l.powf(d as f64 / 2.0 - 1.0) })
            .collect();
        EmbeddedMap {
            sum: self.clone(),
            weights,
        }
    }

    /// `W_i = (1/K)(π_i(r(R)) − π_i(l(R)))` for the parent rectangle of `pair`.
    pub fn translation_offsets(&self, pair: &AdjacentPair) -> Vec<Vec<f64>> {
        let left = rational_point(&pair.parent.left());
        let right = rational_point(&pair.parent.right());
        let k = f64::from(pair.parent.factor());
        self.sum
            .terms
            .iter()
            .map(|t| {
                let a = t.pi.eval(&left);
                let b = t.pi.eval(&right);
                a.iter().zip(&b).map(|(x, y)| (y - x) / k).collect()
            })
            .collect()
    }

    /// Per term `∥π_i − π̃_i∥_{ℓ∞(∂Q)}` on the left cube of `pair`, where
    /// `π̃_i(x) = π_i(x + τ) − W_i`.
    pub fn translated_sup_diffs(&self, pair: &AdjacentPair, w: &[Vec<f64>]) -> Result<Vec<f64>> {
        if w.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: w.len(),
            });
        }
        let q = pair.left.bounds();
        self.sum
            .terms
            .iter()
            .zip(w)
            .map(|(t, wi)| {
                let tilde = translated_comparison(&t.pi, pair, wi)?;
                let own = t.pi.restrict(&q)?;
                boundary_sup_diff(&own, &tilde, &q)
            })
            .collect()
    }

    /// Estimate on an adjacent pair of side `r`:
    /// `|∫_Q Σ f_i det Dπ_i − ∫_Q' Σ f_i det Dπ_i| <= r^(d+1)(√d+1)S
    ///  + r^(d−1) c_d √S √(Σ_i L_i^(d−2) ∥π_i − π̃_i∥²_{ℓ∞(∂Q)})`.
    pub fn check_sum_estimate(&self, pair: &AdjacentPair, w: &[Vec<f64>]) -> Result<EstimateReport> {
        let d = self.dim() as i32;
        let r = rational::to_f64(pair.side());
        let (q, q2) = (pair.left.bounds(), pair.right.bounds());
        let mut left = 0.0;
        let mut right = 0.0;
        for t in &self.sum.terms {
            left += weighted_det_volume(Some(&t.f), &t.pi, &q)?;
            right += weighted_det_volume(Some(&t.f), &t.pi, &q2)?;
        }
        let sups = self.translated_sup_diffs(pair, w)?;
        let weighted: f64 = self
            .l
            .iter()
            .zip(&sups)
            .map(|(&l, s)| if l == 0.0 { 0.0 } else { l.powi(d - 2) * s * s })
            .sum();
        let s = self.budget();
        let rhs = r.powi(d + 1) * (f64::from(d).sqrt() + 1.0) * s
            + r.powi(d - 1) * c_d(d as usize) * s.sqrt() * weighted.sqrt();
        Ok(EstimateReport::new(
            (left - right).abs(),
            rhs,
            format!("sum estimate on {} / {}", pair.left.id(), pair.right.id()),
        ))
    }
}

fn rational_point(x: &[rational::Rational]) -> Vec<f64> {
    x.iter().map(rational::to_f64).collect()
}

/// `h: R^d -> R^(d + d n)` built from a regular sum; the `π_i` are evaluated
/// by piecewise-linear interpolation of their samples.
#[derive(Clone, Debug)]
pub struct EmbeddedMap {
    sum: RegularSum,
    weights: Vec<f64>,
}

impl EmbeddedMap {
    pub fn source(&self) -> &RegularSum {
        &self.sum
    }

    pub fn dim(&self) -> usize {
        self.sum.dim()
    }

    pub fn target_dim(&self) -> usize {
        self.dim() * (1 + self.sum.len())
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.target_dim());
        out.extend_from_slice(x);
        let mut buf = vec![0.0; d];
        for (t, &w) in self.sum.sum.terms.iter().zip(&self.weights) {
            t.pi.interpolate(x, &mut buf);
            out.extend(buf.iter().map(|v| w * v));
        }
        out
    }

    /// `√(1 + dS)`
    pub fn upper_bound(&self) -> f64 {
        self.sum.embedding_bound()
    }
}

/// Builds the `k+1` maps `π_j` with `π_j^j = (−1)^(j−1) ω_{I^j}` and
/// `π_j^i = x_i` for `i ≠ j`, so that `Σ_j det Dπ_j = Σ_j (−1)^(j−1) ∂_j ω_{I^j}`,
/// and returns them as a sum with unit coefficients together with the residual
/// `max over cells |Σ_j det Dπ_j − η_1|`, `η_1` taken at cell centres.
pub fn exterior_to_jacobian(omega: &[GridField], eta1: &GridField) -> Result<(LipschitzSum, f64)> {
    let first = omega
        .first()
        .ok_or_else(|| Error::Degenerate("no form components".into()))?;
    let grid = first.grid().clone();
    let d = grid.dim();
    if omega.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: omega.len(),
        });
    }
    if d < 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: d });
    }
    eta1.same_grid(first)?;
    let mut terms = Vec::with_capacity(d);
    for (j, w) in omega.iter().enumerate() {
        w.same_grid(first)?;
        if w.ncomp() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: w.ncomp() });
        }
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let coords = GridField::identity(grid.clone());
        let mut comps: Vec<GridField> = (0..d).map(|i| coords.component(i)).collect();
        comps[j] = w.scaled(sign);
        terms.push(SumTerm {
            f: GridField::scalar_fn(grid.clone(), |_| 1.0),
            pi: GridField::from_components(&comps)?,
        });
    }
    let sum = LipschitzSum::new(grid.clone(), terms)?;
    let em = sum.em_field();
    let residual = (0..grid.cell_count())
        .map(|k| (em.values()[k] - eta1.cell_center_value(&grid.cell_multi_index(k), 0)).abs())
        .fold(0.0, f64::max);
    Ok((sum, residual))
}

/// On-disk description of a sum: one binary field file per `f_i` and `π_i`
/// plus the recorded norms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SumManifest {
    pub grid: Grid,
    pub terms: Vec<ManifestTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestTerm {
    pub f: PathBuf,
    pub pi: PathBuf,
    pub norms: TermNorms,
}

/// Writes `sum.json` and the field files into `dir`.
pub fn write_sum(sum: &LipschitzSum, l: Option<&[f64]>, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut terms = Vec::new();
    for (i, (t, n)) in sum.terms.iter().zip(&sum.norms).enumerate() {
        let f = PathBuf::from(format!("term{i}_f.bin"));
        let pi = PathBuf::from(format!("term{i}_pi.bin"));
        fields::io::write_binary(&t.f, std::io::BufWriter::new(std::fs::File::create(dir.join(&f))?))?;
        fields::io::write_binary(&t.pi, std::io::BufWriter::new(std::fs::File::create(dir.join(&pi))?))?;
        terms.push(ManifestTerm { f, pi, norms: n.clone() });
    }
    let manifest = SumManifest {
        grid: sum.grid.clone(),
        terms,
        l: l.map(<[f64]>::to_vec),
    };
    let path = dir.join("sum.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Reads a manifest written by [`write_sum`]; field paths are relative to the
/// manifest's directory.
pub fn read_sum(manifest_path: &Path) -> Result<(LipschitzSum, Option<Vec<f64>>)> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: SumManifest = serde_json::from_str(&text)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut terms = Vec::new();
    let mut norms = Vec::new();
    for t in &manifest.terms {
        let f = fields::io::read_binary(std::io::BufReader::new(std::fs::File::open(dir.join(&t.f))?))?;
        let pi = fields::io::read_binary(std::io::BufReader::new(std::fs::File::open(dir.join(&t.pi))?))?;
        terms.push(SumTerm { f, pi });
        norms.push(t.norms.clone());
    }
    let sum = LipschitzSum::with_recorded_norms(manifest.grid, terms, &norms)?;
    Ok((sum, manifest.l))
}
