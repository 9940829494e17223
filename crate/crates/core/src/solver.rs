//! Projected gradient descent for `Σ f_i det Dπ_i ≈ ρ` under Lipschitz budgets,
//! and the depth-by-budget sweep built on it.
//!
//! The target `ρ` is a cell field. The model value on a cell is
//! `Σ_i f_i(centre) det J_i` with `J_i` the forward-difference Jacobian at the
//! cell's principal node, the same discretization `LipschitzSum::em_field` uses.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::fields::estimates::{cell_slope_sq, permutations};
use crate::fields::{for_each_index, lipschitz_constants, CellField, Grid, GridField};
use crate::hierarchy::{enumerate_adjacent_pairs, HierarchyParams, RatBox};
use crate::linalg;
use crate::rational;
use crate::registry::Registry;
use crate::sums::{LipschitzSum, SumTerm};
use crate::synthetic;

const PROJECTION_SLACK: f64 = 1e-6;
const LOCAL_PASSES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Registered solver name, `single` or `sum`.
    pub strategy: String,
    /// Number of terms for the `sum` strategy.
    pub n_terms: usize,
    pub max_iters: usize,
    /// First step, in units of `h^(2-d)`.
    pub initial_step: f64,
    pub step_growth: f64,
    pub step_shrink: f64,
    pub max_backtracks: usize,
    /// Stop once the L² residual is at most this.
    pub residual_target: f64,
    /// Stop once an accepted step improves the energy by less than this fraction.
    pub rel_tol: f64,
    /// Weight of the edge penalty `Σ max(0, |Δπ|/h − b)² h^d`.
    pub lipschitz_penalty: f64,
    /// Project onto the budget after every step.
    pub project: bool,
    /// Number of coarser grids (step doubled each time) solved first, each
    /// result prolonged to the next finer grid as its starting point.
    pub coarse_levels: usize,
    pub seed: u64,
    /// Sweep grid: cells per side of a cube of order `resolution_order`.
    pub cells_per_cube: usize,
    pub resolution_order: u32,
    /// Sweep window: this many order-0 cubes along the long axis.
    pub window_cubes: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            strategy: "single".into(),
            n_terms: 2,
            max_iters: 400,
            initial_step: 0.1,
            step_growth: 1.25,
            step_shrink: 0.5,
            max_backtracks: 30,
            residual_target: 1e-9,
            rel_tol: 1e-10,
            lipschitz_penalty: 0.0,
            project: true,
            coarse_levels: 3,
            seed: 0,
            cells_per_cube: 16,
            resolution_order: 1,
            window_cubes: 2,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(format!("solver: {msg}")));
        if self.n_terms == 0 {
            return bad("n_terms must be at least 1");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be positive");
        }
        if !(self.step_growth >= 1.0) {
            return bad("step_growth must be at least 1");
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return bad("step_shrink must lie in (0, 1)");
        }
        if !(self.residual_target >= 0.0) || !(self.rel_tol >= 0.0) {
            return bad("residual_target and rel_tol must be non-negative");
        }
        if !(self.lipschitz_penalty >= 0.0) {
            return bad("lipschitz_penalty must be non-negative");
        }
        if !self.project && self.lipschitz_penalty == 0.0 {
            return bad("without projection a positive lipschitz_penalty is required");
        }
        if self.cells_per_cube == 0 || self.window_cubes == 0 {
            return bad("cells_per_cube and window_cubes must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    pub strategy: String,
    /// `S`; the per-term component budget is `(S/n)^(1/d)`.
    pub budget: f64,
    pub term_budgets: Vec<f64>,
    pub residual_l2: f64,
    pub residual_sup: f64,
    /// Largest grid-realized Lipschitz constant over all `π_i` components.
    pub lip_achieved: f64,
    pub pi_lips: Vec<Vec<f64>>,
    pub s_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
    #[serde(skip)]
    pub solution: LipschitzSum,
}

/// `‖model − ρ‖` in L² (weighted by `h^d`) and sup over cells.
pub fn residuals(model: &CellField, rho: &CellField) -> (f64, f64) {
    let vol = rho.grid().cell_volume();
    let mut l2 = 0.0;
    let mut sup = 0.0f64;
    for (m, r) in model.values().iter().zip(rho.values()) {
        let e = m - r;
        l2 += e * e * vol;
        sup = sup.max(e.abs());
    }
    (l2.sqrt(), sup)
}

fn cell_bases(grid: &Grid) -> Vec<usize> {
    (0..grid.cell_count())
        .map(|k| grid.node_index(&grid.cell_multi_index(k)))
        .collect()
}

/// The energy `Σ_cells (Σ_i f_i det Dπ_i − ρ)² h^d + w Σ_edges max(0, |Δπ|/h − b)² h^d`.
struct Objective<'a> {
    grid: &'a Grid,
    bases: Vec<usize>,
    offsets: Vec<usize>,
    rho: &'a [f64],
    budgets: &'a [f64],
    penalty: f64,
}

impl<'a> Objective<'a> {
    fn new(rho: &'a CellField, budgets: &'a [f64], penalty: f64) -> Self {
        let grid = rho.grid();
        Self {
            grid,
            bases: cell_bases(grid),
            offsets: grid.corner_offsets(),
            rho: rho.values(),
            budgets,
            penalty,
        }
    }

    fn check(&self, terms: &[SumTerm]) -> Result<()> {
        if terms.len() != self.budgets.len() {
            return Err(Error::DimensionMismatch {
                expected: self.budgets.len(),
                got: terms.len(),
            });
        }
        for t in terms {
            if t.f.grid() != self.grid || t.pi.grid() != self.grid {
                return Err(Error::GridMismatch("terms and target live on different grids".into()));
            }
            if t.f.ncomp() != 1 || t.pi.ncomp() != self.grid.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.grid.dim(),
                    got: t.pi.ncomp(),
                });
            }
        }
        Ok(())
    }

    fn eval(&self, terms: &[SumTerm], mut grad: Option<&mut [SumTerm]>) -> f64 {
        let grid = self.grid;
        let d = grid.dim();
        let n = terms.len();
        let vol = grid.cell_volume();
        let inv_h = 1.0 / grid.h_f64();
        let strides = grid.strides();
        let corners = self.offsets.len() as f64;
        if let Some(g) = grad.as_deref_mut() {
            for t in g.iter_mut() {
                t.f.values_mut().fill(0.0);
                t.pi.values_mut().fill(0.0);
            }
        }
        let mut jac = vec![0.0; n * d * d];
        let mut dets = vec![0.0; n];
        let mut fc = vec![0.0; n];
        let mut cof = vec![0.0; d * d];
        let mut energy = 0.0;
        for (c, &base) in self.bases.iter().enumerate() {
            let mut model = 0.0;
            for (i, t) in terms.iter().enumerate() {
                let pv = t.pi.values();
                let m = &mut jac[i * d * d..(i + 1) * d * d];
                for j in 0..d {
                    let v0 = pv[base * d + j];
                    for a in 0..d {
                        m[j * d + a] = (pv[(base + strides[a]) * d + j] - v0) * inv_h;
                    }
                }
                dets[i] = linalg::det(m, d);
                let fv = t.f.values();
                fc[i] = self.offsets.iter().map(|o| fv[base + o]).sum::<f64>() / corners;
                model += fc[i] * dets[i];
            }
            let e = model - self.rho[c];
            energy += e * e * vol;
            if let Some(g) = grad.as_deref_mut() {
                let coef = 2.0 * e * vol;
                for i in 0..n {
                    let gf = g[i].f.values_mut();
                    let share = coef * dets[i] / corners;
                    for o in &self.offsets {
                        gf[base + o] += share;
                    }
                    linalg::cofactor(&jac[i * d * d..(i + 1) * d * d], d, &mut cof);
                    let s = coef * fc[i] * inv_h;
                    let gp = g[i].pi.values_mut();
                    for j in 0..d {
                        for a in 0..d {
                            let v = s * cof[j * d + a];
                            gp[(base + strides[a]) * d + j] += v;
                            gp[base * d + j] -= v;
                        }
                    }
                }
            }
        }
        if self.penalty > 0.0 {
            energy += self.edge_penalty(terms, grad);
        }
        energy
    }

    fn edge_penalty(&self, terms: &[SumTerm], mut grad: Option<&mut [SumTerm]>) -> f64 {
        let grid = self.grid;
        let d = grid.dim();
        let inv_h = 1.0 / grid.h_f64();
        let vol = grid.cell_volume();
        let strides = grid.strides();
        let nodes = grid.nodes_per_axis();
        let mut total = 0.0;
        for (i, t) in terms.iter().enumerate() {
            let b = self.budgets[i];
            let pv = t.pi.values();
            for a in 0..d {
                let ranges: Vec<(usize, usize)> = (0..d)
                    .map(|k| if k == a { (0, grid.cells()[a]) } else { (0, nodes[k]) })
                    .collect();
                for_each_index(&ranges, |idx| {
                    let v = grid.node_index(idx);
                    let w = v + strides[a];
                    for j in 0..d {
                        let delta = pv[w * d + j] - pv[v * d + j];
                        let excess = delta.abs() * inv_h - b;
                        if excess > 0.0 {
                            total += self.penalty * excess * excess * vol;
                            if let Some(g) = grad.as_deref_mut() {
                                let s = 2.0 * self.penalty * excess * vol * inv_h * delta.signum();
                                let gp = g[i].pi.values_mut();
                                gp[w * d + j] += s;
                                gp[v * d + j] -= s;
                            }
                        }
                    }
                });
            }
        }
        total
    }
}

/// Energy of a single map `π` against `ρ`, with component budget `budget`
/// entering only through the edge penalty.
pub fn energy_single(pi: &GridField, rho: &CellField, budget: f64, penalty: f64) -> Result<f64> {
    let terms = [single_term(pi)];
    let budgets = [budget];
    let obj = Objective::new(rho, &budgets, penalty);
    obj.check(&terms)?;
    Ok(obj.eval(&terms, None))
}

/// Closed-form gradient of `energy_single` with respect to the node values of `π`.
pub fn gradient_single(pi: &GridField, rho: &CellField, budget: f64, penalty: f64) -> Result<GridField> {
    let terms = [single_term(pi)];
    let budgets = [budget];
    let obj = Objective::new(rho, &budgets, penalty);
    obj.check(&terms)?;
    let mut grad = [single_term(pi)];
    obj.eval(&terms, Some(&mut grad));
    let [g] = grad;
    Ok(g.pi)
}

pub fn energy_sum(sum: &LipschitzSum, rho: &CellField, budgets: &[f64], penalty: f64) -> Result<f64> {
    let obj = Objective::new(rho, budgets, penalty);
    obj.check(sum.terms())?;
    Ok(obj.eval(sum.terms(), None))
}

/// Gradient of `energy_sum`; each returned term holds `(∂E/∂f_i, ∂E/∂π_i)`.
pub fn gradient_sum(sum: &LipschitzSum, rho: &CellField, budgets: &[f64], penalty: f64) -> Result<Vec<SumTerm>> {
    let obj = Objective::new(rho, budgets, penalty);
    obj.check(sum.terms())?;
    let mut grad = sum.terms().to_vec();
    obj.eval(sum.terms(), Some(&mut grad));
    Ok(grad)
}

fn single_term(pi: &GridField) -> SumTerm {
    SumTerm {
        f: GridField::scalar_fn(pi.grid().clone(), |_| 1.0),
        pi: pi.clone(),
    }
}

/// Rescales node differences of each component until its grid-realized
/// Lipschitz constant is at most `budget_j (1 + 10⁻⁶)`.
///
/// Cells whose slope exceeds the budget are contracted towards their corner
/// mean, sweeping the grid up to a fixed number of times; whatever excess
/// remains is removed by a global contraction about the field mean. Fields
/// already within budget are returned unchanged. A zero budget yields the
/// constant mean.
pub fn project_lipschitz(pi: &GridField, budgets: &[f64]) -> Result<GridField> {
    if budgets.len() != pi.ncomp() {
        return Err(Error::DimensionMismatch {
            expected: pi.ncomp(),
            got: budgets.len(),
        });
    }
    if let Some(b) = budgets.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return Err(Error::InvalidParams(format!("lipschitz budget {b} must be finite and non-negative")));
    }
    let lips = lipschitz_constants(pi);
    if lips.iter().zip(budgets).all(|(l, b)| *l <= b * (1.0 + PROJECTION_SLACK)) {
        return Ok(pi.clone());
    }
    let mut out = pi.clone();
    for (j, (&lip, &b)) in lips.iter().zip(budgets).enumerate() {
        if lip <= b * (1.0 + PROJECTION_SLACK) {
            continue;
        }
        project_component(&mut out, j, b)?;
    }
    Ok(out)
}

fn component_mean(f: &GridField, j: usize) -> f64 {
    let n = f.grid().node_count();
    (0..n).map(|k| f.at(k, j)).sum::<f64>() / n as f64
}

fn project_component(f: &mut GridField, j: usize, budget: f64) -> Result<()> {
    let grid = f.grid().clone();
    let d = grid.dim();
    let nc = f.ncomp();
    let mean = component_mean(f, j);
    if budget == 0.0 {
        for k in 0..grid.node_count() {
            f.values_mut()[k * nc + j] = mean;
        }
        return Ok(());
    }
    let h = grid.h_f64();
    let limit = budget * h;
    let offsets = grid.corner_offsets();
    let perms = permutations(d);
    let bases = cell_bases(&grid);
    let mut corners = vec![0.0; offsets.len()];
    let mut previous = bases
        .iter()
        .filter(|&&base| {
            f.cell_corners(base, &offsets, j, &mut corners);
            cell_slope_sq(&corners, &perms, d).sqrt() > limit
        })
        .count();
    // Widespread excess is a global scale problem.
    let passes = if previous * 4 > bases.len() { 0 } else { LOCAL_PASSES };
    for _ in 0..passes {
        let mut violating = 0;
        for &base in &bases {
            f.cell_corners(base, &offsets, j, &mut corners);
            let slope = cell_slope_sq(&corners, &perms, d).sqrt();
            if slope <= limit {
                continue;
            }
            violating += 1;
            let t = limit / slope;
            let m = corners.iter().sum::<f64>() / corners.len() as f64;
            let values = f.values_mut();
            for (o, c) in offsets.iter().zip(&corners) {
                values[(base + o) * nc + j] = m + (c - m) * t;
            }
        }
        if violating == 0 || violating * 2 > previous {
            break;
        }
        previous = violating;
    }
    let lip = lipschitz_constants(f)[j];
    if lip > budget * (1.0 + PROJECTION_SLACK) {
        let mean = component_mean(f, j);
        let t = budget / lip;
        for k in 0..grid.node_count() {
            let v = &mut f.values_mut()[k * nc + j];
            *v = mean + (*v - mean) * t;
        }
    }
    let lip = lipschitz_constants(f)[j];
    if !(lip <= budget * (1.0 + PROJECTION_SLACK)) {
        return Err(Error::ProjectionFailed { achieved: lip, budget });
    }
    Ok(())
}

/// Node values of a cell field: the mean over the cells sharing each node.
pub fn cells_to_nodes(rho: &CellField) -> GridField {
    let grid = rho.grid().clone();
    let offsets = grid.corner_offsets();
    let mut sums = vec![0.0; grid.node_count()];
    let mut counts = vec![0u32; grid.node_count()];
    for (c, base) in cell_bases(&grid).into_iter().enumerate() {
        for o in &offsets {
            sums[base + o] += rho.values()[c];
            counts[base + o] += 1;
        }
    }
    let values = sums.iter().zip(&counts).map(|(s, &n)| s / f64::from(n)).collect();
    GridField::new(grid, 1, values).expect("one value per node")
}

fn scaled_identity(grid: &Grid, scale: f64) -> GridField {
    GridField::identity(grid.clone()).scaled(scale)
}

/// `x ↦ s R x` with `R` a rotation by `θ` in the plane of the first two axes.
/// Rows keep unit norm, so every component has Lipschitz constant `s`.
fn rotated_identity(grid: &Grid, scale: f64, theta: f64) -> GridField {
    let d = grid.dim();
    let (s, c) = theta.sin_cos();
    GridField::from_fn(grid.clone(), d, |x, o| {
        o.copy_from_slice(x);
        if d >= 2 {
            o[0] = c * x[0] - s * x[1];
            o[1] = s * x[0] + c * x[1];
        }
        for v in o.iter_mut() {
            *v *= scale;
        }
    })
}

struct Descent<'a> {
    obj: Objective<'a>,
    optimize_f: bool,
    config: &'a SolverConfig,
}

impl Descent<'_> {
    fn project(&self, terms: &mut [SumTerm]) -> Result<()> {
        if !self.config.project {
            return Ok(());
        }
        let d = self.obj.grid.dim();
        for (t, &b) in terms.iter_mut().zip(self.obj.budgets) {
            t.pi = project_lipschitz(&t.pi, &vec![b; d])?;
            if self.optimize_f {
                t.f = project_lipschitz(&t.f, &[1.0])?.map(|v| v.clamp(-1.0, 1.0));
            }
        }
        Ok(())
    }

    /// Returns the best iterate, the iteration count and whether a stopping
    /// criterion other than the iteration cap was met.
    fn run(&self, mut cur: Vec<SumTerm>) -> Result<(Vec<SumTerm>, usize, bool)> {
        let cfg = self.config;
        self.project(&mut cur)?;
        let mut energy = self.obj.eval(&cur, None);
        if !energy.is_finite() {
            return Err(Error::Diverged { iteration: 0 });
        }
        let d = self.obj.grid.dim() as i32;
        let mut step = cfg.initial_step * self.obj.grid.h_f64().powi(2 - d);
        let mut grad = cur.clone();
        let target = cfg.residual_target * cfg.residual_target;
        let mut iters = 0;
        while iters < cfg.max_iters {
            if energy <= target {
                return Ok((cur, iters, true));
            }
            self.obj.eval(&cur, Some(&mut grad));
            if grad.iter().any(|g| g.pi.values().iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged { iteration: iters });
            }
            iters += 1;
            let mut accepted = None;
            for _ in 0..=cfg.max_backtracks {
                let mut trial = cur.clone();
                for (t, g) in trial.iter_mut().zip(&grad) {
                    for (v, dv) in t.pi.values_mut().iter_mut().zip(g.pi.values()) {
                        *v -= step * dv;
                    }
                    if self.optimize_f {
                        for (v, dv) in t.f.values_mut().iter_mut().zip(g.f.values()) {
                            *v -= step * dv;
                        }
                    }
                }
                self.project(&mut trial)?;
                let e = self.obj.eval(&trial, None);
                if e.is_finite() && e < energy {
                    accepted = Some((trial, e));
                    step *= cfg.step_growth;
                    break;
                }
                step *= cfg.step_shrink;
            }
            match accepted {
                Some((trial, e)) => {
                    let improvement = energy - e;
                    cur = trial;
                    energy = e;
                    if improvement <= cfg.rel_tol * energy {
                        return Ok((cur, iters, true));
                    }
                }
                None => return Ok((cur, iters, true)),
            }
        }
        Ok((cur, iters, energy <= target))
    }
}

/// Averages of `rho` over blocks of `2^d` cells, when every axis has an even
/// number of at least four cells.
fn coarsen(rho: &CellField) -> Option<CellField> {
    let fine = rho.grid();
    if fine.cells().iter().any(|&n| n % 2 != 0 || n < 4) {
        return None;
    }
    let d = fine.dim();
    let cells: Vec<usize> = fine.cells().iter().map(|n| n / 2).collect();
    let coarse = Grid::new(fine.lo().to_vec(), fine.h() * rational::int(2), cells).ok()?;
    let mut values = vec![0.0; coarse.cell_count()];
    let mut idx = vec![0usize; d];
    for (k, v) in rho.values().iter().enumerate() {
        let fi = fine.cell_multi_index(k);
        for a in 0..d {
            idx[a] = fi[a] / 2;
        }
        values[coarse.cell_index(&idx)] += v / (1 << d) as f64;
    }
    CellField::new(coarse, values).ok()
}

/// Samples the piecewise-linear extension of `field` at the nodes of `fine`.
fn prolong(field: &GridField, fine: &Grid) -> GridField {
    GridField::from_fn(fine.clone(), field.ncomp(), |x, o| field.interpolate(x, o))
}

/// Runs the descent on successively finer grids, coarsest first, starting
/// from `init` on the coarsest one.
fn run_multilevel(
    rho: &CellField,
    budgets: &[f64],
    optimize_f: bool,
    config: &SolverConfig,
    init: impl Fn(&Grid, &CellField) -> Vec<SumTerm>,
) -> Result<(Vec<SumTerm>, usize, bool)> {
    let mut coarse: Vec<CellField> = Vec::new();
    for _ in 0..config.coarse_levels {
        match coarsen(coarse.last().unwrap_or(rho)) {
            Some(c) => coarse.push(c),
            None => break,
        }
    }
    let levels: Vec<&CellField> = std::iter::once(rho).chain(coarse.iter()).rev().collect();
    let mut terms = init(levels[0].grid(), levels[0]);
    let mut total = 0;
    let mut converged = false;
    for (k, target) in levels.iter().enumerate() {
        if k > 0 {
            terms = terms
                .iter()
                .map(|t| SumTerm {
                    f: prolong(&t.f, target.grid()),
                    pi: prolong(&t.pi, target.grid()),
                })
                .collect();
        }
        let descent = Descent {
            obj: Objective::new(target, budgets, config.lipschitz_penalty),
            optimize_f,
            config,
        };
        let (t, iters, conv) = descent.run(terms)?;
        terms = t;
        total += iters;
        converged = conv;
    }
    Ok((terms, total, converged))
}

fn finish(
    strategy: &str,
    budget: f64,
    term_budgets: Vec<f64>,
    rho: &CellField,
    terms: Vec<SumTerm>,
    iterations: usize,
    converged: bool,
    start: Instant,
) -> Result<SolveResult> {
    let solution = LipschitzSum::new(rho.grid().clone(), terms)?;
    let (residual_l2, residual_sup) = residuals(&solution.em_field(), rho);
    let pi_lips: Vec<Vec<f64>> = solution.norms().iter().map(|n| n.pi_lips.clone()).collect();
    let lip_achieved = pi_lips.iter().flatten().fold(0.0f64, |m, &l| m.max(l));
    Ok(SolveResult {
        strategy: strategy.to_string(),
        budget,
        term_budgets,
        residual_l2,
        residual_sup,
        lip_achieved,
        pi_lips,
        s_value: solution.s_value(),
        iterations,
        converged,
        seconds: start.elapsed().as_secs_f64(),
        solution,
    })
}

/// Minimizes `Σ (det Dπ − ρ)² h^d` with every component of `π` held to the
/// Lipschitz budget `b`. Starts from `π = min(b, 1) x`.
pub fn solve_single(rho: &CellField, b: f64, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    let start = Instant::now();
    let grid = rho.grid();
    let budgets = [b];
    let (terms, iters, converged) = run_multilevel(rho, &budgets, false, config, |g, _| {
        vec![single_term(&scaled_identity(g, b.min(1.0)))]
    })?;
    finish("single", b.powi(grid.dim() as i32), vec![b], rho, terms, iters, converged, start)
}

/// Jointly optimizes `n_terms` pairs `(f_i, π_i)` with `max{Lip f_i, ∥f_i∥_∞} <= 1`
/// and `Lip π_i^j <= L = (S/n)^(1/d)`, so the `s`-value stays within `S`.
/// Starts from `f_1 = clamp(ρ, ±1)`, `f_i = 0` otherwise, and `π_i` rotated
/// copies of `min(L, 1) x`; the rotation angles are drawn from the seed.
pub fn solve_sum(rho: &CellField, n_terms: usize, s: f64, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    if n_terms == 0 {
        return Err(Error::InvalidParams("n_terms must be at least 1".into()));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidParams(format!("budget S = {s} must be finite and non-negative")));
    }
    let start = Instant::now();
    let grid = rho.grid();
    let d = grid.dim();
    let l = (s / n_terms as f64).powf(1.0 / d as f64);
    let budgets = vec![l; n_terms];
    if s == 0.0 {
        let terms = (0..n_terms)
            .map(|_| SumTerm {
                f: GridField::zeros(grid.clone(), 1),
                pi: GridField::zeros(grid.clone(), d),
            })
            .collect();
        return finish("sum", s, budgets, rho, terms, 0, true, start);
    }
    let mut rng = synthetic::rng(config.seed);
    let scale = l.min(1.0);
    let angles: Vec<f64> = (1..n_terms)
        .map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
        .collect();
    let (terms, iters, converged) = run_multilevel(rho, &budgets, true, config, |g, target| {
        let f1 = cells_to_nodes(target).map(|v| v.clamp(-1.0, 1.0));
        std::iter::once(SumTerm {
            f: f1,
            pi: scaled_identity(g, scale),
        })
        .chain(angles.iter().map(|&theta| SumTerm {
            f: GridField::zeros(g.clone(), 1),
            pi: rotated_identity(g, scale, theta),
        }))
        .collect()
    })?;
    finish("sum", s, budgets, rho, terms, iters, converged, start)
}

/// A solver strategy selectable by name.
pub trait Solver: Send + Sync {
    fn describe(&self) -> &'static str;
    /// Solves against `rho` with total budget `S`.
    fn solve(&self, rho: &CellField, s: f64, config: &SolverConfig) -> Result<SolveResult>;
}

pub struct SingleMapSolver;

impl Solver for SingleMapSolver {
    fn describe(&self) -> &'static str {
        "one map, component budget S^(1/d)"
    }

    fn solve(&self, rho: &CellField, s: f64, config: &SolverConfig) -> Result<SolveResult> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidParams(format!("budget S = {s} must be finite and non-negative")));
        }
        let mut res = solve_single(rho, s.powf(1.0 / rho.grid().dim() as f64), config)?;
        res.budget = s;
        Ok(res)
    }
}

pub struct SumSolver;

impl Solver for SumSolver {
    fn describe(&self) -> &'static str {
        "n_terms pairs (f, π) with s-value at most S"
    }

    fn solve(&self, rho: &CellField, s: f64, config: &SolverConfig) -> Result<SolveResult> {
        solve_sum(rho, config.n_terms, s, config)
    }
}

pub fn solver_registry() -> Registry<dyn Solver> {
    let mut reg: Registry<dyn Solver> = Registry::new("solver");
    reg.register("single", Box::new(SingleMapSolver));
    reg.register("sum", Box::new(SumSolver));
    reg
}

/// Grid of the sweep: the first `window_cubes` order-0 cubes of the root
/// rectangle, with step `side(resolution_order) / cells_per_cube`.
pub fn sweep_grid(params: &HierarchyParams, config: &SolverConfig) -> Result<Grid> {
    let d = params.dim();
    let k = params.subdivision();
    if config.window_cubes > k {
        return Err(Error::InvalidParams(format!(
            "window of {} cubes exceeds the {k} cubes of the root rectangle",
            config.window_cubes
        )));
    }
    let side0 = params.cube_side(0);
    let h = params.cube_side(config.resolution_order) / rational::int(config.cells_per_cube as i64);
    let per_cube = rational::floor_to_i64(&(&side0 / &h));
    if !rational::is_integer(&(&side0 / &h)) || per_cube <= 0 {
        return Err(Error::GridMisaligned("cube side is not a multiple of the sweep step".into()));
    }
    let per_cube = per_cube as usize;
    let mut cells = vec![per_cube; d];
    cells[0] = per_cube * config.window_cubes as usize;
    Grid::new(vec![rational::int(0); d], h, cells)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub k0: u32,
    #[serde(rename = "S")]
    pub s: f64,
    pub residual_l2: f64,
    pub residual_sup: f64,
    pub lip_achieved: f64,
    pub violations: usize,
    pub iters: usize,
    pub pairs_checked: usize,
    pub status: String,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_COLUMNS: [&str; 9] = [
    "k0",
    "S",
    "residual_l2",
    "residual_sup",
    "lip_achieved",
    "violations",
    "iters",
    "pairs_checked",
    "status",
];

impl SweepResult {
    pub fn row(&self, k0: u32, s: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.k0 == k0 && r.s == s)
    }

    /// Rows without wall-clock columns, so reruns are byte-identical.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", SWEEP_COLUMNS.join(","))?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.k0,
                r.s,
                r.residual_l2,
                r.residual_sup,
                r.lip_achieved,
                r.violations,
                r.iters,
                r.pairs_checked,
                r.status.replace(',', ";")
            )?;
        }
        Ok(())
    }

    pub fn total_seconds(&self) -> f64 {
        self.rows.iter().map(|r| r.seconds).sum()
    }
}

/// Seed of sweep cell `(k0, j)`, independent of evaluation order.
pub fn cell_seed(seed: u64, k0: u32, budget_index: usize) -> u64 {
    seed ^ (u64::from(k0) << 32 | budget_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Counts adjacent pairs of order at most `k0` whose parent rectangle lies in
/// the grid window and whose cubes are grid-aligned, and among them those
/// where the exact target discrepancy exceeds the sum estimate of the solved
/// field.
fn count_violations(
    params: &HierarchyParams,
    rho: &DensityField,
    k0: u32,
    solution: &LipschitzSum,
) -> Result<(usize, usize)> {
    let grid = solution.grid();
    let window: RatBox = grid.bounds();
    let reg = solution.regularize();
    let mut checked = 0;
    let mut violations = 0;
    for pair in enumerate_adjacent_pairs(params, k0)? {
        if !window.contains_box(&pair.parent.bounds()) {
            continue;
        }
        if grid.cell_ranges(&pair.left.bounds()).is_err() || grid.cell_ranges(&pair.right.bounds()).is_err() {
            continue;
        }
        checked += 1;
        let w = reg.translation_offsets(&pair);
        let report = reg.check_sum_estimate(&pair, &w)?;
        let disc = rational::to_f64(&rho.discrepancy(&pair)?).abs();
        if disc > report.rhs {
            violations += 1;
        }
    }
    Ok((checked, violations))
}

fn sweep_cell(params: &HierarchyParams, grid: &Grid, k0: u32, s: f64, config: &SolverConfig) -> Result<SweepRow> {
    let start = Instant::now();
    let rho = DensityField::constant_one(params.clone()).refine_to_depth(k0)?;
    let target = rho.cell_averages(grid)?;
    let solver = solver_registry();
    let res = solver.get(&config.strategy)?.solve(&target, s, config)?;
    let (pairs_checked, violations) = count_violations(params, &rho, k0, &res.solution)?;
    Ok(SweepRow {
        k0,
        s,
        residual_l2: res.residual_l2,
        residual_sup: res.residual_sup,
        lip_achieved: res.lip_achieved,
        violations,
        iters: res.iterations,
        pairs_checked,
        status: "ok".into(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Solves every `(k0, S)` cell against the checkerboard density refined to
/// depth `k0`. Cells run in parallel, each with its own derived seed; a failing
/// cell is recorded with its error and the others continue. Rows are sorted by
/// `(k0, S)`.
pub fn sweep_depth(
    params: &HierarchyParams,
    budgets: &[f64],
    depths: &[u32],
    config: &SolverConfig,
) -> Result<SweepResult> {
    config.validate()?;
    solver_registry().get(&config.strategy)?;
    if let Some(&k) = depths.iter().find(|&&k| k > params.max_order()) {
        return Err(Error::OrderTooLarge {
            order: k,
            max_order: params.max_order(),
        });
    }
    if let Some(s) = budgets.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidParams(format!("budget S = {s} must be finite and non-negative")));
    }
    let mut keys: Vec<(u32, usize)> = Vec::new();
    for &k0 in depths {
        for j in 0..budgets.len() {
            if !keys.iter().any(|&(k, i)| k == k0 && budgets[i] == budgets[j]) {
                keys.push((k0, j));
            }
        }
    }
    let grid = sweep_grid(params, config)?;
    let mut rows: Vec<SweepRow> = keys
        .par_iter()
        .map(|&(k0, j)| {
            let s = budgets[j];
            let cfg = SolverConfig {
                seed: cell_seed(config.seed, k0, j),
                ..config.clone()
            };
            sweep_cell(params, &grid, k0, s, &cfg).unwrap_or_else(|e| SweepRow {
                k0,
                s,
                residual_l2: f64::NAN,
                residual_sup: f64::NAN,
                lip_achieved: f64::NAN,
                violations: 0,
                iters: 0,
                pairs_checked: 0,
                status: format!("error: {e}"),
                seconds: 0.0,
            })
        })
        .collect();
    rows.sort_by(|a, b| a.k0.cmp(&b.k0).then(a.s.total_cmp(&b.s)));
    Ok(SweepResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::lipschitz_constant;

    fn unit(n: usize) -> Grid {
        Grid::unit(2, n).unwrap()
    }

    #[test]
    fn projection_fixes_fields_within_budget() {
        let g = unit(8);
        let pi = GridField::identity(g);
        let out = project_lipschitz(&pi, &[1.0, 1.0]).unwrap();
        assert_eq!(out, pi);
    }

    #[test]
    fn projection_of_linear_field() {
        let g = unit(8);
        let f = GridField::scalar_fn(g, |x| 2.0 * x[0]);
        let out = project_lipschitz(&f, &[1.0]).unwrap();
        assert!(lipschitz_constant(&out) <= 1.0 + 1e-6);
        let again = project_lipschitz(&out, &[1.0]).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn zero_budget_gives_constant() {
        let g = unit(4);
        let f = GridField::scalar_fn(g, |x| x[0] + x[1]);
        let out = project_lipschitz(&f, &[0.0]).unwrap();
        assert!(out.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(project_lipschitz(&f, &[-1.0]).is_err());
    }

    #[test]
    fn identity_solves_unit_density() {
        let g = unit(16);
        let rho = CellField::constant(g, 1.0);
        let res = solve_single(&rho, 1.0, &SolverConfig::default()).unwrap();
        assert!(res.residual_l2 < 1e-6);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn determinant_floor() {
        let g = unit(16);
        let rho = CellField::constant(g, 4.0);
        let cfg = SolverConfig {
            max_iters: 50,
            ..SolverConfig::default()
        };
        let res = solve_single(&rho, 1.0, &cfg).unwrap();
        assert!(res.residual_sup >= 3.0 - 1e-3);
        assert!(res.lip_achieved <= 1.0 + 1e-6);
    }

    #[test]
    fn gradient_matches_differences() {
        let g = unit(4);
        let mut rng = synthetic::rng(5);
        let pi = synthetic::random_smooth_map(&g, 2.0, &mut rng);
        let rho = CellField::from_fn(g, |c| 1.0 + 0.1 * c[0] as f64);
        let grad = gradient_single(&pi, &rho, 0.5, 0.3).unwrap();
        let eps = 1e-6;
        for k in [0, 5, 17, 30, 49] {
            let mut plus = pi.clone();
            plus.values_mut()[k] += eps;
            let mut minus = pi.clone();
            minus.values_mut()[k] -= eps;
            let fd = (energy_single(&plus, &rho, 0.5, 0.3).unwrap() - energy_single(&minus, &rho, 0.5, 0.3).unwrap())
                / (2.0 * eps);
            assert!((fd - grad.values()[k]).abs() <= 1e-6 * grad.values()[k].abs().max(1e-3), "node {k}");
        }
    }

    #[test]
    fn zero_budget_sum_is_zero() {
        let g = unit(8);
        let rho = CellField::from_fn(g, |c| 0.5 + 0.01 * c[1] as f64);
        let res = solve_sum(&rho, 2, 0.0, &SolverConfig::default()).unwrap();
        let norm = rho.l2_norm();
        assert!((res.residual_l2 - norm).abs() < 1e-12);
        assert_eq!(res.s_value, 0.0);
    }

    #[test]
    fn registry_lists_strategies() {
        let reg = solver_registry();
        assert_eq!(reg.names(), vec!["single", "sum"]);
        assert!(reg.get("newton").is_err());
    }

    #[test]
    fn sweep_grid_shape() {
        let p = HierarchyParams::new(2, 6, 2, 2).unwrap();
        let g = sweep_grid(&p, &SolverConfig::default()).unwrap();
        assert_eq!(g.cells(), &[384, 192]);
        assert_eq!(g.h(), &rational::rat(1, 1152));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            step_shrink: 1.5,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
