//! Named verification suites. Each runs one family of inequality or identity
//! checks and reports every instance with the tolerance it was judged by.
//!
//! Randomized suites draw trial `t` from `synthetic::trial_rng(seed, t)`, so a
//! failing row is replayed from the `seed` and `trial` columns alone.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::density::{constraint_threshold, DensityField};
use crate::error::Result;
use crate::fields::{
    check_average_det, check_coef_estimate, for_each_boundary_node, jacobian_det_boundary, jacobian_det_volume,
    translated_comparison, EstimateReport, Grid, GridField,
};
use crate::hierarchy::{enumerate_rectangles_upto, uncovered_volume, AdjacentPair, HierarchyParams, RatBox};
use crate::linalg;
use crate::rational::{self, int};
use crate::registry::Registry;
use crate::sums::RegularSum;
use crate::synthetic::{self, trial_rng};
use crate::tolerance::TolerancePolicy;

use rand::Rng;

/// Lipschitz bound of the random maps in the single-map suites.
const MAP_LIP: f64 = 2.0;
/// Cells per cube side on the grids covering the root rectangle.
const CELLS_PER_CUBE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteContext {
    pub params: HierarchyParams,
    /// Deepest order for the exact suites.
    pub k0: u32,
    pub seed: u64,
    pub trials: usize,
    /// Cells per axis of the unit-cube grids.
    pub grid_cells: usize,
    pub policy: TolerancePolicy,
}

impl Default for SuiteContext {
    fn default() -> Self {
        Self {
            params: HierarchyParams::new(2, 6, 4, 2).expect("valid defaults"),
            k0: 1,
            seed: 0,
            trials: 100,
            grid_cells: 128,
            policy: TolerancePolicy::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteRow {
    pub trial: usize,
    pub report: EstimateReport,
    pub tolerance: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub rows: Vec<SuiteRow>,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64) -> Self {
        Self {
            suite: suite.to_string(),
            seed,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, trial: usize, report: EstimateReport, tolerance: f64) {
        let holds = report.holds(tolerance);
        self.rows.push(SuiteRow {
            trial,
            report,
            tolerance,
            holds,
        });
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.holds).count()
    }

    /// Smallest slack over all rows.
    pub fn min_slack(&self) -> f64 {
        self.rows.iter().map(|r| r.report.slack).fold(f64::INFINITY, f64::min)
    }

    /// `suite,trial,seed,context,lhs,rhs,slack,tolerance,holds`
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "suite,trial,seed,context,lhs,rhs,slack,tolerance,holds")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},\"{}\",{:e},{:e},{:e},{:e},{}",
                self.suite,
                r.trial,
                self.seed,
                r.report.context.replace('"', "'"),
                r.report.lhs,
                r.report.rhs,
                r.report.slack,
                r.tolerance,
                r.holds
            )?;
        }
        Ok(())
    }
}

pub trait VerifySuite: Send + Sync {
    fn describe(&self) -> &'static str;
    fn run(&self, ctx: &SuiteContext) -> Result<SuiteReport>;
}

fn unit_grid(ctx: &SuiteContext) -> Result<Grid> {
    Grid::unit(ctx.params.dim(), ctx.grid_cells)
}

/// `x ↦ A x + b` with dyadic entries, so every sample and difference is exact
/// in floating point. Row norms stay below 2.
fn dyadic_affine(grid: &Grid, shift: f64) -> GridField {
    let d = grid.dim();
    GridField::from_fn(grid.clone(), d, |x, o| {
        for j in 0..d {
            let mut v = 1.25 * x[j] + 0.125 * (j + 1) as f64 + shift * (j + 1) as f64;
            if j + 1 < d {
                v += 0.25 * x[j + 1];
            }
            o[j] = v;
        }
    })
}

/// Grid over the root rectangle with `CELLS_PER_CUBE` cells per order-0 cube side.
fn root_grid(params: &HierarchyParams) -> Result<Grid> {
    let k = params.subdivision() as usize;
    Grid::over_box(&params.root_rect().bounds(), k * CELLS_PER_CUBE)
}

fn root_pairs(params: &HierarchyParams) -> Result<Vec<AdjacentPair>> {
    let root = params.root_rect();
    (0..params.subdivision() as usize - 1)
        .map(|n| AdjacentPair::new(&root, n))
        .collect()
}

fn random_sum_on(grid: &Grid, rng: &mut impl Rng) -> Result<RegularSum> {
    let s = rng.gen_range(0.25..=4.0);
    synthetic::random_regular_sum(grid, 2, s, rng)
}

pub struct AverageDetSuite;

impl VerifySuite for AverageDetSuite {
    fn describe(&self) -> &'static str {
        "average-determinant estimate on random smooth pairs, plus one exact affine pair"
    }

    fn run(&self, ctx: &SuiteContext) -> Result<SuiteReport> {
        let grid = unit_grid(ctx)?;
        let h = grid.h_f64();
        let b = RatBox::unit(grid.dim());
        let mut out = SuiteReport::new("average-det", ctx.seed);
        let pi = dyadic_affine(&grid, 0.0);
        let kappa = dyadic_affine(&grid, 0.0625);
        let mut report = check_average_det(&pi, &kappa, &b)?;
        report.context = format!("affine translate; {}", report.context);
        out.push(0, report, 0.0);
        for t in 0..ctx.trials {
            let mut rng = trial_rng(ctx.seed, t as u64);
            let pi = synthetic::random_smooth_map(&grid, MAP_LIP, &mut rng);
            let kappa = synthetic::perturbed_map(&pi, 0.05, MAP_LIP, &mut rng);
            out.push(t + 1, check_average_det(&pi, &kappa, &b)?, ctx.policy.inequality(h, MAP_LIP));
        }
        Ok(out)
    }
}

pub struct CoefSuite;

impl VerifySuite for CoefSuite {
    fn describe(&self) -> &'static str {
        "estimate with Lipschitz coefficients on random smooth quadruples"
    }

    fn run(&self, ctx: &SuiteContext) -> Result<SuiteReport> {
        let grid = unit_grid(ctx)?;
        let h = grid.h_f64();
        let b = RatBox::unit(grid.dim());
        let mut out = SuiteReport::new("coef", ctx.seed);
        for t in 0..ctx.trials {
            let mut rng = trial_rng(ctx.seed, t as u64);
            let f = synthetic::random_scalar(&grid, &mut rng);
            let g = f.zip_with(&synthetic::random_scalar(&grid, &mut rng), |a, b| 0.9 * a + 0.1 * b)?;
            let pi = synthetic::random_smooth_map(&grid, MAP_LIP, &mut rng);
            let kappa = synthetic::perturbed_map(&pi, 0.05, MAP_LIP, &mut rng);
            out.push(t, check_coef_estimate(&f, &g, &pi, &kappa, &b)?, ctx.policy.inequality(h, MAP_LIP));
        }
        Ok(out)
    }
}

pub struct SumEstimateSuite;

impl VerifySuite for SumEstimateSuite {
    fn describe(&self) -> &'static str {
        "adjacent-cube estimate for random regular two-term sums on the root rectangle"
    }

    fn run(&self, ctx: &SuiteContext) -> Result<SuiteReport> {
        let grid = root_grid(&ctx.params)?;
        let h = grid.h_f64();
        let pairs = root_pairs(&ctx.params)?;
        let mut out = SuiteReport::new("sum-estimate", ctx.seed);
        for t in 0..ctx.trials {
            let mut rng = trial_rng(ctx.seed, t as u64);
            let sum = random_sum_on(&grid, &mut rng)?;
            let lip = sum.l().iter().fold(0.0f64, |m, &l| m.max(l));
            for pair in &pairs {
                let w = sum.translation_offsets(pair);
                out.push(t, sum.check_sum_estimate(pair, &w)?, ctx.policy.inequality(h, lip));
            }
        }
        Ok(out)
    }
}

pub struct StokesSuite;

impl StokesSuite {
    fn smooth(grid: &Grid) -> GridField {
        let d = grid.dim();
        GridField::from_fn(grid.clone(), d, |x, o| {
            o.copy_from_slice(x);
            o[0] = x[0] * x[0] + 0.3 * (3.0 * x[1]).sin();
            o[1] = x[1] + 0.5 * x[0] * x[1] * x[1];
        })
    }
}

impl VerifySuite for StokesSuite {
    fn describe(&self) -> &'static str {
        "volume against boundary determinant integrals: random affine maps exactly, a smooth map to first order"
    }

    fn run(&self, ctx: &SuiteContext) -> Result<SuiteReport> {
        let d = ctx.params.dim();
        let grid = unit_grid(ctx)?;
        let b = RatBox::unit(d);
        let mut out = SuiteReport::new("stokes", ctx.seed);
        for t in 0..ctx.trials {
            let mut rng = trial_rng(ctx.seed, t as u64);
            let a: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pi = GridField::from_fn(grid.clone(), d, |x, o| {
                for j in 0..d {
                    o[j] = c[j] + (0..d).map(|k| a[j * d + k] * x[k]).sum::<f64>();
                }
            });
            let exact = linalg::det(&a, d);
            let vol = jacobian_det_volume(&pi, &b)?;
            let bdry = jacobian_det_boundary(&pi, &b)?;
            let lhs = (vol - exact).abs().max((bdry - exact).abs());
            let report = EstimateReport::new(lhs, 0.0, format!("affine det(A) = {exact:.6}"));
            out.push(t, report, ctx.policy.affine);
        }
        if d == 2 {
            for (k, n) in [32usize, 64, 128].into_iter().enumerate() {
                let g = Grid::unit(2, n)?;
                let pi = Self::smooth(&g);
                let lhs = (jacobian_det_volume(&pi, &b)? - jacobian_det_boundary(&pi, &b)?).abs();
                let rhs = ctx.policy.stokes_constant * g.h_f64();
                out.push(ctx.trials + k, EstimateReport::new(lhs, rhs, format!("smooth map, h = 1/{n}")), 0.0);
            }
        }
        Ok(out)
    }
}

pub struct MeasureSuite;

impl VerifySuite for MeasureSuite {
    fn describe(&self) -> &'static str {
        "exact measure of each cube left uncovered by its child rectangles"
    }

    fn run(&self, ctx: &SuiteContext) -> Result<SuiteReport> {
        let p = &ctx.params;
        let fraction = int(1) - int(1) / rational::pow(&int(i64::from(p.subdivision())), p.dim() as u32 - 1);
        let mut out = SuiteReport::new("measure", ctx.seed);
        for rect in enumerate_rectangles_upto(p, ctx.k0)? {
            for q in rect.subcubes() {
                let lower = q.volume() * &fraction;
                let report = EstimateReport::exact(&lower, &uncovered_volume(p, &q), format!("cube {}", q.id()));
                out.push(0, report, ctx.policy.exact());
            }
        }
        Ok(out)
    }
}

pub struct DiscrepancySuite;

impl VerifySuite for DiscrepancySuite {
    fn describe(&self) -> &'static str {
        "exact discrepancy of the refined checkerboard on every adjacent pair"
    }

    fn run(&self, ctx: &SuiteContext) -> Result<SuiteReport> {
        let p = &ctx.params;
        let rho = DensityField::constant_one(p.clone()).refine_to_depth(ctx.k0)?;
        let zero = int(0);
        let mut out = SuiteReport::new("discrepancy", ctx.seed);
        for pair in crate::hierarchy::enumerate_adjacent_pairs(p, ctx.k0)? {
            let bound = constraint_threshold(p, pair.side(), &zero);
            let disc = rho.discrepancy(&pair)?;
            let context = format!("pair {} / {}", pair.left.id(), pair.right.id());
            out.push(0, EstimateReport::exact(&bound, &disc, context), ctx.policy.exact());
        }
        Ok(out)
    }
}

/// `Σ L_i^(d−2) ∥π_i − π̃_i∥²` on the boundary nodes of the left cube,
/// computed from the comparison field and from translated samples.
pub fn pythagoras_sides(sum: &RegularSum, pair: &AdjacentPair, w: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let d = sum.dim() as i32;
    let tau: Vec<f64> = pair.tau.iter().map(rational::to_f64).collect();
    let q = pair.left.bounds();
    let tildes = sum
        .sum()
        .terms()
        .iter()
        .zip(w)
        .map(|(t, wi)| translated_comparison(&t.pi, pair, wi))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    let sub = tildes.first().map(|t| t.grid().clone());
    let Some(sub) = sub else { return Ok(out) };
    for_each_boundary_node(&tildes[0], &q, |idx| {
        let x = sub.node_coords(idx);
        let shifted: Vec<f64> = x.iter().zip(&tau).map(|(a, b)| a + b).collect();
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for (i, t) in sum.sum().terms().iter().enumerate() {
            let l = sum.l()[i];
            let weight = if l == 0.0 { 0.0 } else { l.powi(d - 2) };
            let here = t.pi.eval(&x);
            let there = t.pi.eval(&shifted);
            let tilde = tildes[i].node_value(idx);
            for j in 0..here.len() {
                let a = here[j] - tilde[j];
                lhs += weight * a * a;
                let b = there[j] - here[j] - w[i][j];
                rhs += weight * b * b;
            }
        }
        out.push((lhs, rhs));
    })?;
    Ok(out)
}

pub struct PythagorasSuite;

impl VerifySuite for PythagorasSuite {
    fn describe(&self) -> &'static str {
        "weighted boundary distance written as a sum of translated coordinate differences"
    }

    fn run(&self, ctx: &SuiteContext) -> Result<SuiteReport> {
        let grid = root_grid(&ctx.params)?;
        let pairs = root_pairs(&ctx.params)?;
        let mut out = SuiteReport::new("pythagoras", ctx.seed);
        for t in 0..ctx.trials {
            let mut rng = trial_rng(ctx.seed, t as u64);
            let sum = random_sum_on(&grid, &mut rng)?;
            for pair in &pairs {
                let w = sum.translation_offsets(pair);
                let worst = pythagoras_sides(&sum, pair, &w)?
                    .into_iter()
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                let context = format!("pair {} / {}", pair.left.id(), pair.right.id());
                out.push(t, EstimateReport::new(worst, 0.0, context), ctx.policy.identity);
            }
        }
        Ok(out)
    }
}

pub fn suite_registry() -> Registry<dyn VerifySuite> {
    let mut reg: Registry<dyn VerifySuite> = Registry::new("suite");
    reg.register("average-det", Box::new(AverageDetSuite));
    reg.register("coef", Box::new(CoefSuite));
    reg.register("sum-estimate", Box::new(SumEstimateSuite));
    reg.register("stokes", Box::new(StokesSuite));
    reg.register("measure", Box::new(MeasureSuite));
    reg.register("discrepancy", Box::new(DiscrepancySuite));
    reg.register("pythagoras", Box::new(PythagorasSuite));
    reg
}
