//! Two-valued checkerboard densities built by refining a background field
//! along the admissible hierarchy, with exact rational integration.
//!
//! Refining at order `k` sets `ρ = 1` on `Q(R,i)` for even `i` and `ρ = 2` for
//! odd `i`, for every `R` of order `k`. Refinements applied later override
//! earlier ones where they overlap.

use std::collections::HashMap;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{for_each_index, CellField, Grid, GridField};
use crate::hierarchy::{
    child_rectangle_at, enumerate_adjacent_pairs, enumerate_rectangles, AdjacentPair, Cube,
    HierarchyParams, RatBox,
};
use crate::rational::{self, int, Rational};

/// Piecewise-constant background `σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseField {
    Constant(#[serde(with = "rational::serde_rational")] Rational),
    /// `n` cells per axis over `[0,1]^d`, values row-major with the last axis fastest.
    Grid {
        n: usize,
        #[serde(with = "rational::serde_rational::vec")]
        values: Vec<Rational>,
    },
}

impl Default for BaseField {
    fn default() -> Self {
        BaseField::Constant(Rational::one())
    }
}

impl BaseField {
    fn validate(&self, d: usize) -> Result<()> {
        let two = int(2);
        let check = |v: &Rational| {
            if v.abs() > two {
                Err(Error::InvalidParams(format!(
                    "background value {} exceeds 2 in absolute value",
                    rational::format(v)
                )))
            } else {
                Ok(())
            }
        };
        match self {
            BaseField::Constant(c) => check(c),
            BaseField::Grid { n, values } => {
                if *n == 0 || values.len() != n.pow(d as u32) {
                    return Err(Error::DimensionMismatch {
                        expected: n.pow(d as u32),
                        got: values.len(),
                    });
                }
                values.iter().try_for_each(check)
            }
        }
    }

    fn sup_norm(&self) -> Rational {
        match self {
            BaseField::Constant(c) => c.abs(),
            BaseField::Grid { values, .. } => values
                .iter()
                .map(|v| v.abs())
                .max()
                .unwrap_or_else(Rational::zero),
        }
    }

    /// Constant pieces `(cell box, value)` meeting `b`, clipped to `b`.
    fn pieces(&self, b: &RatBox) -> Vec<(RatBox, Rational)> {
        match self {
            BaseField::Constant(c) => vec![(b.clone(), c.clone())],
            BaseField::Grid { n, values } => {
                let d = b.dim();
                let nn = int(*n as i64);
                let ranges: Vec<(usize, usize)> = (0..d)
                    .map(|a| {
                        let s = rational::floor_to_i64(&(&b.lo()[a] * &nn)).max(0) as usize;
                        let e = rational::floor_to_i64(&(&b.hi()[a] * &nn).ceil()) as usize;
                        (s.min(n - 1), e.clamp(s + 1, *n))
                    })
                    .collect();
                let side = Rational::one() / nn;
                let mut out = Vec::new();
                for_each_index(&ranges, |idx| {
                    let lo: Vec<Rational> = idx.iter().map(|&i| &side * int(i as i64)).collect();
                    if let Some(x) = RatBox::cube(&lo, &side).intersect(b) {
                        let flat = idx.iter().fold(0, |acc, &i| acc * n + i);
                        out.push((x, values[flat].clone()));
                    }
                });
                out
            }
        }
    }

    fn integrate(&self, b: &RatBox) -> Rational {
        self.pieces(b).into_iter().map(|(x, v)| x.volume() * v).sum()
    }

    fn value_at(&self, x: &[Rational]) -> Rational {
        match self {
            BaseField::Constant(c) => c.clone(),
            BaseField::Grid { n, values } => {
                let nn = int(*n as i64);
                let flat = x.iter().fold(0usize, |acc, xa| {
                    let i = rational::floor_to_i64(&(xa * &nn)).clamp(0, *n as i64 - 1) as usize;
                    acc * n + i
                });
                values[flat].clone()
            }
        }
    }
}

/// Winning refinement at a cube: application index and value.
type Winner = Option<(usize, u8)>;

#[derive(Clone, Debug)]
pub struct DensityField {
    params: HierarchyParams,
    base: BaseField,
    /// Refined orders in application order.
    refined: Vec<u32>,
    /// `∫_Q ρ` for hierarchy cubes keyed by order and winner; only for constant
    /// backgrounds, where it does not depend on the position of `Q`.
    cube_table: HashMap<(u32, Winner), Rational>,
}

impl PartialEq for DensityField {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.base == other.base && self.refined == other.refined
    }
}

fn parity_value(i: u32) -> u8 {
    if i % 2 == 0 {
        1
    } else {
        2
    }
}

impl DensityField {
    pub fn new(params: HierarchyParams, base: BaseField) -> Result<Self> {
        base.validate(params.dim())?;
        Ok(Self {
            params,
            base,
            refined: Vec::new(),
            cube_table: HashMap::new(),
        })
    }

    /// Background `σ = 1`.
    pub fn constant_one(params: HierarchyParams) -> Self {
        Self::new(params, BaseField::default()).expect("1 is a valid background")
    }

    pub fn params(&self) -> &HierarchyParams {
        &self.params
    }

    pub fn base(&self) -> &BaseField {
        &self.base
    }

    pub fn refined_orders(&self) -> &[u32] {
        &self.refined
    }

    pub fn sup_norm(&self) -> Rational {
        let base = self.base.sup_norm();
        if self.refined.is_empty() {
            base
        } else {
            base.max(int(2))
        }
    }

    pub fn refine_at_order(&self, k: u32) -> Result<Self> {
        if k > self.params.max_order() {
            return Err(Error::OrderTooLarge {
                order: k,
                max_order: self.params.max_order(),
            });
        }
        if self.refined.contains(&k) {
            return Err(Error::AlreadyRefined(k));
        }
        let mut next = self.clone();
        next.refined.push(k);
        next.rebuild_table();
        Ok(next)
    }

    /// Refines every order `0..=k0` in increasing order.
    pub fn refine_to_depth(&self, k0: u32) -> Result<Self> {
        let mut rho = self.clone();
        for k in 0..=k0 {
            rho = rho.refine_at_order(k)?;
        }
        Ok(rho)
    }

    /// Orders `0..=k0` are all refined.
    pub fn is_refined_to(&self, k0: u32) -> bool {
        (0..=k0).all(|k| self.refined.contains(&k))
    }

    fn winner(&self, path: &[u32], order: u32) -> Winner {
        self.refined
            .iter()
            .enumerate()
            .rev()
            .find(|(_, &k)| k <= order)
            .map(|(a, &k)| (a, parity_value(path[2 * k as usize])))
    }

    fn child_winner(&self, parent: Winner, order: u32, i: u32) -> Winner {
        match self.refined.iter().position(|&k| k == order) {
            Some(a) if parent.map_or(true, |(pa, _)| a > pa) => Some((a, parity_value(i))),
            _ => parent,
        }
    }

    /// Whether some refinement deeper than `order` overrides `winner`.
    fn needs_descent(&self, order: u32, winner: Winner) -> bool {
        self.refined
            .iter()
            .enumerate()
            .any(|(a, &k)| k > order && winner.map_or(true, |(wa, _)| a > wa))
    }

    fn winner_integral(&self, w: Winner, b: &RatBox) -> Rational {
        match w {
            Some((_, v)) => b.volume() * int(i64::from(v)),
            None => self.base.integrate(b),
        }
    }

    fn rebuild_table(&mut self) {
        self.cube_table.clear();
        if !matches!(self.base, BaseField::Constant(_)) {
            return;
        }
        let winners: Vec<Winner> = std::iter::once(None)
            .chain((0..self.refined.len()).flat_map(|a| [Some((a, 1)), Some((a, 2))]))
            .collect();
        for k in (0..=self.params.max_order()).rev() {
            for &w in &winners {
                let v = self.cube_integral_uncached(k, w);
                self.cube_table.insert((k, w), v);
            }
        }
    }

    fn cube_integral_uncached(&self, k: u32, w: Winner) -> Rational {
        let vol_q = rational::pow(&self.params.cube_side(k), self.params.dim() as u32);
        let value = match (w, &self.base) {
            (Some((_, v)), _) => int(i64::from(v)),
            (None, BaseField::Constant(c)) => c.clone(),
            (None, _) => unreachable!("table is only built for constant backgrounds"),
        };
        let mut total = &vol_q * &value;
        if k < self.params.max_order() && self.needs_descent(k, w) {
            let child = self.params.root_rect_of_order(k + 1);
            let mut per_child = -(child.volume() * &value);
            for i in 0..self.params.subdivision() {
                let cw = self.child_winner(w, k + 1, i);
                per_child += &self.cube_table[&(k + 1, cw)];
            }
            total += per_child * int(self.params.lattice_size() as i64);
        }
        total
    }

    fn check_inside(&self, b: &RatBox) -> Result<()> {
        if b.dim() != self.params.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.params.dim(),
                got: b.dim(),
            });
        }
        if !RatBox::unit(b.dim()).contains_box(b) {
            return Err(Error::OutsideUnitCube(b.to_string()));
        }
        Ok(())
    }

    /// Exact `∫_box ρ`.
    pub fn integrate(&self, b: &RatBox) -> Result<Rational> {
        self.check_inside(b)?;
        let mut total = self.base.integrate(b);
        if self.refined.is_empty() {
            return Ok(total);
        }
        let root = self.params.root_rect();
        let Some(x) = root.bounds().intersect(b) else {
            return Ok(total);
        };
        total -= self.base.integrate(&x);
        for q in root.subcubes() {
            let w = self.winner(q.path(), 0);
            total += self.integrate_in_cube(b, &q, w);
        }
        Ok(total)
    }

    fn integrate_in_cube(&self, b: &RatBox, q: &Cube, w: Winner) -> Rational {
        let qb = q.bounds();
        let Some(x) = qb.intersect(b) else {
            return Rational::zero();
        };
        if x == qb {
            return self.hierarchy_cube_integral(q, w);
        }
        let mut total = self.winner_integral(w, &x);
        if q.order() < self.params.max_order() && self.needs_descent(q.order(), w) {
            for z in 0..self.params.lattice_size() {
                let child = child_rectangle_at(&self.params, q, z);
                let Some(y) = child.bounds().intersect(b) else {
                    continue;
                };
                total -= self.winner_integral(w, &y);
                for sub in child.subcubes() {
                    let cw = self.child_winner(w, child.order(), sub.index_in_parent().unwrap() as u32);
                    total += self.integrate_in_cube(b, &sub, cw);
                }
            }
        }
        total
    }

    fn hierarchy_cube_integral(&self, q: &Cube, w: Winner) -> Rational {
        if let Some(v) = self.cube_table.get(&(q.order(), w)) {
            return v.clone();
        }
        let qb = q.bounds();
        let mut total = self.winner_integral(w, &qb);
        if q.order() < self.params.max_order() && self.needs_descent(q.order(), w) {
            for z in 0..self.params.lattice_size() {
                let child = child_rectangle_at(&self.params, q, z);
                total -= self.winner_integral(w, &child.bounds());
                for sub in child.subcubes() {
                    let cw = self.child_winner(w, child.order(), sub.index_in_parent().unwrap() as u32);
                    total += self.hierarchy_cube_integral(&sub, cw);
                }
            }
        }
        total
    }

    /// Exact `∫_Q ρ` for a cube of the hierarchy.
    pub fn integrate_cube(&self, q: &Cube) -> Result<Rational> {
        let expected_len = 2 * q.order() as usize + 1;
        if q.path().len() != expected_len {
            return self.integrate(&q.bounds());
        }
        Ok(self.hierarchy_cube_integral(q, self.winner(q.path(), q.order())))
    }

    /// `|∫_Q ρ − ∫_{Q'} ρ|` for an adjacent pair.
    pub fn discrepancy(&self, pair: &AdjacentPair) -> Result<Rational> {
        if pair.left.dim() != self.params.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.params.dim(),
                got: pair.left.dim(),
            });
        }
        Ok((self.integrate_cube(&pair.left)? - self.integrate_cube(&pair.right)?).abs())
    }

    /// Value at a point of `[0,1]^d`, with cells taken half-open.
    pub fn value_at(&self, x: &[Rational]) -> Result<Rational> {
        if x.len() != self.params.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.params.dim(),
                got: x.len(),
            });
        }
        let zero = Rational::zero();
        let one = Rational::one();
        if x.iter().any(|xa| *xa < zero || *xa > one) {
            return Err(Error::OutsideUnitCube(
                x.iter().map(rational::format).collect::<Vec<_>>().join(", "),
            ));
        }
        let mut rect = self.params.root_rect();
        let mut w: Winner = None;
        loop {
            let bounds = rect.bounds();
            let inside = (0..x.len()).all(|a| x[a] >= bounds.lo()[a] && x[a] < bounds.hi()[a]);
            if !inside {
                break;
            }
            let r = rect.short_side();
            let i = rational::floor_to_i64(&((&x[0] - &rect.principal_vertex()[0]) / &r)) as u32;
            w = self.child_winner(w, rect.order(), i);
            let q = rect.subcube(i as usize)?;
            if q.order() >= self.params.max_order() || !self.needs_descent(q.order(), w) {
                break;
            }
            let m = int(i64::from(self.params.lattice()));
            let z: usize = (0..x.len()).fold(0, |acc, a| {
                let t = rational::floor_to_i64(&((&x[a] - &q.principal_vertex()[a]) * &m / &r));
                acc * self.params.lattice() as usize + t.clamp(0, i64::from(self.params.lattice()) - 1) as usize
            });
            rect = child_rectangle_at(&self.params, &q, z);
        }
        Ok(match w {
            Some((_, v)) => int(i64::from(v)),
            None => self.base.value_at(x),
        })
    }

    /// `ρ` written as `Σ coeff · 1_box`, in floating point.
    pub fn signed_boxes(&self) -> Vec<SignedBox> {
        let mut out = Vec::new();
        let unit = RatBox::unit(self.params.dim());
        self.push_winner(None, &unit, 1.0, &mut out);
        if self.refined.is_empty() {
            return out;
        }
        let root = self.params.root_rect();
        self.push_winner(None, &root.bounds(), -1.0, &mut out);
        for q in root.subcubes() {
            let w = self.winner(q.path(), 0);
            self.push_cube(&q, w, &mut out);
        }
        out
    }

    fn push_winner(&self, w: Winner, b: &RatBox, sign: f64, out: &mut Vec<SignedBox>) {
        match w {
            Some((_, v)) => out.push(SignedBox::new(b, sign * f64::from(v))),
            None => {
                for (x, v) in self.base.pieces(b) {
                    if !v.is_zero() {
                        out.push(SignedBox::new(&x, sign * rational::to_f64(&v)));
                    }
                }
            }
        }
    }

    fn push_cube(&self, q: &Cube, w: Winner, out: &mut Vec<SignedBox>) {
        self.push_winner(w, &q.bounds(), 1.0, out);
        if q.order() < self.params.max_order() && self.needs_descent(q.order(), w) {
            for z in 0..self.params.lattice_size() {
                let child = child_rectangle_at(&self.params, q, z);
                self.push_winner(w, &child.bounds(), -1.0, out);
                for sub in child.subcubes() {
                    let cw = self.child_winner(w, child.order(), sub.index_in_parent().unwrap() as u32);
                    self.push_cube(&sub, cw, out);
                }
            }
        }
    }

    /// Mean of `ρ` over every cell of `grid`, summed from the signed boxes.
    pub fn cell_averages(&self, grid: &Grid) -> Result<CellField> {
        self.check_inside(&grid.bounds())?;
        let d = grid.dim();
        let h = grid.h_f64();
        let lo = grid.lo_f64();
        let cells = grid.cells();
        let mut sums = vec![0.0; grid.cell_count()];
        let mut overlaps: Vec<Vec<f64>> = vec![Vec::new(); d];
        for sb in self.signed_boxes() {
            let mut ranges = Vec::with_capacity(d);
            for a in 0..d {
                let s = ((sb.lo[a] - lo[a]) / h).floor().max(0.0) as usize;
                let e = (((sb.hi[a] - lo[a]) / h).ceil().max(0.0) as usize).min(cells[a]);
                overlaps[a].clear();
                for c in s..e.max(s) {
                    let c0 = lo[a] + c as f64 * h;
                    let len = (sb.hi[a].min(c0 + h) - sb.lo[a].max(c0)).max(0.0);
                    overlaps[a].push(len / h);
                }
                ranges.push((s, e.max(s)));
            }
            for_each_index(&ranges, |idx| {
                let w: f64 = (0..d).map(|a| overlaps[a][idx[a] - ranges[a].0]).product();
                if w > 0.0 {
                    sums[grid.cell_index(idx)] += sb.coeff * w;
                }
            });
        }
        CellField::new(grid.clone(), sums)
    }

    /// Samples `ψ_δ * ρ` at the nodes of `grid`, `ρ` extended by 0 outside the
    /// unit cube. The kernel is a tensor product of one-dimensional bumps
    /// supported in `[-δ/√d, δ/√d]`, so its support lies in the ball of radius `δ`.
    pub fn mollify_to_grid(&self, delta: f64, grid: &Grid) -> Result<GridField> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParams(format!("mollification radius {delta} must be positive")));
        }
        let d = grid.dim();
        if d != self.params.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.params.dim(),
                got: d,
            });
        }
        let kernel = BumpCdf::new(d);
        let reach = delta * kernel.half_width;
        let h = grid.h_f64();
        let lo = grid.lo_f64();
        let nodes = grid.nodes_per_axis();
        let mut values = vec![0.0; grid.node_count()];
        let mut factors: Vec<Vec<f64>> = vec![Vec::new(); d];
        for sb in self.signed_boxes() {
            let mut ranges = Vec::with_capacity(d);
            for a in 0..d {
                let s = ((sb.lo[a] - reach - lo[a]) / h).floor().max(0.0) as usize;
                let e = ((((sb.hi[a] + reach - lo[a]) / h).ceil() + 1.0).max(0.0) as usize).min(nodes[a]);
                factors[a].clear();
                for n in s..e.max(s) {
                    let x = lo[a] + n as f64 * h;
                    factors[a].push(kernel.cdf((x - sb.lo[a]) / delta) - kernel.cdf((x - sb.hi[a]) / delta));
                }
                ranges.push((s, e.max(s)));
            }
            for_each_index(&ranges, |idx| {
                let w: f64 = (0..d).map(|a| factors[a][idx[a] - ranges[a].0]).product();
                if w != 0.0 {
                    values[grid.node_index(idx)] += sb.coeff * w;
                }
            });
        }
        let bound = rational::to_f64(&self.sup_norm());
        for v in &mut values {
            *v = v.clamp(-bound, bound);
        }
        GridField::new(grid.clone(), 1, values)
    }

    /// Point samples of `ρ` at the grid nodes.
    pub fn sample_nodes(&self, grid: &Grid) -> Result<GridField> {
        self.check_inside(&grid.bounds())?;
        let mut values = Vec::with_capacity(grid.node_count());
        for k in 0..grid.node_count() {
            let x = grid.node_coords_exact(&grid.node_multi_index(k));
            values.push(rational::to_f64(&self.value_at(&x)?));
        }
        GridField::new(grid.clone(), 1, values)
    }

    /// Refined cubes with their values, in application order.
    pub fn cells(&self) -> Result<Vec<(Cube, u8)>> {
        let mut out = Vec::new();
        for &k in &self.refined {
            for rect in enumerate_rectangles(&self.params, k)? {
                for q in rect.subcubes() {
                    let v = parity_value(q.index_in_parent().unwrap() as u32);
                    out.push((q, v));
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        let cells = self
            .cells()?
            .into_iter()
            .map(|(cube, value)| serde_json::json!({ "cube": cube, "value": value }))
            .collect::<Vec<_>>();
        Ok(serde_json::json!({
            "params": self.params,
            "base": self.base,
            "refined_orders": self.refined,
            "cells": cells,
        }))
    }

    /// Rebuilds a field from [`DensityField::to_json`] output. The cell list is
    /// checked against the refined orders.
    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Repr {
            params: HierarchyParams,
            #[serde(default)]
            base: BaseField,
            refined_orders: Vec<u32>,
            #[serde(default)]
            cells: Option<Vec<serde_json::Value>>,
        }
        let repr: Repr = serde_json::from_value(v.clone())?;
        let mut rho = DensityField::new(repr.params, repr.base)?;
        for k in repr.refined_orders {
            rho = rho.refine_at_order(k)?;
        }
        if let Some(cells) = repr.cells {
            let expected: u128 = rho
                .refined
                .iter()
                .map(|&k| rho.params.rect_count(k) * u128::from(rho.params.subdivision()))
                .sum();
            if cells.len() as u128 != expected {
                return Err(Error::Parse(format!(
                    "density lists {} cells, refined orders imply {expected}",
                    cells.len()
                )));
            }
        }
        Ok(rho)
    }
}

/// `coeff · 1_[lo,hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub coeff: f64,
}

impl SignedBox {
    fn new(b: &RatBox, coeff: f64) -> Self {
        Self {
            lo: b.lo_f64(),
            hi: b.hi_f64(),
            coeff,
        }
    }
}

/// Tabulated cumulative distribution of the one-dimensional bump
/// `exp(-1/(1-(t/a)^2))` on `[-a, a]`, `a = 1/√d`, normalized to unit mass.
struct BumpCdf {
    half_width: f64,
    table: Vec<f64>,
}

impl BumpCdf {
    const SAMPLES: usize = 4096;

    fn new(d: usize) -> Self {
        let a = 1.0 / (d as f64).sqrt();
        let n = Self::SAMPLES;
        let bump = |t: f64| {
            let s = t / a;
            if s.abs() >= 1.0 {
                0.0
            } else {
                (-1.0 / (1.0 - s * s)).exp()
            }
        };
        let dt = 2.0 * a / n as f64;
        let mut table = vec![0.0; n + 1];
        for k in 0..n {
            let t0 = -a + k as f64 * dt;
            // Simpson on each sub-interval.
            let area = dt / 6.0 * (bump(t0) + 4.0 * bump(t0 + dt / 2.0) + bump(t0 + dt));
            table[k + 1] = table[k] + area;
        }
        let total = table[n];
        for v in &mut table {
            *v /= total;
        }
        Self { half_width: a, table }
    }

    fn cdf(&self, t: f64) -> f64 {
        let a = self.half_width;
        if t <= -a {
            return 0.0;
        }
        if t >= a {
            return 1.0;
        }
        let u = (t + a) / (2.0 * a) * Self::SAMPLES as f64;
        let k = (u.floor() as usize).min(Self::SAMPLES - 1);
        let frac = u - k as f64;
        self.table[k] + frac * (self.table[k + 1] - self.table[k])
    }
}

/// `|∫_Q ρ − ∫_{Q'} ρ| ≥ threshold` for one adjacent pair.
#[derive(Clone, Debug, Serialize)]
pub struct Constraint {
    pub pair: AdjacentPair,
    #[serde(with = "rational::serde_rational")]
    pub threshold: Rational,
}

/// Finite list of discrepancy constraints over all adjacent pairs of order at
/// most `k0`.
#[derive(Clone, Debug, Serialize)]
pub struct ConstraintSet {
    #[serde(with = "rational::serde_rational")]
    pub eps: Rational,
    pub k0: u32,
    pub constraints: Vec<Constraint>,
}

/// `r^d (1 − ε − 5/K^(d−1))` for a pair of side `r`.
pub fn constraint_threshold(params: &HierarchyParams, r: &Rational, eps: &Rational) -> Rational {
    let d = params.dim() as u32;
    let k = int(i64::from(params.subdivision()));
    let factor = Rational::one() - eps - int(5) / rational::pow(&k, d - 1);
    rational::pow(r, d) * factor
}

pub fn build_constraint_set(rho: &DensityField, k0: u32, eps: &Rational) -> Result<ConstraintSet> {
    if !rho.is_refined_to(k0) {
        return Err(Error::InvalidParams(format!(
            "density is not refined through order {k0}"
        )));
    }
    let constraints = enumerate_adjacent_pairs(rho.params(), k0)?
        .map(|pair| {
            let threshold = constraint_threshold(rho.params(), pair.side(), eps);
            Constraint { pair, threshold }
        })
        .collect();
    Ok(ConstraintSet {
        eps: eps.clone(),
        k0,
        constraints,
    })
}

impl ConstraintSet {
    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Constraints whose threshold is not positive.
    pub fn vacuous_count(&self) -> usize {
        self.constraints
            .iter()
            .filter(|c| !c.threshold.is_positive())
            .count()
    }

    /// Indices of constraints that `rho` violates, exactly.
    pub fn violations(&self, rho: &DensityField) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (n, c) in self.constraints.iter().enumerate() {
            if rho.discrepancy(&c.pair)? < c.threshold {
                out.push(n);
            }
        }
        Ok(out)
    }

    /// Indices of constraints violated by a floating-point discrepancy function.
    pub fn violations_f64(&self, mut discrepancy: impl FnMut(&AdjacentPair) -> Result<f64>) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (n, c) in self.constraints.iter().enumerate() {
            if discrepancy(&c.pair)? < rational::to_f64(&c.threshold) {
                out.push(n);
            }
        }
        Ok(out)
    }
}

/// CSV of exact pair discrepancies: `order,rect_id,n,discrepancy,lower_bound,holds`.
pub fn write_discrepancy_table(
    rho: &DensityField,
    k0: u32,
    mut w: impl std::io::Write,
) -> Result<usize> {
    writeln!(w, "order,rect_id,n,discrepancy,lower_bound,holds")?;
    let zero = Rational::zero();
    let mut rows = 0;
    for pair in enumerate_adjacent_pairs(rho.params(), k0)? {
        let disc = rho.discrepancy(&pair)?;
        let bound = constraint_threshold(rho.params(), pair.side(), &zero);
        writeln!(
            w,
            "{},{},{},{},{},{}",
            pair.order(),
            pair.parent.id(),
            pair.index(),
            rational::format(&disc),
            rational::format(&bound),
            disc >= bound
        )?;
        rows += 1;
    }
    Ok(rows)
}
