use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::RatBox;
use crate::linalg;
use crate::rational::{self, int, Rational};

/// Uniform grid of `cells[a]` cells of side `h` along each axis, starting at `lo`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    lo: Vec<Rational>,
    h: Rational,
    cells: Vec<usize>,
    lo_f: Vec<f64>,
    h_f: f64,
    strides: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    #[serde(with = "rational::serde_rational::vec")]
    lo: Vec<Rational>,
    #[serde(with = "rational::serde_rational")]
    h: Rational,
    cells: Vec<usize>,
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        Grid::new(s.lo, s.h, s.cells)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec {
            lo: g.lo,
            h: g.h,
            cells: g.cells,
        }
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.lo == other.lo && self.h == other.h && self.cells == other.cells
    }
}

impl Grid {
    pub fn new(lo: Vec<Rational>, h: Rational, cells: Vec<usize>) -> Result<Self> {
        if lo.len() != cells.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: cells.len(),
            });
        }
        if lo.is_empty() {
            return Err(Error::Degenerate("zero-dimensional grid".into()));
        }
        if h <= Rational::zero() {
            return Err(Error::InvalidParams("grid step must be positive".into()));
        }
        if cells.iter().any(|&n| n == 0) {
            return Err(Error::Degenerate("grid needs at least 2 nodes per axis".into()));
        }
        let d = cells.len();
        let mut strides = vec![1usize; d];
        for a in (0..d - 1).rev() {
            strides[a] = strides[a + 1] * (cells[a + 1] + 1);
        }
        Ok(Self {
            lo_f: lo.iter().map(rational::to_f64).collect(),
            h_f: rational::to_f64(&h),
            lo,
            h,
            cells,
            strides,
        })
    }

    /// `[0,1]^d` with `n` cells per axis.
    pub fn unit(d: usize, n: usize) -> Result<Self> {
        Self::over_box(&RatBox::unit(d), n)
    }

    /// Grid covering `b` with `n` cells along axis 1; every side must be a
    /// multiple of the resulting step.
    pub fn over_box(b: &RatBox, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Degenerate("grid needs at least one cell".into()));
        }
        let h = b.side(0) / int(n as i64);
        let mut cells = Vec::with_capacity(b.dim());
        for a in 0..b.dim() {
            let count = b.side(a) / &h;
            if !rational::is_integer(&count) {
                return Err(Error::GridMisaligned(format!(
                    "side {} of axis {} is not a multiple of h = {}",
                    rational::format(&b.side(a)),
                    a + 1,
                    rational::format(&h)
                )));
            }
            cells.push(rational::floor_to_i64(&count) as usize);
        }
        Self::new(b.lo().to_vec(), h, cells)
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn h(&self) -> &Rational {
        &self.h
    }

    pub fn h_f64(&self) -> f64 {
        self.h_f
    }

    pub fn lo(&self) -> &[Rational] {
        &self.lo
    }

    pub fn lo_f64(&self) -> &[f64] {
        &self.lo_f
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn nodes_per_axis(&self) -> Vec<usize> {
        self.cells.iter().map(|n| n + 1).collect()
    }

    pub fn node_count(&self) -> usize {
        self.cells.iter().map(|n| n + 1).product()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn bounds(&self) -> RatBox {
        let hi = self
            .lo
            .iter()
            .zip(&self.cells)
            .map(|(l, &n)| l + &self.h * int(n as i64))
            .collect();
        RatBox::new(self.lo.clone(), hi).expect("grid bounds are ordered")
    }

    pub fn cell_volume(&self) -> f64 {
        self.h_f.powi(self.dim() as i32)
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn node_multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in 0..self.dim() {
            idx[a] = flat / self.strides[a];
            flat %= self.strides[a];
        }
        idx
    }

    pub fn node_coords(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.lo_f)
            .map(|(&i, l)| l + i as f64 * self.h_f)
            .collect()
    }

    pub fn node_coords_exact(&self, idx: &[usize]) -> Vec<Rational> {
        idx.iter()
            .zip(&self.lo)
            .map(|(&i, l)| l + &self.h * int(i as i64))
            .collect()
    }

    /// Flat index of a cell given by its principal node.
    pub fn cell_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for a in 0..self.dim() {
            flat = flat * self.cells[a] + idx[a];
        }
        flat
    }

    pub fn cell_multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.cells[a];
            flat /= self.cells[a];
        }
        idx
    }

    pub fn cell_center(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.lo_f)
            .map(|(&i, l)| l + (i as f64 + 0.5) * self.h_f)
            .collect()
    }

    pub fn cell_box(&self, idx: &[usize]) -> RatBox {
        let lo = self.node_coords_exact(idx);
        RatBox::cube(&lo, &self.h)
    }

    /// Node offsets of the `2^d` cell corners, indexed by bitmask (bit `a` = +e_a).
    pub fn corner_offsets(&self) -> Vec<usize> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| (0..d).filter(|a| mask >> a & 1 == 1).map(|a| self.strides[a]).sum())
            .collect()
    }

    /// Half-open cell ranges `[start, end)` per axis covering `b` exactly.
    pub fn cell_ranges(&self, b: &RatBox) -> Result<Vec<(usize, usize)>> {
        if b.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: b.dim(),
            });
        }
        let mut out = Vec::with_capacity(self.dim());
        for a in 0..self.dim() {
            let s = (&b.lo()[a] - &self.lo[a]) / &self.h;
            let e = (&b.hi()[a] - &self.lo[a]) / &self.h;
            if !rational::is_integer(&s) || !rational::is_integer(&e) {
                return Err(Error::GridMisaligned(format!("{b}")));
            }
            let (s, e) = (rational::floor_to_i64(&s), rational::floor_to_i64(&e));
            if s < 0 || e > self.cells[a] as i64 || s >= e {
                return Err(Error::GridMisaligned(format!("{b} is not inside the grid")));
            }
            out.push((s as usize, e as usize));
        }
        Ok(out)
    }

    /// Integer node offset for a translation vector that is a multiple of `h`.
    pub fn node_shift(&self, tau: &[Rational]) -> Result<Vec<i64>> {
        tau.iter()
            .map(|t| {
                let s = t / &self.h;
                if rational::is_integer(&s) {
                    Ok(rational::floor_to_i64(&s))
                } else {
                    Err(Error::GridMisaligned(format!(
                        "translation {} is not a multiple of h",
                        rational::format(t)
                    )))
                }
            })
            .collect()
    }

    pub fn sub_grid(&self, ranges: &[(usize, usize)]) -> Grid {
        let lo = ranges
            .iter()
            .zip(&self.lo)
            .map(|(&(s, _), l)| l + &self.h * int(s as i64))
            .collect();
        let cells = ranges.iter().map(|&(s, e)| e - s).collect();
        Grid::new(lo, self.h.clone(), cells).expect("sub-grid of a valid grid")
    }
}

/// Calls `f` for every multi-index in the product of half-open ranges,
/// last axis fastest.
pub fn for_each_index(ranges: &[(usize, usize)], mut f: impl FnMut(&[usize])) {
    if ranges.iter().any(|&(s, e)| s >= e) {
        return;
    }
    let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    loop {
        f(&idx);
        let mut a = ranges.len();
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < ranges[a].1 {
                break;
            }
            idx[a] = ranges[a].0;
        }
    }
}

/// Samples of a scalar (`ncomp = 1`) or vector field at the grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: Grid,
    ncomp: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, ncomp: usize, values: Vec<f64>) -> Result<Self> {
        if ncomp == 0 {
            return Err(Error::Degenerate("field without components".into()));
        }
        if values.len() != grid.node_count() * ncomp {
            return Err(Error::DimensionMismatch {
                expected: grid.node_count() * ncomp,
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite sample {bad}")));
        }
        Ok(Self { grid, ncomp, values })
    }

    pub fn zeros(grid: Grid, ncomp: usize) -> Self {
        let n = grid.node_count() * ncomp;
        Self {
            grid,
            ncomp,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: Grid, ncomp: usize, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut values = vec![0.0; grid.node_count() * ncomp];
        let ranges: Vec<(usize, usize)> = grid.nodes_per_axis().into_iter().map(|n| (0, n)).collect();
        for_each_index(&ranges, |idx| {
            let x = grid.node_coords(idx);
            let k = grid.node_index(idx);
            f(&x, &mut values[k * ncomp..(k + 1) * ncomp]);
        });
        Self { grid, ncomp, values }
    }

    pub fn scalar_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, 1, |x, out| out[0] = f(x))
    }

    /// The identity map `x -> x`.
    pub fn identity(grid: Grid) -> Self {
        let d = grid.dim();
        Self::from_fn(grid, d, |x, out| out.copy_from_slice(x))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, node: usize, comp: usize) -> f64 {
        self.values[node * self.ncomp + comp]
    }

    pub fn node_value(&self, idx: &[usize]) -> &[f64] {
        let k = self.grid.node_index(idx);
        &self.values[k * self.ncomp..(k + 1) * self.ncomp]
    }

    pub fn component(&self, j: usize) -> GridField {
        let values = self.values.iter().skip(j).step_by(self.ncomp).copied().collect();
        GridField {
            grid: self.grid.clone(),
            ncomp: 1,
            values,
        }
    }

    pub fn from_components(parts: &[GridField]) -> Result<GridField> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Degenerate("no components".into()))?;
        for p in parts {
            if p.grid != first.grid {
                return Err(Error::GridMismatch("components live on different grids".into()));
            }
            if p.ncomp != 1 {
                return Err(Error::DimensionMismatch { expected: 1, got: p.ncomp });
            }
        }
        let n = first.grid.node_count();
        let mut values = Vec::with_capacity(n * parts.len());
        for k in 0..n {
            for p in parts {
                values.push(p.values[k]);
            }
        }
        Ok(GridField {
            grid: first.grid.clone(),
            ncomp: parts.len(),
            values,
        })
    }

    pub fn same_grid(&self, other: &GridField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("fields are sampled on different grids".into()));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            grid: self.grid.clone(),
            ncomp: self.ncomp,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> GridField {
        self.map(|v| v * s)
    }

    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<GridField> {
        self.same_grid(other)?;
        if self.ncomp != other.ncomp {
            return Err(Error::DimensionMismatch {
                expected: self.ncomp,
                got: other.ncomp,
            });
        }
        Ok(GridField {
            grid: self.grid.clone(),
            ncomp: self.ncomp,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Per-component `sup |F|` over all nodes.
    pub fn sup_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.ncomp];
        for chunk in self.values.chunks(self.ncomp) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o = o.max(v.abs());
            }
        }
        out
    }

    /// Restriction to a grid-aligned sub-box.
    pub fn restrict(&self, b: &RatBox) -> Result<GridField> {
        let ranges = self.grid.cell_ranges(b)?;
        let sub = self.grid.sub_grid(&ranges);
        let node_ranges: Vec<(usize, usize)> = ranges.iter().map(|&(s, e)| (s, e + 1)).collect();
        let mut values = Vec::with_capacity(sub.node_count() * self.ncomp);
        for_each_index(&node_ranges, |idx| values.extend_from_slice(self.node_value(idx)));
        Ok(GridField {
            grid: sub,
            ncomp: self.ncomp,
            values,
        })
    }

    /// Values at the `2^d` corners of the cell with principal node `idx`,
    /// component `comp`, indexed by bitmask.
    pub fn cell_corners(&self, base: usize, offsets: &[usize], comp: usize, out: &mut [f64]) {
        for (o, off) in out.iter_mut().zip(offsets) {
            *o = self.values[(base + off) * self.ncomp + comp];
        }
    }

    /// Multilinear value at the cell centre (mean of the corners).
    pub fn cell_center_value(&self, cell: &[usize], comp: usize) -> f64 {
        let base = self.grid.node_index(cell);
        let offsets = self.grid.corner_offsets();
        offsets
            .iter()
            .map(|off| self.values[(base + off) * self.ncomp + comp])
            .sum::<f64>()
            / offsets.len() as f64
    }

    /// Forward-difference Jacobian `J[j][a] = (F^j(v + h e_a) - F^j(v)) / h` at
    /// the principal node of the cell.
    pub fn cell_jacobian(&self, cell: &[usize], out: &mut [f64]) {
        let d = self.grid.dim();
        let base = self.grid.node_index(cell);
        let inv_h = 1.0 / self.grid.h_f;
        for j in 0..self.ncomp {
            let v0 = self.values[base * self.ncomp + j];
            for a in 0..d {
                let v1 = self.values[(base + self.grid.strides[a]) * self.ncomp + j];
                out[j * d + a] = (v1 - v0) * inv_h;
            }
        }
    }

    pub fn cell_det(&self, cell: &[usize]) -> f64 {
        let d = self.grid.dim();
        let mut jac = vec![0.0; d * d];
        self.cell_jacobian(cell, &mut jac);
        linalg::det(&jac, d)
    }

    /// Piecewise-linear interpolation on the Kuhn triangulation of each cell.
    /// Points outside the grid box are clamped onto it.
    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        let d = self.grid.dim();
        let mut cell = vec![0usize; d];
        let mut frac = vec![0.0f64; d];
        for a in 0..d {
            let t = ((x[a] - self.grid.lo_f[a]) / self.grid.h_f).clamp(0.0, self.grid.cells[a] as f64);
            let c = (t.floor() as usize).min(self.grid.cells[a] - 1);
            cell[a] = c;
            frac[a] = t - c as f64;
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]));
        let mut node = self.grid.node_index(&cell);
        for j in 0..self.ncomp {
            out[j] = self.values[node * self.ncomp + j];
        }
        for &a in &order {
            let next = node + self.grid.strides[a];
            for j in 0..self.ncomp {
                out[j] += frac[a] * (self.values[next * self.ncomp + j] - self.values[node * self.ncomp + j]);
            }
            node = next;
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncomp];
        self.interpolate(x, &mut out);
        out
    }
}

/// One value per grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    grid: Grid,
    values: Vec<f64>,
}

impl CellField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::DimensionMismatch {
                expected: grid.cell_count(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[usize]) -> f64) -> Self {
        let values = (0..grid.cell_count())
            .map(|k| f(&grid.cell_multi_index(k)))
            .collect();
        Self { grid, values }
    }

    pub fn constant(grid: Grid, v: f64) -> Self {
        let n = grid.cell_count();
        Self {
            grid,
            values: vec![v; n],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// `Σ v h^d` over the cells of a grid-aligned box.
    pub fn integrate(&self, b: &RatBox) -> Result<f64> {
        let ranges = self.grid.cell_ranges(b)?;
        let mut total = 0.0;
        for_each_index(&ranges, |idx| total += self.values[self.grid.cell_index(idx)]);
        Ok(total * self.grid.cell_volume())
    }

    pub fn max_abs_diff(&self, other: &CellField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    #[test]
    fn indexing_roundtrip() {
        let g = Grid::new(vec![rat(0, 1), rat(0, 1)], rat(1, 4), vec![4, 2]).unwrap();
        assert_eq!(g.node_count(), 15);
        for k in 0..g.node_count() {
            assert_eq!(g.node_index(&g.node_multi_index(k)), k);
        }
        for k in 0..g.cell_count() {
            assert_eq!(g.cell_index(&g.cell_multi_index(k)), k);
        }
        assert_eq!(g.bounds(), RatBox::new(vec![rat(0, 1), rat(0, 1)], vec![rat(1, 1), rat(1, 2)]).unwrap());
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        assert!(Grid::new(vec![rat(0, 1)], rat(1, 2), vec![0]).is_err());
        assert!(Grid::new(vec![rat(0, 1)], rat(0, 1), vec![2]).is_err());
        let b = RatBox::new(vec![rat(0, 1), rat(0, 1)], vec![rat(1, 1), rat(1, 3)]).unwrap();
        assert!(Grid::over_box(&b, 4).is_err());
        assert_eq!(Grid::over_box(&b, 6).unwrap().cells(), &[6, 2]);
    }

    #[test]
    fn cell_ranges_require_alignment() {
        let g = Grid::unit(2, 8).unwrap();
        let b = RatBox::cube(&[rat(1, 4), rat(0, 1)], &rat(1, 2));
        assert_eq!(g.cell_ranges(&b).unwrap(), vec![(2, 6), (0, 4)]);
        let bad = RatBox::cube(&[rat(1, 3), rat(0, 1)], &rat(1, 2));
        assert!(matches!(g.cell_ranges(&bad), Err(Error::GridMisaligned(_))));
    }

    #[test]
    fn interpolation_reproduces_affine_fields() {
        let g = Grid::unit(3, 5).unwrap();
        let f = GridField::from_fn(g, 2, |x, out| {
            out[0] = 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2];
            out[1] = -x[2];
        });
        for x in [[0.13, 0.77, 0.41], [0.0, 1.0, 0.5], [0.999, 0.2, 0.61]] {
            let v = f.eval(&x);
            assert!((v[0] - (1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2])).abs() < 1e-12);
            assert!((v[1] + x[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn restriction_keeps_values() {
        let g = Grid::unit(2, 4).unwrap();
        let f = GridField::scalar_fn(g, |x| x[0] + 10.0 * x[1]);
        let b = RatBox::cube(&[rat(1, 4), rat(1, 2)], &rat(1, 2));
        let sub = f.restrict(&b).unwrap();
        assert_eq!(sub.grid().cells(), &[2, 2]);
        assert!((sub.node_value(&[0, 0])[0] - (0.25 + 5.0)).abs() < 1e-12);
        assert!((sub.node_value(&[2, 2])[0] - (0.75 + 10.0)).abs() < 1e-12);
    }
}
