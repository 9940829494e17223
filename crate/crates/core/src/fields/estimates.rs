//! Lipschitz constants, determinant integrals over cells and faces, and the
//! single-map determinant estimates.

use serde::Serialize;

use super::grid::{for_each_index, CellField, GridField};
use crate::error::{Error, Result};
use crate::hierarchy::{AdjacentPair, RatBox};
use crate::linalg;
use crate::rational;

/// `c_d = d * 2d`: the dimension times the number of faces of a cube.
pub fn c_d(d: usize) -> f64 {
    (2 * d * d) as f64
}

/// One checked instance of an inequality `lhs <= rhs`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub context: String,
}

impl EstimateReport {
    pub fn new(lhs: f64, rhs: f64, context: impl Into<String>) -> Self {
        Self {
            lhs,
            rhs,
            slack: rhs - lhs,
            context: context.into(),
        }
    }

    /// Report of an exact comparison; the slack is rounded from the exact
    /// difference, so its sign is never wrong.
    pub fn exact(lhs: &rational::Rational, rhs: &rational::Rational, context: impl Into<String>) -> Self {
        Self {
            lhs: rational::to_f64(lhs),
            rhs: rational::to_f64(rhs),
            slack: rational::to_f64(&(rhs - lhs)),
            context: context.into(),
        }
    }

    pub fn holds(&self, tolerance: f64) -> bool {
        self.slack >= -tolerance
    }
}

pub(crate) fn permutations(d: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..rest.len() {
            let a = rest.remove(k);
            prefix.push(a);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(k, a);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..d).collect(), &mut out);
    out
}

/// Per-component Lipschitz constant of the piecewise-linear field defined by
/// the samples.
///
/// Each cell is split into its `d!` Kuhn simplices and, in addition, the `2^d`
/// corner simplices spanned by a corner and its axis neighbours. The constant
/// is the largest gradient norm over all of them. It bounds every node-pair
/// ratio, is exact for linear fields, and bounds the row norms of the
/// forward-difference Jacobian at every corner, so `|det| <= Π Lip` holds cell
/// by cell.
pub fn lipschitz_constants(f: &GridField) -> Vec<f64> {
    let grid = f.grid();
    let d = grid.dim();
    let offsets = grid.corner_offsets();
    let perms = permutations(d);
    let inv_h = 1.0 / grid.h_f64();
    let ncomp = f.ncomp();
    let mut best = vec![0.0f64; ncomp];
    let mut corners = vec![0.0; offsets.len()];
    let ranges: Vec<(usize, usize)> = grid.cells().iter().map(|&n| (0, n)).collect();
    for_each_index(&ranges, |cell| {
        let base = grid.node_index(cell);
        for j in 0..ncomp {
            f.cell_corners(base, &offsets, j, &mut corners);
            best[j] = best[j].max(cell_slope_sq(&corners, &perms, d));
        }
    });
    best.into_iter().map(|s| s.sqrt() * inv_h).collect()
}

/// Squared largest difference-vector norm over the simplices of one cell,
/// in units of the grid step; `corners` is indexed by bitmask.
pub(crate) fn cell_slope_sq(corners: &[f64], perms: &[Vec<usize>], d: usize) -> f64 {
    let mut m = 0.0f64;
    for perm in perms {
        let mut mask = 0usize;
        let mut s = 0.0;
        for &a in perm {
            let next = mask | 1 << a;
            let g = corners[next] - corners[mask];
            s += g * g;
            mask = next;
        }
        m = m.max(s);
    }
    for mask in 0..corners.len() {
        let mut s = 0.0;
        for a in 0..d {
            let g = corners[mask | 1 << a] - corners[mask & !(1 << a)];
            s += g * g;
        }
        m = m.max(s);
    }
    m
}

pub fn lipschitz_constant(f: &GridField) -> f64 {
    lipschitz_constants(f).into_iter().fold(0.0, f64::max)
}

fn require_map(pi: &GridField) -> Result<()> {
    let d = pi.grid().dim();
    if pi.ncomp() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: pi.ncomp(),
        });
    }
    Ok(())
}

/// Cell-wise `det Dπ` from forward differences at each cell's principal node.
pub fn det_field(pi: &GridField) -> Result<CellField> {
    require_map(pi)?;
    let grid = pi.grid().clone();
    let d = grid.dim();
    let mut jac = vec![0.0; d * d];
    let values = (0..grid.cell_count())
        .map(|k| {
            pi.cell_jacobian(&grid.cell_multi_index(k), &mut jac);
            linalg::det(&jac, d)
        })
        .collect();
    CellField::new(grid, values)
}

/// `∫_box det Dπ`, summing the per-cell forward-difference determinant times
/// `h^d`. Exact for affine maps.
pub fn jacobian_det_volume(pi: &GridField, b: &RatBox) -> Result<f64> {
    weighted_det_volume(None, pi, b)
}

/// `∫_box f det Dπ` with `f` taken at cell centres; `None` means `f = 1`.
pub fn weighted_det_volume(f: Option<&GridField>, pi: &GridField, b: &RatBox) -> Result<f64> {
    require_map(pi)?;
    if let Some(f) = f {
        pi.same_grid(f)?;
    }
    let grid = pi.grid();
    let d = grid.dim();
    let ranges = grid.cell_ranges(b)?;
    let mut jac = vec![0.0; d * d];
    let mut total = 0.0;
    for_each_index(&ranges, |cell| {
        pi.cell_jacobian(cell, &mut jac);
        let w = f.map_or(1.0, |f| f.cell_center_value(cell, 0));
        total += w * linalg::det(&jac, d);
    });
    Ok(total * grid.cell_volume())
}

/// `∫_{∂box} π_1 <dπ_2 ∧ ... ∧ dπ_d, Tan>` over the faces of `box`, with the
/// boundary orientation induced by the standard orientation of the box.
///
/// Each face cell contributes `π_1` at its midpoint (mean of its corners) times
/// the determinant of forward differences of `π_2..π_d` along the face axes.
pub fn jacobian_det_boundary(pi: &GridField, b: &RatBox) -> Result<f64> {
    require_map(pi)?;
    let grid = pi.grid();
    let d = grid.dim();
    let ranges = grid.cell_ranges(b)?;
    let h = grid.h_f64();
    let m = d - 1;
    let mut total = 0.0;
    let mut jac = vec![0.0; m * m];
    for a in 0..d {
        let tangential: Vec<usize> = (0..d).filter(|&t| t != a).collect();
        let face_offsets: Vec<usize> = (0..1usize << m)
            .map(|mask| {
                (0..m)
                    .filter(|b| mask >> b & 1 == 1)
                    .map(|b| grid.strides()[tangential[b]])
                    .sum()
            })
            .collect();
        let parity = if a % 2 == 0 { 1.0 } else { -1.0 };
        for (node_a, outward) in [(ranges[a].0, -1.0), (ranges[a].1, 1.0)] {
            let mut face_ranges = ranges.clone();
            face_ranges[a] = (node_a, node_a + 1);
            let mut face_sum = 0.0;
            for_each_index(&face_ranges, |idx| {
                let base = grid.node_index(idx);
                let p1: f64 = face_offsets.iter().map(|off| pi.at(base + off, 0)).sum::<f64>()
                    / face_offsets.len() as f64;
                if m == 0 {
                    face_sum += p1;
                    return;
                }
                for (row, j) in (1..d).enumerate() {
                    let v0 = pi.at(base, j);
                    for (col, &t) in tangential.iter().enumerate() {
                        jac[row * m + col] = (pi.at(base + grid.strides()[t], j) - v0) / h;
                    }
                }
                face_sum += p1 * linalg::det(&jac, m);
            });
            total += outward * parity * face_sum;
        }
    }
    Ok(total * h.powi(m as i32))
}

/// Calls `f` with every grid node on the boundary of the grid-aligned box.
pub fn for_each_boundary_node(
    field: &GridField,
    b: &RatBox,
    mut f: impl FnMut(&[usize]),
) -> Result<()> {
    let ranges = field.grid().cell_ranges(b)?;
    let node_ranges: Vec<(usize, usize)> = ranges.iter().map(|&(s, e)| (s, e + 1)).collect();
    for_each_index(&node_ranges, |idx| {
        if idx.iter().zip(&ranges).any(|(&i, &(s, e))| i == s || i == e) {
            f(idx);
        }
    });
    Ok(())
}

/// `max over boundary nodes of ∥a(x) − b(x)∥` (Euclidean norm over components).
pub fn boundary_sup_diff(a: &GridField, b: &GridField, bx: &RatBox) -> Result<f64> {
    a.same_grid(b)?;
    if a.ncomp() != b.ncomp() {
        return Err(Error::DimensionMismatch {
            expected: a.ncomp(),
            got: b.ncomp(),
        });
    }
    let mut sup = 0.0f64;
    for_each_boundary_node(a, bx, |idx| {
        let s: f64 = a
            .node_value(idx)
            .iter()
            .zip(b.node_value(idx))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        sup = sup.max(s.sqrt());
    })?;
    Ok(sup)
}

fn cube_side(b: &RatBox) -> Result<f64> {
    let r = b.side(0);
    if (1..b.dim()).any(|a| b.side(a) != r) {
        return Err(Error::Degenerate(format!("{b} is not a cube")));
    }
    Ok(rational::to_f64(&r))
}

/// Average-determinant estimate on a cube `Q` of side `r`:
/// `|∫_Q det Dπ − ∫_Q det Dκ| <= c_d L^(d−1) r^(d−1) ∥π − κ∥_{ℓ∞(∂Q)}`,
/// with `L` the largest component Lipschitz constant of both maps on `Q`.
pub fn check_average_det(pi: &GridField, kappa: &GridField, b: &RatBox) -> Result<EstimateReport> {
    pi.same_grid(kappa)?;
    let r = cube_side(b)?;
    let d = b.dim();
    let lhs = (jacobian_det_volume(pi, b)? - jacobian_det_volume(kappa, b)?).abs();
    let l = lipschitz_constant(&pi.restrict(b)?).max(lipschitz_constant(&kappa.restrict(b)?));
    let sup = boundary_sup_diff(pi, kappa, b)?;
    let rhs = c_d(d) * l.powi(d as i32 - 1) * r.powi(d as i32 - 1) * sup;
    Ok(EstimateReport::new(lhs, rhs, format!("average-det on {b}")))
}

/// Centre node of a grid-aligned box; errors when the centre is not a node.
pub fn center_node(field: &GridField, b: &RatBox) -> Result<Vec<usize>> {
    let ranges = field.grid().cell_ranges(b)?;
    ranges
        .iter()
        .map(|&(s, e)| {
            if (e - s) % 2 == 0 {
                Ok((s + e) / 2)
            } else {
                Err(Error::GridMisaligned(format!("centre of {b} is not a grid node")))
            }
        })
        .collect()
}

/// Estimate with coefficients on a cube `Q` of side `r`:
/// `|∫ f det Dπ − ∫ g det Dκ| <= r^(d+1) (Lip f + Lip g) (√d/2) L^d
///  + r^d |f_Q − g_Q| L^d + r^(d−1) |f_Q| c_d L^(d−1) ∥π − κ∥_{ℓ∞(∂Q)}`
/// where `f_Q, g_Q` are the values at the centre of `Q`.
pub fn check_coef_estimate(
    f: &GridField,
    g: &GridField,
    pi: &GridField,
    kappa: &GridField,
    b: &RatBox,
) -> Result<EstimateReport> {
    pi.same_grid(kappa)?;
    pi.same_grid(f)?;
    pi.same_grid(g)?;
    let r = cube_side(b)?;
    let d = b.dim() as i32;
    let centre = center_node(f, b)?;
    let f_q = f.node_value(&centre)[0];
    let g_q = g.node_value(&centre)[0];
    let lhs = (weighted_det_volume(Some(f), pi, b)? - weighted_det_volume(Some(g), kappa, b)?).abs();
    let l = lipschitz_constant(&pi.restrict(b)?).max(lipschitz_constant(&kappa.restrict(b)?));
    let lip_f = lipschitz_constant(&f.restrict(b)?);
    let lip_g = lipschitz_constant(&g.restrict(b)?);
    let sup = boundary_sup_diff(pi, kappa, b)?;
    let rhs = r.powi(d + 1) * (lip_f + lip_g) * 0.5 * f64::from(d).sqrt() * l.powi(d)
        + r.powi(d) * (f_q - g_q).abs() * l.powi(d)
        + r.powi(d - 1) * f_q.abs() * c_d(d as usize) * l.powi(d - 1) * sup;
    Ok(EstimateReport::new(lhs, rhs, format!("coef on {b}")))
}

/// The field `x ↦ π(x + τ) − W` on the grid of the left cube of `pair`.
pub fn translated_comparison(pi: &GridField, pair: &AdjacentPair, w: &[f64]) -> Result<GridField> {
    if w.len() != pi.ncomp() {
        return Err(Error::DimensionMismatch {
            expected: pi.ncomp(),
            got: w.len(),
        });
    }
    let grid = pi.grid();
    let shift = grid.node_shift(&pair.tau)?;
    let left = pi.restrict(&pair.left.bounds())?;
    grid.cell_ranges(&pair.right.bounds())?;
    let ranges = grid.cell_ranges(&pair.left.bounds())?;
    let sub = left.grid().clone();
    let ncomp = pi.ncomp();
    let mut values = Vec::with_capacity(sub.node_count() * ncomp);
    let node_ranges: Vec<(usize, usize)> = ranges.iter().map(|&(s, e)| (s, e + 1)).collect();
    let mut shifted = vec![0usize; grid.dim()];
    for_each_index(&node_ranges, |idx| {
        for a in 0..idx.len() {
            shifted[a] = (idx[a] as i64 + shift[a]) as usize;
        }
        values.extend(pi.node_value(&shifted).iter().zip(w).map(|(v, wj)| v - wj));
    });
    GridField::new(sub, ncomp, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::grid::Grid;
    use crate::rational::rat;

    fn unit(d: usize) -> RatBox {
        RatBox::unit(d)
    }

    #[test]
    fn lipschitz_of_linear_fields_is_the_gradient_norm() {
        let g = Grid::unit(2, 8).unwrap();
        let f = GridField::scalar_fn(g.clone(), |x| 3.0 * x[0] + 4.0 * x[1]);
        assert!((lipschitz_constant(&f) - 5.0).abs() < 1e-12);
        let c = GridField::scalar_fn(g.clone(), |_| 7.0);
        assert_eq!(lipschitz_constant(&c), 0.0);
        let x = GridField::scalar_fn(g, |x| x[0]);
        assert!((lipschitz_constant(&x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn volume_integral_examples() {
        let g = Grid::unit(2, 16).unwrap();
        let id = GridField::identity(g.clone());
        assert!((jacobian_det_volume(&id, &unit(2)).unwrap() - 1.0).abs() < 1e-12);
        let swap = GridField::from_fn(g.clone(), 2, |x, o| {
            o[0] = x[1];
            o[1] = x[0];
        });
        assert!((jacobian_det_volume(&swap, &unit(2)).unwrap() + 1.0).abs() < 1e-12);
        let sq = GridField::from_fn(g, 2, |x, o| {
            o[0] = x[0] * x[0];
            o[1] = x[1];
        });
        assert!((jacobian_det_volume(&sq, &unit(2)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_integral_of_affine_maps_in_three_dimensions() {
        let g = Grid::unit(3, 6).unwrap();
        let a = [[1.0, 0.5, -0.2], [0.3, 2.0, 0.1], [-0.4, 0.2, 1.5]];
        let pi = GridField::from_fn(g, 3, |x, o| {
            for j in 0..3 {
                o[j] = 0.7 * j as f64 + (0..3).map(|k| a[j][k] * x[k]).sum::<f64>();
            }
        });
        let flat: Vec<f64> = a.iter().flatten().copied().collect();
        let det = linalg::det(&flat, 3);
        let b = RatBox::cube(&[rat(1, 6), rat(0, 1), rat(1, 3)], &rat(1, 2));
        let vol = jacobian_det_volume(&pi, &b).unwrap();
        let bdry = jacobian_det_boundary(&pi, &b).unwrap();
        assert!((vol - det / 8.0).abs() < 1e-10);
        assert!((bdry - det / 8.0).abs() < 1e-10);
    }

    #[test]
    fn average_det_trivial_cases() {
        let g = Grid::unit(2, 8).unwrap();
        let pi = GridField::from_fn(g, 2, |x, o| {
            o[0] = x[0] + 0.1 * (3.0 * x[1]).sin();
            o[1] = x[1];
        });
        let same = check_average_det(&pi, &pi, &unit(2)).unwrap();
        assert_eq!(same.lhs, 0.0);
        let moved = pi.map(|v| v + 0.25);
        let rep = check_average_det(&pi, &moved, &unit(2)).unwrap();
        assert!(rep.lhs < 1e-12);
        assert!(rep.slack >= 0.0);
    }

    #[test]
    fn coef_estimate_needs_a_centre_node() {
        let g = Grid::unit(2, 3).unwrap();
        let f = GridField::scalar_fn(g.clone(), |_| 1.0);
        let pi = GridField::identity(g);
        assert!(check_coef_estimate(&f, &f, &pi, &pi, &unit(2)).is_err());
    }

    #[test]
    fn translation_of_the_identity() {
        use crate::hierarchy::HierarchyParams;
        let params = HierarchyParams::new(2, 2, 2, 0).unwrap();
        let pair = AdjacentPair::new(&params.root_rect(), 0).unwrap();
        let grid = Grid::over_box(&params.root_rect().bounds(), 8).unwrap();
        let pi = GridField::identity(grid);
        let tilde = translated_comparison(&pi, &pair, &[0.0, 0.0]).unwrap();
        let own = pi.restrict(&pair.left.bounds()).unwrap();
        let sup = boundary_sup_diff(&own, &tilde, &pair.left.bounds()).unwrap();
        assert!((sup - 0.5).abs() < 1e-12);
        let exact = translated_comparison(&pi, &pair, &[0.5, 0.0]).unwrap();
        assert_eq!(boundary_sup_diff(&own, &exact, &pair.left.bounds()).unwrap(), 0.0);
    }
}
