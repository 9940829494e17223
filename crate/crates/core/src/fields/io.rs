//! Field import and export.
//!
//! CSV: one row per node, `x1,...,xd` followed by one column per component
//! (`value` for scalars, `v1,...` otherwise). Nodes are in row-major order with
//! the last axis fastest.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `PJEGRID\0` |
//! | 4 | `u32` format version (1) |
//! | 4 | `u32` dimension `d` |
//! | 4 | `u32` components per node |
//! | 4 | `u32` reserved, zero |
//! | 8·d | `u64` cell count per axis |
//! | 16·d | lower corner, per axis `i64` numerator then `i64` denominator |
//! | 16 | step `h` as `i64` numerator, `i64` denominator |
//! | 8·n | `f64` node values, node-major, components contiguous |

use std::io::{BufRead, Read, Write};

use num_bigint::BigInt;
use num_traits::ToPrimitive;

use super::grid::{Grid, GridField};
use crate::error::{Error, Result};
use crate::rational::Rational;

pub const MAGIC: &[u8; 8] = b"PJEGRID\0";
pub const VERSION: u32 = 1;

fn header(d: usize, ncomp: usize) -> String {
    let mut cols: Vec<String> = (1..=d).map(|a| format!("x{a}")).collect();
    if ncomp == 1 {
        cols.push("value".into());
    } else {
        cols.extend((1..=ncomp).map(|j| format!("v{j}")));
    }
    cols.join(",")
}

pub fn write_csv(field: &GridField, mut w: impl Write) -> Result<()> {
    let grid = field.grid();
    writeln!(w, "{}", header(grid.dim(), field.ncomp()))?;
    for k in 0..grid.node_count() {
        let idx = grid.node_multi_index(k);
        let mut row: Vec<String> = grid.node_coords(&idx).iter().map(|x| format!("{x}")).collect();
        row.extend(field.node_value(&idx).iter().map(|v| format!("{v}")));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a CSV written by [`write_csv`] onto a known grid; node coordinates
/// must match the grid to within `1e-9 h`.
pub fn read_csv(grid: Grid, r: impl BufRead) -> Result<GridField> {
    let d = grid.dim();
    let mut lines = r.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))??;
    let ncols = head.split(',').count();
    if ncols <= d {
        return Err(Error::Parse(format!("header `{head}` has no value columns")));
    }
    let ncomp = ncols - d;
    let mut values = Vec::with_capacity(grid.node_count() * ncomp);
    let tol = 1e-9 * grid.h_f64();
    let mut k = 0usize;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}"))))
            .collect::<Result<_>>()?;
        if nums.len() != ncols {
            return Err(Error::Parse(format!("row {} has {} columns, expected {ncols}", k + 2, nums.len())));
        }
        if k >= grid.node_count() {
            return Err(Error::Parse("more rows than grid nodes".into()));
        }
        let x = grid.node_coords(&grid.node_multi_index(k));
        if x.iter().zip(&nums).any(|(a, b)| (a - b).abs() > tol) {
            return Err(Error::GridMismatch(format!("row {} is not at node {:?}", k + 2, x)));
        }
        values.extend_from_slice(&nums[d..]);
        k += 1;
    }
    GridField::new(grid, ncomp, values)
}

fn rat_to_i64_pair(q: &Rational) -> Result<(i64, i64)> {
    match (q.numer().to_i64(), q.denom().to_i64()) {
        (Some(n), Some(d)) => Ok((n, d)),
        _ => Err(Error::InvalidParams(format!("{q} does not fit the binary header"))),
    }
}

pub fn write_binary(field: &GridField, mut w: impl Write) -> Result<()> {
    let grid = field.grid();
    w.write_all(MAGIC)?;
    for v in [VERSION, grid.dim() as u32, field.ncomp() as u32, 0] {
        w.write_all(&v.to_le_bytes())?;
    }
    for &n in grid.cells() {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for q in grid.lo().iter().chain(std::iter::once(grid.h())) {
        let (n, d) = rat_to_i64_pair(q)?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_rational(r: &mut impl Read) -> Result<Rational> {
    let n = i64::from_le_bytes(read_array(r)?);
    let d = i64::from_le_bytes(read_array(r)?);
    if d <= 0 {
        return Err(Error::Parse(format!("non-positive denominator {d}")));
    }
    Ok(Rational::new(BigInt::from(n), BigInt::from(d)))
}

pub fn read_binary(mut r: impl Read) -> Result<GridField> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a grid field file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported format version {version}")));
    }
    let d = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let ncomp = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let _reserved = u32::from_le_bytes(read_array(&mut r)?);
    let cells = (0..d)
        .map(|_| Ok(u64::from_le_bytes(read_array(&mut r)?) as usize))
        .collect::<Result<Vec<_>>>()?;
    let lo = (0..d).map(|_| read_rational(&mut r)).collect::<Result<Vec<_>>>()?;
    let h = read_rational(&mut r)?;
    let grid = Grid::new(lo, h, cells)?;
    let n = grid.node_count() * ncomp;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(f64::from_le_bytes(read_array(&mut r)?));
    }
    GridField::new(grid, ncomp, values)
}
