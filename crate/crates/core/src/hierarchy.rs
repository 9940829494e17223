//! The admissible rectangle/cube hierarchy built from the reference lattice.
//!
//! Every admissible rectangle `R` has its long side along axis 1 and factor
//! `F(R) = K`: `R = [0,c] x [0,c/K]^(d-1) + p`. It splits into `K` cubes
//! `Q(R,i)` of side `c/K`. Inside each cube `Q` of side `r` sit `M^d` child
//! rectangles `R(Q,z) = [0,r/M] x [0,r/(MK)]^(d-1) + p(Q) + r z` for `z` in the
//! reference lattice. All coordinates are exact rationals.

use std::fmt;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{self, int, rat, Rational};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct HierarchyParams {
    dim: usize,
    subdivision: u32,
    lattice: u32,
    max_order: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawParams {
    d: usize,
    #[serde(rename = "K")]
    k: u32,
    #[serde(rename = "M")]
    m: u32,
    k_max: u32,
}

impl TryFrom<RawParams> for HierarchyParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        HierarchyParams::new(raw.d, raw.k, raw.m, raw.k_max)
    }
}

impl From<HierarchyParams> for RawParams {
    fn from(p: HierarchyParams) -> Self {
        RawParams {
            d: p.dim,
            k: p.subdivision,
            m: p.lattice,
            k_max: p.max_order,
        }
    }
}

impl HierarchyParams {
    /// `d` dimension, `k` subdivision factor K, `m` lattice density M,
    /// `k_max` deepest order that may be enumerated.
    pub fn new(d: usize, k: u32, m: u32, k_max: u32) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidParams(format!("dimension d={d} must be >= 2")));
        }
        if k < 2 {
            return Err(Error::InvalidParams(format!("subdivision K={k} must be >= 2")));
        }
        if m < 2 {
            return Err(Error::InvalidParams(format!("lattice density M={m} must be >= 2")));
        }
        Ok(Self {
            dim: d,
            subdivision: k,
            lattice: m,
            max_order: k_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// K
    pub fn subdivision(&self) -> u32 {
        self.subdivision
    }

    /// M
    pub fn lattice(&self) -> u32 {
        self.lattice
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    pub fn with_max_order(&self, k_max: u32) -> Self {
        Self {
            max_order: k_max,
            ..self.clone()
        }
    }

    /// Long side `1/(KM)^k` of a rectangle of order `k`.
    pub fn rect_long_side(&self, order: u32) -> Rational {
        let km = int(i64::from(self.subdivision) * i64::from(self.lattice));
        rational::pow(&km, order).recip()
    }

    /// Side `1/(K (KM)^k)` of a cube of order `k`.
    pub fn cube_side(&self, order: u32) -> Rational {
        self.rect_long_side(order) / int(i64::from(self.subdivision))
    }

    pub fn lattice_size(&self) -> usize {
        (self.lattice as usize).pow(self.dim as u32)
    }

    /// Number of admissible rectangles of order `k`: `(K M^d)^k`.
    pub fn rect_count(&self, order: u32) -> u128 {
        let per = u128::from(self.subdivision) * self.lattice_size() as u128;
        per.pow(order)
    }

    /// Number of adjacent pairs of order at most `k_max`.
    pub fn adjacent_pair_count(&self, k_max: u32) -> u128 {
        (0..=k_max).map(|k| self.rect_count(k)).sum::<u128>() * u128::from(self.subdivision - 1)
    }

    /// The order-0 rectangle `[0,1] x [0,1/K]^(d-1)`.
    pub fn root_rect(&self) -> Rect {
        Rect {
            p: vec![Rational::zero(); self.dim],
            c: Rational::one(),
            factor: self.subdivision,
            order: 0,
            path: Vec::new(),
        }
    }

    fn check_order(&self, order: u32) -> Result<()> {
        if order > self.max_order {
            return Err(Error::OrderTooLarge {
                order,
                max_order: self.max_order,
            });
        }
        Ok(())
    }

    /// The rectangle of order `k` at the origin; all rectangles of order `k`
    /// are translates of it.
    pub fn root_rect_of_order(&self, k: u32) -> Rect {
        let mut rect = self.root_rect();
        for _ in 0..k {
            let q = rect.subcube(0).expect("K >= 2");
            rect = child_rectangle_at(self, &q, 0);
        }
        rect
    }

    /// Lattice point with linear index `idx` (first coordinate most significant).
    pub fn lattice_point(&self, idx: usize) -> Vec<Rational> {
        let m = self.lattice as usize;
        let mut digits = vec![0usize; self.dim];
        let mut rest = idx;
        for slot in digits.iter_mut().rev() {
            *slot = rest % m;
            rest /= m;
        }
        digits
            .into_iter()
            .map(|a| rat(a as i64, i64::from(self.lattice)))
            .collect()
    }

    pub fn lattice_index(&self, z: &[Rational]) -> Result<usize> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.len(),
            });
        }
        let m = int(i64::from(self.lattice));
        let mut idx = 0usize;
        for coord in z {
            let scaled = coord * &m;
            if !rational::is_integer(&scaled) || scaled < Rational::zero() || scaled >= m {
                return Err(Error::NotOnLattice(
                    z.iter().map(rational::format).collect::<Vec<_>>().join(", "),
                ));
            }
            idx = idx * self.lattice as usize + rational::floor_to_i64(&scaled) as usize;
        }
        Ok(idx)
    }
}

/// `Ref = (1/M) Z^d ∩ [0, 1 - 1/M]^d` in lexicographic order.
pub fn reference_lattice(params: &HierarchyParams) -> Vec<Vec<Rational>> {
    (0..params.lattice_size())
        .map(|i| params.lattice_point(i))
        .collect()
}

/// Closed axis-aligned box with rational corners.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RatBox {
    #[serde(with = "rational::serde_rational::vec")]
    lo: Vec<Rational>,
    #[serde(with = "rational::serde_rational::vec")]
    hi: Vec<Rational>,
}

impl RatBox {
    pub fn new(lo: Vec<Rational>, hi: Vec<Rational>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::InvalidParams("box lower corner exceeds upper corner".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit(d: usize) -> Self {
        Self {
            lo: vec![Rational::zero(); d],
            hi: vec![Rational::one(); d],
        }
    }

    /// `[0, side]^d + corner`
    pub fn cube(corner: &[Rational], side: &Rational) -> Self {
        Self {
            lo: corner.to_vec(),
            hi: corner.iter().map(|c| c + side).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[Rational] {
        &self.lo
    }

    pub fn hi(&self) -> &[Rational] {
        &self.hi
    }

    pub fn side(&self, axis: usize) -> Rational {
        &self.hi[axis] - &self.lo[axis]
    }

    pub fn volume(&self) -> Rational {
        (0..self.dim()).fold(Rational::one(), |acc, a| acc * self.side(a))
    }

    /// Intersection with non-empty interior, `None` otherwise.
    pub fn intersect(&self, other: &RatBox) -> Option<RatBox> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for a in 0..self.dim() {
            let l = std::cmp::max(&self.lo[a], &other.lo[a]).clone();
            let h = std::cmp::min(&self.hi[a], &other.hi[a]).clone();
            if l >= h {
                return None;
            }
            lo.push(l);
            hi.push(h);
        }
        Some(RatBox { lo, hi })
    }

    pub fn overlaps(&self, other: &RatBox) -> bool {
        (0..self.dim()).all(|a| self.lo[a] < other.hi[a] && other.lo[a] < self.hi[a])
    }

    pub fn contains_box(&self, other: &RatBox) -> bool {
        (0..self.dim()).all(|a| self.lo[a] <= other.lo[a] && other.hi[a] <= self.hi[a])
    }

    pub fn contains_point(&self, x: &[Rational]) -> bool {
        (0..self.dim()).all(|a| self.lo[a] <= x[a] && x[a] <= self.hi[a])
    }

    pub fn center(&self) -> Vec<Rational> {
        let two = int(2);
        (0..self.dim())
            .map(|a| (&self.lo[a] + &self.hi[a]) / &two)
            .collect()
    }

    pub fn lo_f64(&self) -> Vec<f64> {
        self.lo.iter().map(rational::to_f64).collect()
    }

    pub fn hi_f64(&self) -> Vec<f64> {
        self.hi.iter().map(rational::to_f64).collect()
    }
}

impl fmt::Display for RatBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = (0..self.dim())
            .map(|a| format!("[{}, {}]", rational::format(&self.lo[a]), rational::format(&self.hi[a])))
            .collect();
        write!(f, "{}", parts.join(" x "))
    }
}

fn path_id(prefix: &str, path: &[u32]) -> String {
    let mut s = prefix.to_string();
    for step in path {
        s.push('.');
        s.push_str(&step.to_string());
    }
    s
}

/// Integral rectangle `[0,c] x [0,c/F]^(d-1) + p`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    p: Vec<Rational>,
    c: Rational,
    factor: u32,
    order: u32,
    /// `(i_0, z_1, i_1, ..., i_{k-1}, z_k)` with lattice points by linear index.
    path: Vec<u32>,
}

impl Rect {
    pub fn principal_vertex(&self) -> &[Rational] {
        &self.p
    }

    pub fn long_side(&self) -> &Rational {
        &self.c
    }

    pub fn short_side(&self) -> Rational {
        &self.c / int(i64::from(self.factor))
    }

    pub fn factor(&self) -> u32 {
        self.factor
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn path(&self) -> &[u32] {
        &self.path
    }

    /// `l(R) = p`
    pub fn left(&self) -> Vec<Rational> {
        self.p.clone()
    }

    /// `r(R) = p + c e_1`
    pub fn right(&self) -> Vec<Rational> {
        let mut r = self.p.clone();
        r[0] += &self.c;
        r
    }

    pub fn bounds(&self) -> RatBox {
        let short = self.short_side();
        let hi = self
            .p
            .iter()
            .enumerate()
            .map(|(a, x)| if a == 0 { x + &self.c } else { x + &short })
            .collect();
        RatBox {
            lo: self.p.clone(),
            hi,
        }
    }

    pub fn volume(&self) -> Rational {
        let short = self.short_side();
        rational::pow(&short, (self.dim() - 1) as u32) * &self.c
    }

    pub fn id(&self) -> String {
        path_id("R", &self.path)
    }

    /// `Q(R,i) = [0, c/F]^d + p + i (c/F) e_1`
    pub fn subcube(&self, i: usize) -> Result<Cube> {
        if i >= self.factor as usize {
            return Err(Error::IndexOutOfRange {
                index: i,
                max: self.factor as usize - 1,
            });
        }
        let r = self.short_side();
        let mut p = self.p.clone();
        p[0] += &r * int(i as i64);
        let mut path = self.path.clone();
        path.push(i as u32);
        Ok(Cube {
            p,
            r,
            order: self.order,
            path,
        })
    }

    pub fn subcubes(&self) -> impl Iterator<Item = Cube> + '_ {
        (0..self.factor as usize).map(move |i| self.subcube(i).expect("index in range"))
    }
}

impl Serialize for Rect {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            id: String,
            #[serde(with = "rational::serde_rational::vec")]
            p: &'a [Rational],
            #[serde(with = "rational::serde_rational")]
            c: &'a Rational,
            order: u32,
        }
        Repr {
            id: self.id(),
            p: &self.p,
            c: &self.c,
            order: self.order,
        }
        .serialize(s)
    }
}

/// Cube `[0,r]^d + p`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cube {
    p: Vec<Rational>,
    r: Rational,
    order: u32,
    path: Vec<u32>,
}

impl Cube {
    /// A cube outside the hierarchy (empty path), e.g. for tests.
    pub fn free(p: Vec<Rational>, r: Rational, order: u32) -> Self {
        Self {
            p,
            r,
            order,
            path: Vec::new(),
        }
    }

    pub fn principal_vertex(&self) -> &[Rational] {
        &self.p
    }

    pub fn side(&self) -> &Rational {
        &self.r
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn path(&self) -> &[u32] {
        &self.path
    }

    /// Index of this cube inside its parent rectangle, if it belongs to the hierarchy.
    pub fn index_in_parent(&self) -> Option<usize> {
        self.path.last().map(|&i| i as usize)
    }

    pub fn bounds(&self) -> RatBox {
        RatBox::cube(&self.p, &self.r)
    }

    pub fn volume(&self) -> Rational {
        rational::pow(&self.r, self.dim() as u32)
    }

    pub fn center(&self) -> Vec<Rational> {
        self.bounds().center()
    }

    pub fn id(&self) -> String {
        path_id("Q", &self.path)
    }

    pub fn translated(&self, tau: &[Rational]) -> Cube {
        Cube {
            p: self.p.iter().zip(tau).map(|(a, b)| a + b).collect(),
            r: self.r.clone(),
            order: self.order,
            path: Vec::new(),
        }
    }
}

impl Serialize for Cube {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            id: String,
            #[serde(with = "rational::serde_rational::vec")]
            p: &'a [Rational],
            #[serde(with = "rational::serde_rational")]
            r: &'a Rational,
            order: u32,
        }
        Repr {
            id: self.id(),
            p: &self.p,
            r: &self.r,
            order: self.order,
        }
        .serialize(s)
    }
}

/// `R(Q,z) = [0, r/M] x [0, r/(MK)]^(d-1) + p(Q) + r z`, of order `Q.order + 1`.
pub fn child_rectangle(params: &HierarchyParams, q: &Cube, z: &[Rational]) -> Result<Rect> {
    let idx = params.lattice_index(z)?;
    Ok(child_rectangle_at(params, q, idx))
}

/// `child_rectangle` with the lattice point given by its linear index.
pub fn child_rectangle_at(params: &HierarchyParams, q: &Cube, lattice_idx: usize) -> Rect {
    let z = params.lattice_point(lattice_idx);
    let p = q
        .p
        .iter()
        .zip(&z)
        .map(|(pq, zj)| pq + &q.r * zj)
        .collect();
    let mut path = q.path.clone();
    path.push(lattice_idx as u32);
    Rect {
        p,
        c: &q.r / int(i64::from(params.lattice)),
        factor: params.subdivision,
        order: q.order + 1,
        path,
    }
}

pub fn child_rectangles<'a>(
    params: &'a HierarchyParams,
    q: &'a Cube,
) -> impl Iterator<Item = Rect> + 'a {
    (0..params.lattice_size()).map(move |z| child_rectangle_at(params, q, z))
}

/// Every admissible rectangle of order `k`, lexicographic in `(i_0, z_1, i_1, ...)`.
pub fn enumerate_rectangles(
    params: &HierarchyParams,
    k: u32,
) -> Result<Box<dyn Iterator<Item = Rect> + '_>> {
    params.check_order(k)?;
    Ok(rects_of_order(params, k))
}

fn rects_of_order(params: &HierarchyParams, k: u32) -> Box<dyn Iterator<Item = Rect> + '_> {
    if k == 0 {
        return Box::new(std::iter::once(params.root_rect()));
    }
    Box::new(rects_of_order(params, k - 1).flat_map(move |parent| {
        let cubes: Vec<Cube> = parent.subcubes().collect();
        cubes.into_iter().flat_map(move |q| {
            (0..params.lattice_size()).map(move |z| child_rectangle_at(params, &q, z))
        })
    }))
}

/// All rectangles of order `0..=k_max`, order by order.
pub fn enumerate_rectangles_upto(
    params: &HierarchyParams,
    k_max: u32,
) -> Result<impl Iterator<Item = Rect> + '_> {
    params.check_order(k_max)?;
    Ok((0..=k_max).flat_map(move |k| rects_of_order(params, k)))
}

/// Cubes `Q = Q(R,n)` and `Q' = Q(R,n+1)` with `Q' = Q + tau`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AdjacentPair {
    pub left: Cube,
    pub right: Cube,
    #[serde(with = "rational::serde_rational::vec")]
    pub tau: Vec<Rational>,
    pub parent: Rect,
}

impl AdjacentPair {
    pub fn new(parent: &Rect, n: usize) -> Result<Self> {
        if n + 1 >= parent.factor as usize {
            return Err(Error::IndexOutOfRange {
                index: n,
                max: parent.factor as usize - 2,
            });
        }
        let left = parent.subcube(n)?;
        let right = parent.subcube(n + 1)?;
        let mut tau = vec![Rational::zero(); parent.dim()];
        tau[0] = left.r.clone();
        Ok(Self {
            left,
            right,
            tau,
            parent: parent.clone(),
        })
    }

    pub fn side(&self) -> &Rational {
        &self.left.r
    }

    pub fn order(&self) -> u32 {
        self.left.order
    }

    pub fn index(&self) -> usize {
        self.left.index_in_parent().unwrap_or(0)
    }
}

/// Every adjacent pair `(Q(R,n), Q(R,n+1))` with `R` of order at most `k_max`.
pub fn enumerate_adjacent_pairs(
    params: &HierarchyParams,
    k_max: u32,
) -> Result<impl Iterator<Item = AdjacentPair> + '_> {
    let k = params.subdivision as usize;
    Ok(enumerate_rectangles_upto(params, k_max)?.flat_map(move |rect| {
        (0..k - 1).map(move |n| AdjacentPair::new(&rect, n).expect("n < K-1"))
    }))
}

/// `Q ∖ ∪R_{k+1}` has measure `vol(Q) - Σ vol(R(Q,z))`; child rectangles are
/// pairwise disjoint and contained in `Q`.
pub fn uncovered_volume(params: &HierarchyParams, q: &Cube) -> Rational {
    let covered: Rational = child_rectangles(params, q).map(|r| r.volume()).sum();
    q.volume() - covered
}
