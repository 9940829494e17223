//! Rectangle classification for an embedding `h`: near-translation
//! invariance across the subcube pitch (property 1) or a child rectangle that
//! is stretched noticeably more than its parent (property 2).

use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::c_d;
use crate::hierarchy::{child_rectangle_at, enumerate_rectangles_upto, AdjacentPair, HierarchyParams, Rect};
use crate::rational::{self, int, Rational};
use crate::registry::Registry;
use crate::sums::{EmbeddedMap, RegularSum};

/// A map `R^d -> R^n` examined by the classifier.
pub trait Embedding: Send + Sync {
    fn dim(&self) -> usize;
    fn target_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;

    /// Exact evaluation, for maps that have one.
    fn eval_exact(&self, _x: &[Rational]) -> Option<Vec<Rational>> {
        None
    }

    /// Row-major `n x d` matrix `A` when the map is `x ↦ A x + b` exactly.
    fn linear_part(&self) -> Option<Vec<Rational>> {
        None
    }
}

/// `A v` in exact arithmetic, `A` row-major with `v.len()` columns.
fn apply_exact(a: &[Rational], v: &[Rational]) -> Vec<Rational> {
    a.chunks(v.len())
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn norm_exact(v: &[Rational]) -> f64 {
    let sq: Rational = v.iter().map(|x| x * x).sum();
    if sq.is_zero() {
        0.0
    } else {
        rational::to_f64(&sq).sqrt()
    }
}

pub struct IdentityEmbedding {
    pub d: usize,
}

impl Embedding for IdentityEmbedding {
    fn dim(&self) -> usize {
        self.d
    }

    fn target_dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn eval_exact(&self, x: &[Rational]) -> Option<Vec<Rational>> {
        Some(x.to_vec())
    }

    fn linear_part(&self) -> Option<Vec<Rational>> {
        Some(
            (0..self.d * self.d)
                .map(|k| if k / self.d == k % self.d { Rational::one() } else { Rational::zero() })
                .collect(),
        )
    }
}

/// `x ↦ A x + b` with exact rational coefficients, `A` row-major `n x d`.
pub struct AffineEmbedding {
    a: Vec<Rational>,
    b: Vec<Rational>,
    d: usize,
    a_f: Vec<f64>,
    b_f: Vec<f64>,
}

impl AffineEmbedding {
    pub fn new(a: Vec<Rational>, b: Vec<Rational>, d: usize) -> Result<Self> {
        if d == 0 || a.len() != b.len() * d {
            return Err(Error::DimensionMismatch {
                expected: b.len() * d,
                got: a.len(),
            });
        }
        Ok(Self {
            a_f: a.iter().map(rational::to_f64).collect(),
            b_f: b.iter().map(rational::to_f64).collect(),
            a,
            b,
            d,
        })
    }
}

impl Embedding for AffineEmbedding {
    fn dim(&self) -> usize {
        self.d
    }

    fn target_dim(&self) -> usize {
        self.b.len()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.b_f
            .iter()
            .enumerate()
            .map(|(i, bi)| bi + (0..self.d).map(|j| self.a_f[i * self.d + j] * x[j]).sum::<f64>())
            .collect()
    }

    fn eval_exact(&self, x: &[Rational]) -> Option<Vec<Rational>> {
        Some(
            self.b
                .iter()
                .enumerate()
                .map(|(i, bi)| {
                    (0..self.d).fold(bi.clone(), |acc, j| acc + &self.a[i * self.d + j] * &x[j])
                })
                .collect(),
        )
    }

    fn linear_part(&self) -> Option<Vec<Rational>> {
        Some(self.a.clone())
    }
}

impl Embedding for EmbeddedMap {
    fn dim(&self) -> usize {
        EmbeddedMap::dim(self)
    }

    fn target_dim(&self) -> usize {
        EmbeddedMap::target_dim(self)
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        EmbeddedMap::eval(self, x)
    }
}

/// Wraps a closure, e.g. a hand-built piecewise-linear map.
pub struct FnEmbedding<F> {
    pub d: usize,
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Send + Sync> Embedding for FnEmbedding<F> {
    fn dim(&self) -> usize {
        self.d
    }

    fn target_dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DichotomyParams {
    pub eps: f64,
    pub phi: f64,
    pub k0: u32,
    pub l_bound: f64,
    /// Sample points per cube side used by the property checks; the sampled
    /// lattice has `samples_per_side + 1` points per axis.
    pub samples_per_side: usize,
}

impl DichotomyParams {
    /// Depth taken from [`depth_bound`].
    pub fn new(eps: f64, phi: f64, l_bound: f64, samples_per_side: usize) -> Result<Self> {
        let k0 = depth_bound(l_bound, phi)?;
        Self::with_depth(eps, phi, k0, l_bound, samples_per_side)
    }

    /// Errors unless `(1+φ)^k0 >= L²`.
    pub fn with_depth(eps: f64, phi: f64, k0: u32, l_bound: f64, samples_per_side: usize) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParams(format!("eps = {eps} must be positive")));
        }
        if samples_per_side == 0 {
            return Err(Error::InvalidParams("samples_per_side must be at least 1".into()));
        }
        let needed = depth_bound(l_bound, phi)?;
        if k0 < needed {
            return Err(Error::InvalidParams(format!(
                "depth {k0} is below the bound {needed} required by L = {l_bound}, phi = {phi}"
            )));
        }
        Ok(Self {
            eps,
            phi,
            k0,
            l_bound,
            samples_per_side,
        })
    }
}

/// Smallest `k0` with `(1+φ)^k0 >= L²` (relative tolerance `1e-12`).
pub fn depth_bound(l: f64, phi: f64) -> Result<u32> {
    if !(l >= 1.0) || !l.is_finite() {
        return Err(Error::InvalidParams(format!("L = {l} must be at least 1")));
    }
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::InvalidParams(format!("phi = {phi} must be positive")));
    }
    let target = l * l * (1.0 - 1e-12);
    let mut k = 0u32;
    let mut p = 1.0f64;
    while p < target {
        p *= 1.0 + phi;
        k += 1;
    }
    Ok(k)
}

fn point_f64(x: &[Rational]) -> Vec<f64> {
    x.iter().map(rational::to_f64).collect()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `A_h(R) = ∥h(l(R)) − h(r(R))∥ / ∥l(R) − r(R)∥`
pub fn stretch_ratio(h: &dyn Embedding, rect: &Rect) -> Result<f64> {
    if rect.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            got: rect.dim(),
        });
    }
    let c = rational::to_f64(rect.long_side());
    if !(c > 0.0) {
        return Err(Error::Degenerate(format!("rectangle {} has no length", rect.id())));
    }
    let (l, r) = (rect.left(), rect.right());
    if let (Some(hl), Some(hr)) = (h.eval_exact(&l), h.eval_exact(&r)) {
        let sq: Rational = hl.iter().zip(&hr).map(|(a, b)| (a - b) * (a - b)).sum();
        return Ok((rational::to_f64(&sq)).sqrt() / c);
    }
    Ok(diff_norm(&h.eval(&point_f64(&l)), &h.eval(&point_f64(&r))) / c)
}

/// Outcome of the property-1 scan of one rectangle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Property1Check {
    /// First subcube index `i` that passes.
    pub witness: Option<usize>,
    /// Largest sampled `∥h(x+τ) − h(x) − (h(r)−h(l))/K∥` for each `i`.
    pub lhs: Vec<f64>,
    /// `ε r`
    pub bound: f64,
}

impl Property1Check {
    /// `ε r − lhs` at the witness, or at the best `i` when none passes.
    pub fn margin(&self) -> f64 {
        match self.witness {
            Some(i) => self.bound - self.lhs[i],
            None => self.bound - self.lhs.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Sample points `p + (side/n) m`, `m ∈ {0..n}^d`.
fn cube_samples(p: &[Rational], side: &Rational, n: usize) -> Vec<Vec<Rational>> {
    let d = p.len();
    let step = side / int(n as i64);
    let count = (n + 1).pow(d as u32);
    (0..count)
        .map(|mut flat| {
            let mut x = p.to_vec();
            for xa in x.iter_mut().rev() {
                *xa += &step * int((flat % (n + 1)) as i64);
                flat /= n + 1;
            }
            x
        })
        .collect()
}

/// Tests `∥h(x+τ) − h(x) − (1/K)(h(r(R)) − h(l(R)))∥ <= ε r` on sampled `x`
/// in `Q(R,i)` for `i = 0..K−2`, `τ = r e_1` the subcube pitch.
pub fn check_property1(h: &dyn Embedding, rect: &Rect, eps: f64, samples_per_side: usize) -> Result<Property1Check> {
    if samples_per_side == 0 {
        return Err(Error::InvalidParams("samples_per_side must be at least 1".into()));
    }
    let r = rect.short_side();
    let r_f = rational::to_f64(&r);
    let k = int(i64::from(rect.factor()));
    let bound = eps * r_f;
    let exact_ends = h.eval_exact(&rect.left()).zip(h.eval_exact(&rect.right()));
    let float_ends = (h.eval(&point_f64(&rect.left())), h.eval(&point_f64(&rect.right())));
    let kf = f64::from(rect.factor());
    let mut lhs = Vec::with_capacity(rect.factor() as usize - 1);
    let mut witness = None;
    if let Some(a) = h.linear_part() {
        // h(x+τ) − h(x) = Aτ at every x, so each sampled maximum is this one value.
        let (left, right) = (rect.left(), rect.right());
        let mut v: Vec<Rational> = left.iter().zip(&right).map(|(l, r)| -(r - l) / &k).collect();
        v[0] += &r;
        let value = norm_exact(&apply_exact(&a, &v));
        lhs = vec![value; rect.factor() as usize - 1];
        witness = (value <= bound).then_some(0);
        return Ok(Property1Check { witness, lhs, bound });
    }
    for i in 0..rect.factor() as usize - 1 {
        let q = rect.subcube(i)?;
        let mut worst = 0.0f64;
        for x in cube_samples(q.principal_vertex(), q.side(), samples_per_side) {
            let mut xt = x.clone();
            xt[0] += &r;
            let dist = match &exact_ends {
                Some((hl, hr)) => {
                    let a = h.eval_exact(&x).expect("exact map");
                    let b = h.eval_exact(&xt).expect("exact map");
                    let sq: Rational = (0..a.len())
                        .map(|j| {
                            let e = &b[j] - &a[j] - (&hr[j] - &hl[j]) / &k;
                            &e * &e
                        })
                        .sum();
                    if sq.is_zero() {
                        0.0
                    } else {
                        rational::to_f64(&sq).sqrt()
                    }
                }
                None => {
                    let a = h.eval(&point_f64(&x));
                    let b = h.eval(&point_f64(&xt));
                    let (hl, hr) = &float_ends;
                    (0..a.len())
                        .map(|j| {
                            let e = b[j] - a[j] - (hr[j] - hl[j]) / kf;
                            e * e
                        })
                        .sum::<f64>()
                        .sqrt()
                }
            };
            worst = worst.max(dist);
        }
        if witness.is_none() && worst <= bound {
            witness = Some(i);
        }
        lhs.push(worst);
    }
    Ok(Property1Check { witness, lhs, bound })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Property2Check {
    pub witness: Option<Rect>,
    /// Largest `A_h(R')/A_h(R)` over the children.
    pub best_ratio: f64,
    pub parent_stretch: f64,
}

/// Looks for a child `R' = R(Q(R,i), z)` with `A_h(R') > (1+φ) A_h(R)`.
pub fn check_property2(params: &HierarchyParams, h: &dyn Embedding, rect: &Rect, phi: f64) -> Result<Property2Check> {
    let parent = stretch_ratio(h, rect)?;
    if h.linear_part().is_some() {
        // Every admissible rectangle has its long side along e_1, so every
        // child has the stretch ∥A e_1∥ of its parent.
        let ratio = if parent > 0.0 { 1.0 } else { f64::INFINITY };
        return Ok(Property2Check {
            witness: None,
            best_ratio: ratio,
            parent_stretch: parent,
        });
    }
    let mut best = 0.0f64;
    let mut witness = None;
    for q in rect.subcubes() {
        for z in 0..params.lattice_size() {
            let child = child_rectangle_at(params, &q, z);
            let a = stretch_ratio(h, &child)?;
            let ratio = if parent > 0.0 { a / parent } else { f64::INFINITY };
            best = best.max(ratio);
            if witness.is_none() && a > (1.0 + phi) * parent {
                witness = Some(child);
            }
        }
    }
    Ok(Property2Check {
        witness,
        best_ratio: best,
        parent_stretch: parent,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Property1,
    Property2,
    Both,
    /// Neither property was observed at the sampling resolution.
    Neither,
}

impl VerdictStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerdictStatus::Property1 => "property1",
            VerdictStatus::Property2 => "property2",
            VerdictStatus::Both => "both",
            VerdictStatus::Neither => "neither",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyVerdict {
    pub rect: Rect,
    pub property1: Option<usize>,
    pub property1_margin: f64,
    pub property1_lhs: f64,
    pub property2: Option<Rect>,
    pub property2_margin: f64,
    pub stretch: f64,
    pub status: VerdictStatus,
}

pub fn classify_rect(params: &HierarchyParams, h: &dyn Embedding, rect: &Rect, dp: &DichotomyParams) -> Result<PropertyVerdict> {
    let p1 = check_property1(h, rect, dp.eps, dp.samples_per_side)?;
    let p2 = check_property2(params, h, rect, dp.phi)?;
    let status = match (p1.witness.is_some(), p2.witness.is_some()) {
        (true, true) => VerdictStatus::Both,
        (true, false) => VerdictStatus::Property1,
        (false, true) => VerdictStatus::Property2,
        (false, false) => VerdictStatus::Neither,
    };
    let lhs_at = p1.witness.map_or_else(
        || p1.lhs.iter().copied().fold(f64::INFINITY, f64::min),
        |i| p1.lhs[i],
    );
    Ok(PropertyVerdict {
        rect: rect.clone(),
        property1: p1.witness,
        property1_margin: p1.margin(),
        property1_lhs: lhs_at,
        property2: p2.witness,
        property2_margin: p2.best_ratio - (1.0 + dp.phi),
        stretch: p2.parent_stretch,
        status,
    })
}

/// Verdicts for every rectangle of order `0..=k0`, in enumeration order.
pub fn classify(params: &HierarchyParams, h: &dyn Embedding, dp: &DichotomyParams) -> Result<Vec<PropertyVerdict>> {
    let deep = params.with_max_order(params.max_order().max(dp.k0));
    let rects: Vec<Rect> = enumerate_rectangles_upto(&deep, dp.k0)?.collect();
    rects
        .par_iter()
        .map(|rect| classify_rect(&deep, h, rect, dp))
        .collect()
}

/// CSV: `order,rect_id,property1_witness,property1_margin,property2_witness,A_h,status`.
pub fn write_classification(verdicts: &[PropertyVerdict], mut w: impl std::io::Write) -> Result<()> {
    writeln!(w, "order,rect_id,property1_witness,property1_margin,property2_witness,A_h,status")?;
    for v in verdicts {
        writeln!(
            w,
            "{},{},{},{:e},{},{:e},{}",
            v.rect.order(),
            v.rect.id(),
            v.property1.map_or(String::new(), |i| i.to_string()),
            v.property1_margin,
            v.property2.as_ref().map_or(String::new(), Rect::id),
            v.stretch,
            v.status.as_str()
        )?;
    }
    Ok(())
}

/// Breadth-first over orders `0..=k0`: the first rectangle without property 2.
/// It must have property 1; otherwise the verdicts seen so far are returned
/// as a diagnostic.
pub fn find_good_rectangle(
    params: &HierarchyParams,
    h: &dyn Embedding,
    dp: &DichotomyParams,
) -> Result<PropertyVerdict> {
    let deep = params.with_max_order(params.max_order().max(dp.k0));
    let mut seen = Vec::new();
    for rect in enumerate_rectangles_upto(&deep, dp.k0)? {
        let verdict = classify_rect(&deep, h, &rect, dp)?;
        let done = verdict.property2.is_none();
        let good = verdict.property1.is_some();
        seen.push(verdict);
        if done {
            if good {
                return Ok(seen.pop().expect("just pushed"));
            }
            break;
        }
    }
    Err(Error::NoGoodRectangle { verdicts: seen })
}

#[derive(Clone, Debug, Serialize)]
pub struct GoodPairCertificate {
    pub pair: AdjacentPair,
    /// `W_i = (1/K)(π_i(r(R)) − π_i(l(R)))`
    pub w: Vec<Vec<f64>>,
    /// `Σ_i L_i^(d−2) ∥π_i − π̃_i∥²` with each norm a maximum over the boundary samples.
    pub bound_lhs: f64,
    /// `r² ε²`
    pub bound_rhs: f64,
    /// `max_x Σ_i L_i^(d−2) ∥π_i(x) − π̃_i(x)∥²` over the same samples.
    pub sup_of_sum: f64,
    pub rect_verdict: PropertyVerdict,
}

/// Sample points on the boundary of the cube at `p` with side `side`.
fn boundary_samples(p: &[Rational], side: &Rational, n: usize) -> Vec<Vec<Rational>> {
    let hi: Vec<Rational> = p.iter().map(|a| a + side).collect();
    cube_samples(p, side, n)
        .into_iter()
        .filter(|x| x.iter().zip(p).zip(&hi).any(|((xa, lo), up)| xa == lo || xa == up))
        .collect()
}

/// Per-term maxima over `x` of `∥π_i(x+τ) − π_i(x) − W_i∥` and the maximum of
/// their weighted square sum.
pub fn translated_boundary_norms(sum: &RegularSum, pair: &AdjacentPair, w: &[Vec<f64>], samples_per_side: usize) -> (Vec<f64>, f64) {
    let d = sum.dim();
    let weights: Vec<f64> = sum
        .l()
        .iter()
        .map(|&l| if l == 0.0 { 0.0 } else { l.powi(d as i32 - 2) })
        .collect();
    let mut per_term = vec![0.0f64; sum.len()];
    let mut sup_of_sum = 0.0f64;
    let tau = rational::to_f64(&pair.tau[0]);
    let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
    for x in boundary_samples(pair.left.principal_vertex(), pair.side(), samples_per_side) {
        let x = point_f64(&x);
        let mut xt = x.clone();
        xt[0] += tau;
        let mut total = 0.0;
        for (i, t) in sum.sum().terms().iter().enumerate() {
            t.pi.interpolate(&x, &mut a);
            t.pi.interpolate(&xt, &mut b);
            let sq: f64 = (0..d).map(|j| (b[j] - a[j] - w[i][j]).powi(2)).sum();
            per_term[i] = per_term[i].max(sq.sqrt());
            total += weights[i] * sq;
        }
        sup_of_sum = sup_of_sum.max(total);
    }
    (per_term, sup_of_sum)
}

/// Locates a good rectangle for `embed_h(sum)`, takes its property-1 subcube
/// pair and verifies `Σ_i L_i^(d−2) ∥π_i − π̃_i∥²_{ℓ∞(∂Q)} <= r² ε²` on boundary samples.
pub fn find_good_pair(params: &HierarchyParams, sum: &RegularSum, dp: &DichotomyParams) -> Result<GoodPairCertificate> {
    let h = sum.embed_h();
    let verdict = find_good_rectangle(params, &h, dp)?;
    let i = verdict.property1.expect("good rectangle has a property-1 witness");
    let pair = AdjacentPair::new(&verdict.rect, i)?;
    let w = sum.translation_offsets(&pair);
    let (per_term, sup_of_sum) = translated_boundary_norms(sum, &pair, &w, dp.samples_per_side);
    let d = sum.dim() as i32;
    let measured: f64 = sum
        .l()
        .iter()
        .zip(&per_term)
        .map(|(&l, s)| if l == 0.0 { 0.0 } else { l.powi(d - 2) * s * s })
        .sum();
    let r = rational::to_f64(pair.side());
    let bound = r * r * dp.eps * dp.eps;
    if measured > bound {
        return Err(Error::GoodPairRejected { measured, bound });
    }
    Ok(GoodPairCertificate {
        pair,
        w,
        bound_lhs: measured,
        bound_rhs: bound,
        sup_of_sum,
        rect_verdict: verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContradictionBudget {
    pub eta: f64,
    pub eps: f64,
    pub r: f64,
    pub lower: f64,
    pub upper: f64,
    pub violated: bool,
}

/// `lower = r^d (1−η)`, `upper = r^(d+1)(√d+1)S + r^d c_d √S ε` with
/// `r = 1/(K(KM)^k)`, `ε = 1/(c_d √S)` and `η = 1/4`.
pub fn contradiction_budget(s: f64, d: usize, k: u32, m: u32, order: u32) -> Result<ContradictionBudget> {
    let eps = 1.0 / (c_d(d) * s.sqrt());
    contradiction_budget_with(s, d, k, m, order, eps, 0.25)
}

pub fn contradiction_budget_with(
    s: f64,
    d: usize,
    k: u32,
    m: u32,
    order: u32,
    eps: f64,
    eta: f64,
) -> Result<ContradictionBudget> {
    if !(s > 0.0) || d < 2 || k < 2 || m < 2 || !(eps > 0.0) {
        return Err(Error::InvalidParams(format!(
            "contradiction budget needs S > 0, d >= 2, K, M >= 2, eps > 0 (got S={s}, d={d}, K={k}, M={m}, eps={eps})"
        )));
    }
    let km = f64::from(k) * f64::from(m);
    let r = 1.0 / (f64::from(k) * km.powi(order as i32));
    let di = d as i32;
    let lower = r.powi(di) * (1.0 - eta);
    let upper = r.powi(di + 1) * ((d as f64).sqrt() + 1.0) * s + r.powi(di) * c_d(d) * s.sqrt() * eps;
    Ok(ContradictionBudget {
        eta,
        eps,
        r,
        lower,
        upper,
        violated: lower > upper,
    })
}

/// Builds the embedding named in a classification run.
pub trait EmbeddingFactory: Send + Sync {
    fn describe(&self) -> &'static str;
    fn build(&self, spec: &EmbeddingSpec) -> Result<Box<dyn Embedding>>;
}

/// Inputs for the registered embedding factories.
#[derive(Clone, Debug, Default, PartialEq, serde::Deserialize, Serialize)]
#[serde(default)]
pub struct EmbeddingSpec {
    pub d: usize,
    /// Row-major `n x d` matrix as `num/den` strings for the affine embedding.
    pub matrix: Vec<String>,
    pub offset: Vec<String>,
    pub terms: usize,
    pub budget: f64,
    pub grid_cells: usize,
    pub seed: u64,
}

struct IdentityFactory;

impl EmbeddingFactory for IdentityFactory {
    fn describe(&self) -> &'static str {
        "x -> x"
    }

    fn build(&self, spec: &EmbeddingSpec) -> Result<Box<dyn Embedding>> {
        Ok(Box::new(IdentityEmbedding { d: spec.d }))
    }
}

struct AffineFactory;

impl EmbeddingFactory for AffineFactory {
    fn describe(&self) -> &'static str {
        "x -> A x + b with exact rational entries"
    }

    fn build(&self, spec: &EmbeddingSpec) -> Result<Box<dyn Embedding>> {
        let d = spec.d;
        let a = if spec.matrix.is_empty() {
            // A shear that keeps the map injective.
            (0..d * d)
                .map(|k| match (k / d, k % d) {
                    (i, j) if i == j => int(2),
                    (0, 1) => rational::rat(1, 2),
                    _ => Rational::zero(),
                })
                .collect()
        } else {
            spec.matrix.iter().map(|s| rational::parse(s)).collect::<Result<Vec<_>>>()?
        };
        let rows = a.len() / d.max(1);
        let b = if spec.offset.is_empty() {
            vec![Rational::zero(); rows]
        } else {
            spec.offset.iter().map(|s| rational::parse(s)).collect::<Result<Vec<_>>>()?
        };
        Ok(Box::new(AffineEmbedding::new(a, b, d)?))
    }
}

struct RandomSumFactory;

impl EmbeddingFactory for RandomSumFactory {
    fn describe(&self) -> &'static str {
        "h built from a seeded random regular sum"
    }

    fn build(&self, spec: &EmbeddingSpec) -> Result<Box<dyn Embedding>> {
        let grid = crate::fields::Grid::unit(spec.d, spec.grid_cells.max(1))?;
        let mut rng = crate::synthetic::rng(spec.seed);
        let sum = crate::synthetic::random_regular_sum(&grid, spec.terms.max(1), spec.budget, &mut rng)?;
        Ok(Box::new(sum.embed_h()))
    }
}

pub fn embedding_registry() -> Registry<dyn EmbeddingFactory> {
    let mut reg: Registry<dyn EmbeddingFactory> = Registry::new("embedding");
    reg.register("identity", Box::new(IdentityFactory));
    reg.register("affine", Box::new(AffineFactory));
    reg.register("random-sum", Box::new(RandomSumFactory));
    reg
}
