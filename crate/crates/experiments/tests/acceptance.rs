//! Acceptance criteria 1 to 11. Run one subset with
//! `cargo test -p pje-experiments --test acceptance -- 3 7`.

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;

use pje_core::config::RunConfig;
use pje_core::density::DensityField;
use pje_core::dichotomy::{classify, contradiction_budget, AffineEmbedding, DichotomyParams};
use pje_core::fields::{
    check_average_det, jacobian_det_boundary, jacobian_det_volume, CellField, Grid, GridField,
};
use pje_core::hierarchy::{enumerate_adjacent_pairs, enumerate_rectangles_upto, uncovered_volume, HierarchyParams, RatBox};
use pje_core::linalg;
use pje_core::rational::{self, int, rat};
use pje_core::solver::{energy_single, energy_sum, gradient_single, gradient_sum, solve_single, sweep_depth, SolverConfig};
use pje_core::sums::{LipschitzSum, SumTerm};
use pje_core::synthetic::{self, trial_rng};
use pje_experiments::{run_all, Criterion, Outcome};

fn params(k: u32, m: u32, k_max: u32) -> HierarchyParams {
    HierarchyParams::new(2, k, m, k_max).unwrap()
}

fn exact_discrepancy() -> Outcome {
    let p = params(6, 4, 2);
    let mut checked = 0usize;
    let mut worst = f64::INFINITY;
    let mut bad = Vec::new();
    for k0 in 0..=2 {
        let rho = DensityField::constant_one(p.clone()).refine_to_depth(k0).unwrap();
        for pair in enumerate_adjacent_pairs(&p, k0).unwrap() {
            let r = pair.side();
            let bound = r * r * (int(1) - rat(5, 6));
            let disc = rational::abs(&rho.discrepancy(&pair).unwrap());
            checked += 1;
            worst = worst.min(rational::to_f64(&(&disc / &bound)));
            if disc < bound {
                bad.push(format!("k0 = {k0}, {}", pair.left.id()));
            }
        }
    }
    Outcome::new(
        bad.is_empty(),
        format!("{checked} pairs, {} below r^2/6, smallest ratio to the bound {worst:.4}", bad.len()),
    )
}

fn measure_bound() -> Outcome {
    let p = params(6, 4, 1);
    let keep = int(1) - rat(1, 6);
    let mut cubes = 0usize;
    let mut bad = 0usize;
    let mut worst = f64::INFINITY;
    for rect in enumerate_rectangles_upto(&p, 1).unwrap() {
        for q in rect.subcubes() {
            let uncovered = uncovered_volume(&p, &q);
            let lower = q.volume() * &keep;
            cubes += 1;
            worst = worst.min(rational::to_f64(&(&uncovered / &lower)));
            if uncovered < lower {
                bad += 1;
            }
        }
    }
    Outcome::new(bad == 0, format!("{cubes} cubes, {bad} below the bound, smallest ratio {worst:.6}"))
}

fn dyadic_affine(grid: &Grid, shift: f64) -> GridField {
    GridField::from_fn(grid.clone(), 2, |x, o| {
        o[0] = 1.25 * x[0] + 0.25 * x[1] + 0.125 + shift;
        o[1] = -0.5 * x[0] + 1.5 * x[1] + 0.375 + 2.0 * shift;
    })
}

fn average_det() -> Outcome {
    let grid = Grid::unit(2, 128).unwrap();
    let h = grid.h_f64();
    let b = RatBox::unit(2);
    let affine = check_average_det(&dyadic_affine(&grid, 0.0), &dyadic_affine(&grid, 0.0625), &b).unwrap();
    let affine_ok = affine.lhs == 0.0 && affine.slack >= 0.0;
    let mut min_slack = f64::INFINITY;
    let mut fails = 0;
    for t in 0..100u64 {
        let mut rng = trial_rng(0, t);
        let pi = synthetic::random_smooth_map(&grid, 2.0, &mut rng);
        let kappa = synthetic::perturbed_map(&pi, 0.05, 2.0, &mut rng);
        let report = check_average_det(&pi, &kappa, &b).unwrap();
        min_slack = min_slack.min(report.slack);
        if report.slack < -10.0 * h {
            fails += 1;
        }
    }
    Outcome::new(
        affine_ok && fails == 0,
        format!(
            "affine lhs = {}, slack {:.3e}; 100 random pairs, {fails} below -10h, min slack {min_slack:.3e}",
            affine.lhs, affine.slack
        ),
    )
}

/// Least-squares slope of `log e` against `log h`.
fn observed_order(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

fn stokes() -> Outcome {
    let b = RatBox::unit(2);
    let grid = Grid::unit(2, 64).unwrap();
    let mut affine_err = 0.0f64;
    for t in 0..20u64 {
        let mut rng = trial_rng(4, t);
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let c: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pi = GridField::from_fn(grid.clone(), 2, |x, o| {
            o[0] = c[0] + a[0] * x[0] + a[1] * x[1];
            o[1] = c[1] + a[2] * x[0] + a[3] * x[1];
        });
        let det = linalg::det(&a, 2);
        let vol = jacobian_det_volume(&pi, &b).unwrap();
        let bdry = jacobian_det_boundary(&pi, &b).unwrap();
        affine_err = affine_err.max((vol - det).abs()).max((bdry - det).abs()).max((vol - bdry).abs());
    }
    let hs = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
    let gap = |f: &dyn Fn(&[f64], &mut [f64])| -> Vec<f64> {
        [32usize, 64, 128]
            .iter()
            .map(|&n| {
                let g = Grid::unit(2, n).unwrap();
                let pi = GridField::from_fn(g, 2, f);
                (jacobian_det_volume(&pi, &b).unwrap() - jacobian_det_boundary(&pi, &b).unwrap()).abs()
            })
            .collect()
    };
    let quad = gap(&|x, o| {
        o[0] = x[0] * x[0];
        o[1] = x[1];
    });
    // (x², y) agrees to rounding at every h, which is convergence of any
    // order. The curved field shows the first-order rate itself; its fitted
    // slope approaches 1 from below, so it is gated on the bound gap <= C h.
    let quad_exact = quad.iter().all(|e| *e <= 1e-14);
    let quad_ok = quad_exact || observed_order(&hs, &quad) >= 1.0;
    let curved = gap(&|x, o| {
        o[0] = x[0] * x[0] + 0.3 * (3.0 * x[1]).sin();
        o[1] = x[1] + 0.5 * x[0] * x[1] * x[1];
    });
    let order = observed_order(&hs, &curved);
    let constant = curved.iter().zip(&hs).map(|(e, h)| e / h).fold(0.0, f64::max);
    Outcome::new(
        affine_err <= 1e-8 && quad_ok && constant <= 1.0,
        format!(
            "affine max error {affine_err:.2e}; (x^2, y) gaps {:.1e} {:.1e} {:.1e}{}; curved gaps {:.4e} {:.4e} {:.4e}, gap/h <= {constant:.4}, fitted order {order:.5}",
            quad[0],
            quad[1],
            quad[2],
            if quad_exact { " (exact)" } else { "" },
            curved[0],
            curved[1],
            curved[2]
        ),
    )
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn regularization() -> Outcome {
    let grid = Grid::unit(2, 32).unwrap();
    let (mut s_err, mut em_err, mut idem) = (0.0f64, 0.0f64, 0.0f64);
    let mut defects = 0;
    for t in 0..50u64 {
        let mut rng = trial_rng(5, t);
        let n = rng.gen_range(1..=4);
        let sum = synthetic::random_sum(&grid, n, &mut rng);
        let reg = sum.regularize();
        if reg.regularity_defect(1e-9).is_some() {
            defects += 1;
        }
        s_err = s_err.max((reg.budget() - sum.s_value()).abs() / sum.s_value().max(1.0));
        em_err = em_err.max(reg.sum().em_field().max_abs_diff(&sum.em_field()));
        let again = reg.sum().regularize();
        for (a, b) in again.sum().terms().iter().zip(reg.sum().terms()) {
            idem = idem.max(max_abs_diff(a.f.values(), b.f.values())).max(max_abs_diff(a.pi.values(), b.pi.values()));
        }
        idem = idem.max(max_abs_diff(again.l(), reg.l()));
    }
    Outcome::new(
        defects == 0 && s_err <= 1e-8 && em_err <= 1e-8 && idem <= 1e-12,
        format!("50 sums: {defects} irregular, S error {s_err:.2e}, em error {em_err:.2e}, idempotence {idem:.2e}"),
    )
}

fn embedding_bounds() -> Outcome {
    let grid = Grid::unit(2, 64).unwrap();
    let tol = 1e-9;
    let mut worst_low = f64::INFINITY;
    let mut worst_high = f64::INFINITY;
    let mut bad = 0usize;
    for t in 0..50u64 {
        let mut rng = trial_rng(6, t);
        let s = rng.gen_range(0.05..=4.0);
        let reg = synthetic::random_regular_sum(&grid, 2, s, &mut rng).unwrap();
        let h = reg.embed_h();
        let upper = h.upper_bound();
        for j in 0..200 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let scale = if j % 2 == 0 { 1.0 } else { 1e-3 };
            let y: Vec<f64> = x.iter().map(|v| (v + scale * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0)).collect();
            let dx = linalg::norm(&[x[0] - y[0], x[1] - y[1]]);
            let (hx, hy) = (h.eval(&x), h.eval(&y));
            let dh = hx.iter().zip(&hy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst_low = worst_low.min(dh - dx);
            worst_high = worst_high.min(upper * dx - dh);
            if dh < dx - tol || dh > upper * dx + tol {
                bad += 1;
            }
        }
    }
    Outcome::new(
        bad == 0,
        format!("10000 point pairs, {bad} outside the bounds, min lower slack {worst_low:.2e}, min upper slack {worst_high:.2e}"),
    )
}

/// `√(a/b)` rounded down to `digits` decimals, from the integer square root.
fn sqrt_rational(q: &BigRational, digits: u32) -> BigRational {
    let scale = BigInt::from(10u32).pow(digits);
    let radicand = q.numer() * &scale * &scale / q.denom();
    BigRational::new(radicand.sqrt(), scale)
}

fn to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

/// Lower and upper sides of the budget inequality in exact arithmetic, with
/// square roots truncated to 60 digits.
fn budget_high_precision(s: &BigRational, k: u32, m: u32, order: u32) -> (BigRational, BigRational) {
    let d = 2u32;
    let r = BigRational::new(BigInt::one(), BigInt::from(k) * (BigInt::from(k) * BigInt::from(m)).pow(order));
    let two = BigRational::from_integer(BigInt::from(2));
    let sqrt_d = sqrt_rational(&two, 60);
    let sqrt_s = sqrt_rational(s, 60);
    let c_d = BigRational::from_integer(BigInt::from(2 * d * d));
    let eps = BigRational::one() / (&c_d * &sqrt_s);
    let eta = BigRational::new(BigInt::one(), BigInt::from(4));
    let rd = r.pow(d as i32);
    let lower = &rd * (BigRational::one() - eta);
    let upper = &rd * &r * (sqrt_d + BigRational::one()) * s + &rd * c_d * sqrt_s * eps;
    (lower, upper)
}

fn contradiction() -> Outcome {
    let mut violated = 0;
    let mut total = 0;
    let mut agree = true;
    let mut ratio = Vec::new();
    for s in [rat(1, 4), int(1), int(4)] {
        let s_f = rational::to_f64(&s);
        let k = ((4.0 * (2f64.sqrt() + 1.0) * s_f).ceil() as u32).max(2);
        assert!((2f64.sqrt() + 1.0) * s_f / f64::from(k) <= 0.25);
        for order in 0..=2 {
            let b = contradiction_budget(s_f, 2, k, 2, order).unwrap();
            let (lo, up) = budget_high_precision(&s, k, 2, order);
            let rel = |x: f64, q: &BigRational| ((x - to_f64(q)) / to_f64(q)).abs();
            agree &= rel(b.lower, &lo) <= 1e-12 && rel(b.upper, &up) <= 1e-12;
            agree &= b.violated == (lo > up);
            total += 1;
            if b.violated {
                violated += 1;
            }
            if order == 0 {
                let gap = &up - &lo;
                ratio.push(format!("S = {s_f}: K = {k}, upper/lower = {:.4}, exact gap sign {}", b.upper / b.lower, if gap.is_positive() { "+" } else if gap.is_zero() { "0" } else { "-" }));
            }
        }
    }
    Outcome::new(
        violated == total && agree,
        format!(
            "violated in {violated}/{total} cases, high-precision cross-check {}; {}",
            if agree { "agrees" } else { "disagrees" },
            ratio.join("; ")
        ),
    )
}

fn affine_dichotomy() -> Outcome {
    let p = params(6, 4, 2);
    let dp = DichotomyParams::with_depth(0.1, 0.5, 2, 1.0, 4).unwrap();
    let maps = [
        vec![int(1), rat(1, 2), int(0), int(1)],
        vec![rat(2, 3), rat(-1, 4), rat(1, 5), rat(3, 2)],
    ];
    let mut rects = 0;
    let mut bad = 0;
    for a in maps {
        let h = AffineEmbedding::new(a, vec![rat(1, 7), rat(-2, 3)], 2).unwrap();
        for v in classify(&p, &h, &dp).unwrap() {
            rects += 1;
            if v.property2.is_some() || v.property1.is_none() || v.property1_lhs != 0.0 {
                bad += 1;
            }
        }
    }
    Outcome::new(
        bad == 0 && rects == 2 * 9313,
        format!("{rects} rectangles over two maps, {bad} without exact property 1 or with property 2"),
    )
}

/// `max |fd − grad| / max |grad|` over every coordinate.
fn relative_gradient_error(x: &mut [f64], grad: &[f64], energy: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let eps = 1e-6;
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let keep = x[k];
        x[k] = keep + eps;
        let plus = energy(x);
        x[k] = keep - eps;
        let minus = energy(x);
        x[k] = keep;
        worst = worst.max(((plus - minus) / (2.0 * eps) - grad[k]).abs());
    }
    worst / scale
}

fn gradient_check() -> Outcome {
    let g = Grid::unit(2, 4).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = trial_rng(9, seed);
        let values: Vec<f64> = (0..g.cell_count()).map(|_| rng.gen_range(0.5..2.0)).collect();
        let rho = CellField::new(g.clone(), values).unwrap();
        let penalty = if seed % 2 == 0 { 0.0 } else { 0.3 };
        let pi = synthetic::random_smooth_map(&g, 2.0, &mut rng);
        let grad = gradient_single(&pi, &rho, 0.5, penalty).unwrap();
        let mut x = pi.values().to_vec();
        let err = relative_gradient_error(&mut x, grad.values(), &mut |v| {
            let f = GridField::new(g.clone(), 2, v.to_vec()).unwrap();
            energy_single(&f, &rho, 0.5, penalty).unwrap()
        });
        worst = worst.max(err);

        let sum = synthetic::random_sum(&g, 2, &mut rng);
        let budgets = [0.7, 0.7];
        let grad = gradient_sum(&sum, &rho, &budgets, penalty).unwrap();
        let flat = |terms: &[SumTerm]| -> Vec<f64> {
            terms.iter().flat_map(|t| t.f.values().iter().chain(t.pi.values()).copied()).collect()
        };
        let unflat = |v: &[f64]| -> LipschitzSum {
            let nodes = g.node_count();
            let terms = v
                .chunks(3 * nodes)
                .map(|c| SumTerm {
                    f: GridField::new(g.clone(), 1, c[..nodes].to_vec()).unwrap(),
                    pi: GridField::new(g.clone(), 2, c[nodes..].to_vec()).unwrap(),
                })
                .collect();
            LipschitzSum::new(g.clone(), terms).unwrap()
        };
        let mut x = flat(sum.terms());
        let err = relative_gradient_error(&mut x, &flat(&grad), &mut |v| {
            energy_sum(&unflat(v), &rho, &budgets, penalty).unwrap()
        });
        worst = worst.max(err);
    }
    Outcome::new(worst <= 1e-5, format!("40 instances, worst relative error {worst:.2e}"))
}

fn infeasibility_floor() -> Outcome {
    let rho = CellField::constant(Grid::unit(2, 32).unwrap(), 4.0);
    let res = solve_single(&rho, 1.0, &SolverConfig::default()).unwrap();
    Outcome::new(
        res.residual_sup >= 3.0 - 1e-3 && res.lip_achieved <= 1.0 + 1e-6,
        format!("residual_sup {:.6}, Lip {:.6}", res.residual_sup, res.lip_achieved),
    )
}

fn obstruction_trend() -> Outcome {
    let config = RunConfig::default();
    let run = || {
        let r = sweep_depth(&config.sweep.hierarchy, &config.sweep.budgets, &config.sweep.depths, &config.solver).unwrap();
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        (r, csv)
    };
    let (result, csv) = run();
    let (_, again) = run();
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("sweep.csv"), &csv).unwrap();
    let mut failures = Vec::new();
    let mut curves = Vec::new();
    for &s in &config.sweep.budgets {
        let res: Vec<f64> = config.sweep.depths.iter().map(|&k| result.row(k, s).unwrap().residual_l2).collect();
        for (k, w) in res.windows(2).enumerate() {
            if w[1] < 0.8 * w[0] {
                failures.push(format!("S = {s}, depth {k} to {}", k + 1));
            }
        }
        curves.push(format!("S = {s}: {}", res.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(" ")));
    }
    let errors = result.rows.iter().filter(|r| r.status != "ok").count();
    let identical = csv == again;
    Outcome::new(
        failures.is_empty() && identical && errors == 0,
        format!(
            "{} rows, {errors} errors, rerun {}, drops over 20%: {}; residuals by depth {}",
            result.rows.len(),
            if identical { "byte-identical" } else { "differs" },
            if failures.is_empty() { "none".to_string() } else { failures.join(", ") },
            curves.join("; ")
        ),
    )
}

fn criteria() -> Vec<Criterion> {
    let secs = Duration::from_secs;
    vec![
        Criterion { id: 1, title: "exact discrepancy, K=6 M=4, orders 0..=2", time_limit: secs(10), check: exact_discrepancy },
        Criterion { id: 2, title: "uncovered measure of cubes up to order 1", time_limit: secs(10), check: measure_bound },
        Criterion { id: 3, title: "average-determinant estimate, h = 1/128", time_limit: secs(60), check: average_det },
        Criterion { id: 4, title: "volume against boundary determinant integrals", time_limit: secs(10), check: stokes },
        Criterion { id: 5, title: "regularization of random sums", time_limit: secs(30), check: regularization },
        Criterion { id: 6, title: "biLipschitz bounds of the embedding, S <= 4", time_limit: secs(30), check: embedding_bounds },
        Criterion { id: 7, title: "contradiction budget with eps = 1/(c_d sqrt S)", time_limit: secs(1), check: contradiction },
        Criterion { id: 8, title: "affine dichotomy up to order 2", time_limit: secs(10), check: affine_dichotomy },
        Criterion { id: 9, title: "solver gradients against central differences", time_limit: secs(30), check: gradient_check },
        Criterion { id: 10, title: "determinant floor for rho = 4 at budget 1", time_limit: secs(60), check: infeasibility_floor },
        Criterion { id: 11, title: "residual trend over depth and budget", time_limit: secs(15 * 60), check: obstruction_trend },
    ]
}

fn main() {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let verdicts = run_all(&criteria(), &only);
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        verdicts.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
