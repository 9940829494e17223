//! Worked examples that cross module boundaries, each checked against an
//! oracle computed independently of the code path under test.

use num_traits::Zero;
use pje_core::density::{build_constraint_set, DensityField};
use pje_core::dichotomy::{depth_bound, find_good_pair, DichotomyParams, VerdictStatus};
use pje_core::fields::{c_d, jacobian_det_volume, lipschitz_constant, CellField, Grid, GridField};
use pje_core::hierarchy::{enumerate_adjacent_pairs, enumerate_rectangles, AdjacentPair, HierarchyParams, RatBox};
use pje_core::rational::{self, int, rat, Rational};
use pje_core::solver::{solve_sum, sweep_depth, SolverConfig};
use pje_core::sums::{LipschitzSum, SumTerm};
use pje_core::synthetic;
use pje_core::Error;

fn params(k: u32, m: u32, k_max: u32) -> HierarchyParams {
    HierarchyParams::new(2, k, m, k_max).unwrap()
}

#[test]
fn order_two_rectangle_count_matches_the_product_formula() {
    let p = params(6, 4, 2);
    let counted = enumerate_rectangles(&p, 2).unwrap().count();
    assert_eq!(counted, 9216);
    assert_eq!(counted as u128, p.rect_count(2));
    let pairs: Vec<AdjacentPair> = enumerate_adjacent_pairs(&p, 1).unwrap().collect();
    assert_eq!(pairs.len(), 485);
    for pair in &pairs {
        let shift: Vec<Rational> =
            pair.right.principal_vertex().iter().zip(pair.left.principal_vertex()).map(|(a, b)| a - b).collect();
        assert_eq!(shift[0], *pair.side());
        assert!(shift[1].is_zero());
    }
}

/// Midpoint sums of `value_at` over the finest cells are exact for a field
/// that is constant on every such cell.
fn midpoint_integral(rho: &DensityField, b: &RatBox, h: &Rational) -> Rational {
    let n0 = rational::floor_to_i64(&(b.side(0) / h));
    let n1 = rational::floor_to_i64(&(b.side(1) / h));
    let half = h / int(2);
    let mut total = Rational::zero();
    for i in 0..n0 {
        for j in 0..n1 {
            let x = vec![
                &b.lo()[0] + h * int(i) + &half,
                &b.lo()[1] + h * int(j) + &half,
            ];
            total += rho.value_at(&x).unwrap();
        }
    }
    total * h * h
}

#[test]
fn depth_one_cube_integral_agrees_with_cell_decomposition() {
    let p = params(6, 4, 1);
    let rho = DensityField::constant_one(p.clone()).refine_to_depth(1).unwrap();
    let q = p.root_rect().subcube(0).unwrap();
    let finest = p.cube_side(1);
    let exact = rho.integrate_cube(&q).unwrap();
    assert_eq!(exact, midpoint_integral(&rho, &q.bounds(), &finest));
    let pair = AdjacentPair::new(&p.root_rect(), 0).unwrap();
    let disc = rational::abs(&rho.discrepancy(&pair).unwrap());
    let r = pair.side().clone();
    assert!(disc > &r * &r * rat(1, 6));
}

fn trapezoid(field: &GridField) -> f64 {
    let g = field.grid();
    let nodes = g.nodes_per_axis();
    let h = g.h_f64();
    let mut total = 0.0;
    for k in 0..g.node_count() {
        let idx = g.node_multi_index(k);
        let w: f64 = idx
            .iter()
            .zip(&nodes)
            .map(|(&i, &n)| if i == 0 || i + 1 == n { 0.5 } else { 1.0 })
            .product();
        total += w * field.values()[k];
    }
    total * h.powi(g.dim() as i32)
}

#[test]
fn mollified_cube_integral_converges() {
    let p = params(6, 4, 1);
    let rho = DensityField::constant_one(p.clone()).refine_to_depth(1).unwrap();
    let q = p.root_rect().subcube(0).unwrap();
    let exact = rational::to_f64(&rho.integrate_cube(&q).unwrap());
    let grid = Grid::over_box(&q.bounds(), 480).unwrap();
    let smooth = rho.mollify_to_grid(1e-3, &grid).unwrap();
    assert!(smooth.sup_norms()[0] <= 2.0);
    assert!((trapezoid(&smooth) - exact).abs() < 1e-2);
}

#[test]
fn refined_density_satisfies_its_constraints() {
    let p = params(6, 4, 1);
    let rho = DensityField::constant_one(p).refine_to_depth(1).unwrap();
    let set = build_constraint_set(&rho, 1, &rat(1, 10)).unwrap();
    assert_eq!(set.len(), 485);
    assert!(set.violations(&rho).unwrap().is_empty());
}

#[test]
fn lipschitz_constant_against_all_node_pairs() {
    let g = Grid::unit(2, 8).unwrap();
    let f = GridField::scalar_fn(g.clone(), |x| 3.0 * x[0] + 4.0 * x[1]);
    let mut brute = 0.0f64;
    for a in 0..g.node_count() {
        for b in 0..a {
            let xa = g.node_coords(&g.node_multi_index(a));
            let xb = g.node_coords(&g.node_multi_index(b));
            let dist = ((xa[0] - xb[0]).powi(2) + (xa[1] - xb[1]).powi(2)).sqrt();
            brute = brute.max((f.values()[a] - f.values()[b]).abs() / dist);
        }
    }
    assert!((brute - 5.0).abs() < 1e-12);
    assert!((lipschitz_constant(&f) - brute).abs() < 1e-12);
}

#[test]
fn quadratic_volume_integral_is_second_order() {
    let b = RatBox::unit(2);
    for n in [16usize, 32, 64] {
        let g = Grid::unit(2, n).unwrap();
        let h = g.h_f64();
        let pi = GridField::from_fn(g, 2, |x, o| {
            o[0] = x[0] * x[0];
            o[1] = x[1];
        });
        assert!((jacobian_det_volume(&pi, &b).unwrap() - 1.0).abs() <= h * h);
    }
}

#[test]
fn affine_sums_have_no_comparison_term() {
    let p = params(6, 4, 0);
    let grid = Grid::over_box(&p.root_rect().bounds(), 96).unwrap();
    let terms = vec![SumTerm {
        f: GridField::scalar_fn(grid.clone(), |_| 0.5),
        pi: GridField::from_fn(grid.clone(), 2, |x, o| {
            o[0] = 1.5 * x[0] + 0.5 * x[1];
            o[1] = -0.5 * x[0] + x[1];
        }),
    }];
    let sum = LipschitzSum::new(grid, terms).unwrap().regularize();
    let pair = AdjacentPair::new(&p.root_rect(), 2).unwrap();
    let w = sum.translation_offsets(&pair);
    let report = sum.check_sum_estimate(&pair, &w).unwrap();
    let r = rational::to_f64(pair.side());
    let first = r.powi(3) * (2f64.sqrt() + 1.0) * sum.budget();
    assert!((report.rhs - first).abs() <= 1e-12 * first.max(1.0));
    assert!(report.lhs <= first);
}

fn unit_budget_params(s: f64) -> DichotomyParams {
    let l = (1.0 + 2.0 * s).sqrt();
    let k0 = depth_bound(l, 1.0).unwrap();
    DichotomyParams::with_depth(1.0 / (c_d(2) * s.sqrt()), 1.0, k0, l, 4).unwrap()
}

#[test]
fn good_pair_for_a_gently_curved_sum() {
    // (√2 + 1) S / K <= 1/4 at S = 1
    let p = params(16, 2, 2);
    let grid = Grid::unit(2, 96).unwrap();
    let terms = vec![
        SumTerm {
            f: GridField::scalar_fn(grid.clone(), |x| 0.8 + 0.1 * x[1]),
            pi: GridField::from_fn(grid.clone(), 2, |x, o| {
                o[0] = x[0] + 0.02 * (3.0 * x[1]).sin();
                o[1] = x[1] + 0.02 * (2.0 * x[0]).cos();
            }),
        },
        SumTerm {
            f: GridField::scalar_fn(grid.clone(), |x| 0.5 - 0.1 * x[0]),
            pi: GridField::from_fn(grid.clone(), 2, |x, o| {
                o[0] = 0.6 * x[0] - 0.8 * x[1];
                o[1] = 0.8 * x[0] + 0.6 * x[1] + 0.01 * (x[0] * x[1]);
            }),
        },
    ];
    let sum = LipschitzSum::new(grid, terms).unwrap().regularize();
    let sum = sum.scaled((1.0 / sum.budget()).sqrt());
    assert!((sum.budget() - 1.0).abs() < 1e-9);
    let dp = unit_budget_params(1.0);
    let cert = find_good_pair(&p, &sum, &dp).unwrap();
    assert!(cert.bound_lhs <= cert.bound_rhs);
    assert!(cert.rect_verdict.property1.is_some());
    assert!(cert.rect_verdict.rect.order() <= dp.k0);
}

/// Outside the lemma's regime (K fixed, generic curvature) the search reports
/// the rectangle that has neither property.
#[test]
fn random_sum_at_small_k_has_no_good_rectangle() {
    let p = params(6, 4, 2);
    let grid = Grid::unit(2, 96).unwrap();
    let mut rng = synthetic::rng(11);
    let sum = synthetic::random_regular_sum(&grid, 2, 1.0, &mut rng).unwrap();
    match find_good_pair(&p, &sum, &unit_budget_params(sum.budget())) {
        Err(Error::NoGoodRectangle { verdicts }) => {
            let last = verdicts.last().unwrap();
            assert_eq!(last.status, VerdictStatus::Neither);
            assert!(last.property1_margin < 0.0);
        }
        other => panic!("expected NoGoodRectangle, got {other:?}"),
    }
}

#[test]
fn smooth_density_is_reproduced_by_one_term() {
    let g = Grid::unit(2, 64).unwrap();
    let rho = CellField::from_fn(g.clone(), |c| {
        let x = g.cell_center(c);
        0.6 + 0.2 * (x[0] * 1.5).sin() * (x[1] * 2.0).cos()
    });
    let res = solve_sum(&rho, 1, 4.0, &SolverConfig::default()).unwrap();
    assert!(res.residual_l2 < 1e-2, "residual {}", res.residual_l2);
    assert!(res.s_value <= 4.0 * (1.0 + 1e-5));
}

fn coarse_config() -> SolverConfig {
    SolverConfig {
        cells_per_cube: 4,
        max_iters: 20,
        coarse_levels: 1,
        ..SolverConfig::default()
    }
}

#[test]
fn residual_decreases_with_budget_at_depth_one() {
    let p = params(6, 2, 2);
    let sweep = sweep_depth(&p, &[1.0, 2.0, 4.0, 8.0], &[1], &coarse_config()).unwrap();
    let res: Vec<f64> = sweep.rows.iter().map(|r| r.residual_l2).collect();
    assert!(res.windows(2).all(|w| w[1] < w[0]), "{res:?}");
}

#[test]
fn deeper_refinement_is_harder_to_match() {
    let p = params(6, 2, 2);
    let sweep = sweep_depth(&p, &[4.0], &[0, 2], &coarse_config()).unwrap();
    let shallow = sweep.row(0, 4.0).unwrap().residual_l2;
    let deep = sweep.row(2, 4.0).unwrap().residual_l2;
    assert!(deep > shallow, "depth 0: {shallow}, depth 2: {deep}");
}
