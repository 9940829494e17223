use proptest::prelude::*;

use pje_core::density::DensityField;
use pje_core::fields::{lipschitz_constant, lipschitz_constants, CellField, Grid, GridField};
use pje_core::hierarchy::{HierarchyParams, RatBox};
use pje_core::rational::{rat, Rational};
use pje_core::solver::{energy_sum, gradient_sum, project_lipschitz};
use pje_core::synthetic;

fn refined(k0: u32) -> DensityField {
    let p = HierarchyParams::new(2, 3, 2, 2).unwrap();
    DensityField::constant_one(p).refine_to_depth(k0).unwrap()
}

/// Sorted pair of rationals in `[0, 1]` with denominator `den`.
fn interval(den: i64) -> impl Strategy<Value = (Rational, Rational)> {
    (0..=den, 0..=den).prop_filter_map("non-empty", move |(a, b)| {
        (a != b).then(|| (rat(a.min(b), den), rat(a.max(b), den)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn integrals_are_additive_under_splitting(
        (x0, x1) in interval(97),
        (y0, y1) in interval(89),
        t in 1i64..16,
        k0 in 0u32..=2,
    ) {
        let rho = refined(k0);
        let b = RatBox::new(vec![x0.clone(), y0.clone()], vec![x1.clone(), y1.clone()]).unwrap();
        let cut = &x0 + (&x1 - &x0) * rat(t, 16);
        let left = RatBox::new(vec![x0, y0.clone()], vec![cut.clone(), y1.clone()]).unwrap();
        let right = RatBox::new(vec![cut, y0], vec![x1, y1]).unwrap();
        let whole = rho.integrate(&b).unwrap();
        prop_assert_eq!(whole, rho.integrate(&left).unwrap() + rho.integrate(&right).unwrap());
    }

    #[test]
    fn integral_is_bounded_by_extreme_values((x0, x1) in interval(50), (y0, y1) in interval(50)) {
        let rho = refined(2);
        let b = RatBox::new(vec![x0, y0], vec![x1, y1]).unwrap();
        let v = rho.integrate(&b).unwrap();
        prop_assert!(v >= b.volume() && v <= b.volume() * rat(2, 1));
    }

    #[test]
    fn sum_gradient_matches_central_differences(seed in any::<u64>(), penalty in 0.0f64..1.0) {
        let g = Grid::unit(2, 4).unwrap();
        let mut rng = synthetic::rng(seed);
        let sum = synthetic::random_sum(&g, 2, &mut rng);
        let rho = CellField::from_fn(g, |c| 1.0 + 0.2 * c[0] as f64 - 0.1 * c[1] as f64);
        let budgets = [0.7, 0.7];
        let grad = gradient_sum(&sum, &rho, &budgets, penalty).unwrap();
        let eps = 1e-6;
        for (i, term) in sum.terms().iter().enumerate() {
            for k in [0usize, 7, 12, 24] {
                let mut plus = sum.terms().to_vec();
                plus[i].f.values_mut()[k] += eps;
                let mut minus = sum.terms().to_vec();
                minus[i].f.values_mut()[k] -= eps;
                let rebuild = |t: Vec<_>| pje_core::sums::LipschitzSum::new(sum.grid().clone(), t).unwrap();
                let fd = (energy_sum(&rebuild(plus), &rho, &budgets, penalty).unwrap()
                    - energy_sum(&rebuild(minus), &rho, &budgets, penalty).unwrap())
                    / (2.0 * eps);
                let an = grad[i].f.values()[k];
                prop_assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "f{} node {}: {} vs {}", i, k, fd, an);
            }
            prop_assert_eq!(grad[i].pi.values().len(), term.pi.values().len());
        }
    }

    #[test]
    fn projection_is_feasible_and_idempotent(seed in any::<u64>(), b in 0.05f64..3.0) {
        let g = Grid::unit(2, 12).unwrap();
        let mut rng = synthetic::rng(seed);
        let pi = synthetic::random_smooth_map(&g, 4.0, &mut rng);
        let once = project_lipschitz(&pi, &[b, b]).unwrap();
        for l in lipschitz_constants(&once) {
            prop_assert!(l <= b * (1.0 + 1e-6));
        }
        let twice = project_lipschitz(&once, &[b, b]).unwrap();
        let moved = once.values().iter().zip(twice.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(moved <= 1e-9);
    }

    #[test]
    fn lipschitz_constant_is_absolutely_homogeneous(seed in any::<u64>(), c in -4.0f64..4.0) {
        let g = Grid::unit(2, 10).unwrap();
        let mut rng = synthetic::rng(seed);
        let f = synthetic::random_scalar(&g, &mut rng);
        let scaled = f.scaled(c);
        prop_assert!((lipschitz_constant(&scaled) - c.abs() * lipschitz_constant(&f)).abs() <= 1e-12);
    }

    #[test]
    fn regularization_preserves_budget_and_products(seed in any::<u64>(), n in 1usize..4) {
        let g = Grid::unit(2, 16).unwrap();
        let mut rng = synthetic::rng(seed);
        let sum = synthetic::random_sum(&g, n, &mut rng);
        let reg = sum.regularize();
        prop_assert!(reg.regularity_defect(1e-9).is_none());
        prop_assert!((reg.budget() - sum.s_value()).abs() <= 1e-8 * sum.s_value().max(1.0));
        prop_assert!(reg.sum().em_field().max_abs_diff(&sum.em_field()) <= 1e-8);
        let again = reg.sum().regularize();
        let drift = again
            .sum()
            .terms()
            .iter()
            .zip(reg.sum().terms())
            .flat_map(|(a, b)| {
                a.f.values().iter().zip(b.f.values()).chain(a.pi.values().iter().zip(b.pi.values()))
            })
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        prop_assert!(drift <= 1e-12);
    }
}

#[test]
fn constant_fields_have_zero_gradient_norm() {
    let g = Grid::unit(3, 3).unwrap();
    assert_eq!(lipschitz_constant(&GridField::scalar_fn(g, |_| 2.5)), 0.0);
}
