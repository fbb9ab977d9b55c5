use super::*;
use crate::group::tests::{abelian_factor, heisenberg_spec, rank2_spec};
use crate::group::{validate, GroupSpec, SolTypeGroup};
use crate::metric::tests::sol8;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn rank2() -> (SolTypeGroup, SplitMetric) {
    let g = validate(&rank2_spec()).unwrap().0;
    let m = SplitMetric::new(&g, DMatrix::identity(4, 4)).unwrap();
    (g, m)
}

fn el(nil: &[&[f64]], base: &[f64]) -> GroupElement {
    GroupElement::new(nil.iter().map(|h| DVector::from_row_slice(h)).collect(), DVector::from_row_slice(base))
}

fn single_factor(derivation: &[f64], dim: usize, gram: DMatrix<f64>) -> SplitMetric {
    let spec = GroupSpec {
        name: None,
        rank: 2,
        factors: vec![abelian_factor(derivation, dim, &[1.0, 0.0])],
    };
    let g = validate(&spec).unwrap().0;
    let mut full = DMatrix::identity(dim + 2, dim + 2);
    full.view_mut((0, 0), (dim, dim)).copy_from(&gram);
    SplitMetric::new(&g, full).unwrap()
}

#[test]
fn equal_points_give_trivial_path() {
    let (_, m) = rank2();
    let p = el(&[&[3.0], &[-2.0]], &[0.5, 1.0]);
    let r = rho(&p, &p, &m).unwrap();
    assert!(r.half_spaces.half_spaces.iter().all(|h| h.threshold.is_none()));
    assert_eq!(r.length, 0.0);
    assert!(r.path.segments.is_empty());
}

#[test]
fn one_dimensional_threshold_is_log() {
    let m = single_factor(&[1.0], 1, DMatrix::identity(1, 1));
    for c in [0.3, 1.0, 7.5, -1e6] {
        let h = threshold(&m, 0, &DVector::from_element(1, c)).unwrap().unwrap();
        assert!((h - c.abs().ln()).abs() < 1e-14);
    }
}

#[test]
fn two_dimensional_threshold_matches_quartic() {
    let m = single_factor(&[1.0, 0.0, 0.0, 2.0], 2, DMatrix::identity(2, 2));
    for (c1, c2) in [(3.0, 4.0), (0.1, 50.0), (200.0, 0.0), (0.0, 9.0), (-2.0, 0.5)] {
        let h = threshold(&m, 0, &DVector::from_vec(vec![c1, c2])).unwrap().unwrap();
        // x = e^{-H}: c1² x² + c2² x⁴ = 1.
        let x2 = if c2 == 0.0 {
            1.0 / (c1 * c1)
        } else {
            let (a, b) = (c2 * c2, c1 * c1);
            (-b + (b * b + 4.0 * a).sqrt()) / (2.0 * a)
        };
        let expected = -0.5 * x2.ln();
        assert!((h - expected).abs() < 1e-10, "{c1} {c2}: {h} vs {expected}");
    }
}

#[test]
fn jordan_threshold_is_last_crossing() {
    let gram = DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.0]);
    let m = single_factor(&[1.0, 3.0, 0.0, 1.0], 2, gram);
    for hv in [[0.0, 5.0], [40.0, -1.0], [-3.0, 3.0]] {
        let h = DVector::from_row_slice(&hv);
        let t = threshold(&m, 0, &h).unwrap().unwrap();
        for k in 0..2000 {
            let s = t + k as f64 * 0.01;
            assert!(height_norm(&m, 0, &h, s) <= 1.0 + 1e-12, "{s}");
        }
        assert!(height_norm(&m, 0, &h, t - 1e-9 * t.abs().max(1.0)) > 1.0 - 1e-12);
        assert!(height_norm(&m, 0, &h, t - 1e-6) > 1.0);
    }
}

#[test]
fn corner_example_matches_grid_search() {
    let (g, m) = rank2();
    let p = g.identity();
    let e10 = 10.0_f64.exp();
    let q = el(&[&[e10], &[e10]], &[0.0, 0.0]);
    let r = rho(&p, &q, &m).unwrap();
    let ts = r.half_spaces.half_spaces.iter().map(|h| h.threshold.unwrap()).collect::<Vec<_>>();
    assert!((ts[0] - 10.0).abs() < 1e-12 && (ts[1] - 10.0).abs() < 1e-12);

    let n = 400;
    let grid: Vec<f64> = (0..n).map(|k| -5.0 + 30.0 * k as f64 / (n - 1) as f64).collect();
    let mut best = f64::INFINITY;
    for &s in &grid {
        for &t in &grid {
            // Touch x = 10 at (10, s), then y = 10 at (t, 10).
            let (a, b) = ((10.0_f64, s), (t, 10.0_f64));
            let base = a.0.hypot(a.1) + (b.0 - a.0).hypot(b.1 - a.1) + b.0.hypot(b.1);
            let top1 = a.0.max(b.0);
            let top2 = a.1.max(b.1);
            let jumps = (10.0 - top1).exp() + (10.0 - top2).exp();
            best = best.min(base + jumps);
        }
    }
    assert!((r.length - best).abs() <= 0.01 * best, "{} vs {}", r.length, best);
    assert!((r.length - (2.0 * 200.0_f64.sqrt() + 2.0)).abs() < 1e-6);
    assert_eq!(r.path.jump_count(), 2);
    assert!(r.path.base_segment_count() <= 3);
}

#[test]
fn straight_segment_when_no_nil_displacement() {
    let (g, m) = rank2();
    let q = g.base_element(DVector::from_vec(vec![3.0, -4.0]));
    let r = rho(&g.identity(), &q, &m).unwrap();
    assert_eq!(r.length, 5.0);
    assert_eq!(r.path.segments.len(), 1);
}

#[test]
fn hsv_examples() {
    let (g, m) = rank2();
    let p = g.identity();
    let q = el(&[&[5.0_f64.exp()], &[0.0]], &[0.0, 0.0]);
    let hs = half_spaces(&p, &q, &m).unwrap();
    let inside = vec![DVector::from_vec(vec![6.0, 0.0])];
    assert!(is_hsv(&inside, &hs).visits_all);
    let segment = vec![DVector::zeros(2), DVector::from_vec(vec![4.0, 3.0])];
    let check = is_hsv(&segment, &hs);
    assert!(!check.visits_all);
    assert_eq!(check.violated, vec![0]);
    let trivial = half_spaces(&p, &p, &m).unwrap();
    assert!(is_hsv(&segment, &trivial).visits_all);
}

#[test]
fn reverse_pair_is_reported() {
    let (_, m) = rank2();
    let p = el(&[&[0.0], &[0.0]], &[0.0, 0.0]);
    let q = el(&[&[100.0], &[-3.0]], &[1.0, 2.0]);
    let (a, b) = rho_both(&p, &q, &m).unwrap();
    assert!(a.length.is_finite() && b.length.is_finite());
}

#[test]
fn step_two_factor_is_flagged() {
    let g = validate(&heisenberg_spec()).unwrap().0;
    let m = SplitMetric::new(&g, DMatrix::identity(7, 7)).unwrap();
    let q = el(&[&[3.0, -1.0, 20.0], &[1.0, 4.0]], &[0.5, -0.5]);
    let r = rho(&g.identity(), &q, &m).unwrap();
    assert!(!r.exact);
    assert!(is_hsv(&r.path.base_vertices(), &r.half_spaces).visits_all);
}

#[test]
fn greedy_fallback_for_many_half_spaces() {
    let roots: Vec<[f64; 2]> = (0..8)
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / 4.0 + 0.1;
            [a.cos(), a.sin()]
        })
        .collect();
    let spec = GroupSpec {
        name: None,
        rank: 2,
        factors: roots.iter().map(|r| abelian_factor(&[1.0], 1, r)).collect(),
    };
    let g = validate(&spec).unwrap().0;
    let m = SplitMetric::new(&g, DMatrix::identity(10, 10)).unwrap();
    let nil: Vec<DVector<f64>> = (0..8).map(|_| DVector::from_element(1, 3.0_f64.exp())).collect();
    let q = GroupElement::new(nil, DVector::zeros(2));
    let r = rho(&g.identity(), &q, &m).unwrap();
    assert!(!r.exhaustive);
    assert_eq!(r.order.len(), 8);
    assert!(is_hsv(&r.path.base_vertices(), &r.half_spaces).visits_all);
}

fn sol8_metric() -> SplitMetric {
    let g = sol8();
    let mut gram = DMatrix::identity(6, 6);
    gram[(4, 4)] = 4.0;
    gram[(0, 0)] = 2.0;
    SplitMetric::new(&g, gram).unwrap()
}

fn arb_element(nf: usize) -> impl Strategy<Value = GroupElement> {
    (
        prop::collection::vec((-1.0f64..1.0, 0.0f64..8.0), nf),
        prop::collection::vec(-3.0f64..3.0, 2),
    )
        .prop_map(|(nil, base)| {
            GroupElement::new(
                nil.into_iter().map(|(s, e)| DVector::from_element(1, s * e.exp())).collect(),
                DVector::from_vec(base),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rho_invariants(p in arb_element(4), q in arb_element(4), x in arb_element(4)) {
        let m = sol8_metric();
        let g = m.group();
        let r = rho(&p, &q, &m).unwrap();
        prop_assert!(r.length >= r.lower_bound - 1e-12);
        prop_assert!(r.length >= m.base_norm(&(&q.base - &p.base)) - 1e-12);

        let check = is_hsv(&r.path.base_vertices(), &r.half_spaces);
        prop_assert!(check.visits_all, "violated {:?}", check.violated);
        let costs_ok = r.path.segments.iter().all(|s| match s {
            BoxSegment::Jump { cost, .. } => *cost <= 1.0 + 1e-9,
            _ => true,
        });
        prop_assert!(costs_ok);
        let as_path = r.path.to_path();
        prop_assert_eq!(as_path.start(), Some(&p));
        prop_assert_eq!(as_path.end(), Some(&q));

        let measured = m.path_length(&r.path.to_path()).unwrap().value;
        prop_assert!((measured - r.length).abs() <= 1e-8 * r.length.max(1.0), "{} vs {}", measured, r.length);

        let xp = g.mul(&x, &p);
        let xq = g.mul(&x, &q);
        let t = rho(&xp, &xq, &m).unwrap();
        prop_assert!((t.length - r.length).abs() <= 1e-8 * r.length.max(1.0), "{} vs {}", t.length, r.length);
    }

    #[test]
    fn relaxing_a_half_space_never_lengthens_the_tour(
        p in arb_element(4),
        q in arb_element(4),
        i in 0usize..4,
        by in 0.0f64..5.0,
    ) {
        let m = sol8_metric();
        let hs = half_spaces(&p, &q, &m).unwrap();
        let before = tour_length(&p, &q, &m, &hs);
        let after = tour_length(&p, &q, &m, &hs.relaxed(i, by));
        prop_assert!(after <= before * (1.0 + 1e-9) + 1e-12, "{} > {}", after, before);
    }
}
