use super::*;
use crate::group::tests::rank2_spec;
use crate::group::validate;
use nalgebra::DMatrix;

fn metric(base: [f64; 2]) -> SplitMetric {
    let g = validate(&rank2_spec()).unwrap().0;
    SplitMetric::new(&g, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, base[0], base[1]]))).unwrap()
}

fn spec(pairs: usize, separations: Vec<f64>, seed: u64) -> SampleSpec {
    SampleSpec {
        pairs_per_separation: pairs,
        separations,
        seed,
        kinds: vec![PairKind::Mixed],
    }
}

#[test]
fn equal_points_have_zero_distance() {
    let m = metric([1.0, 1.0]);
    let p = GroupElement::new(vec![DVector::from_element(1, 4.0), DVector::from_element(1, -2.0)], DVector::from_vec(vec![1.0, 2.0]));
    let e = estimate_distance(&p, &p, &m, &OptimizerSettings::default(), 100).unwrap();
    assert_eq!((e.lower, e.upper), (0.0, 0.0));
}

#[test]
fn base_pair_is_exact() {
    let m = metric([4.0, 1.0]);
    let g = m.group();
    let q = g.base_element(DVector::from_vec(vec![3.0, 4.0]));
    let e = estimate_distance(&g.identity(), &q, &m, &OptimizerSettings::default(), 100).unwrap();
    assert_eq!(e.upper, e.lower);
    assert_eq!(e.lower, (36.0_f64 + 16.0).sqrt());
}

#[test]
fn upper_tracks_rho_for_large_nil_displacement() {
    let m = metric([1.0, 1.0]);
    let pairs = sample_pairs(&m, &spec(10, vec![30.0, 35.0, 40.0, 45.0, 50.0], 11));
    assert_eq!(pairs.len(), 50);
    let rows: Vec<PairMeasurement> = pairs
        .par_iter()
        .map(|s| measure_pair(&s.p, &s.q, &m, &OptimizerSettings::default(), DEFAULT_BUDGET).unwrap())
        .collect();
    for r in &rows {
        assert!(r.lower <= r.upper);
        assert!(r.lower <= r.rho);
        assert!(r.upper <= r.rho * (1.0 + 1e-9));
        assert!(r.upper >= 0.95 * r.rho, "{} vs {}", r.upper, r.rho);
    }
}

#[test]
fn sampling_is_seeded() {
    let m = metric([1.0, 1.0]);
    let s = spec(3, vec![5.0, 10.0], 42);
    assert_eq!(sample_pairs(&m, &s), sample_pairs(&m, &s));
    let other = sample_pairs(&m, &spec(3, vec![5.0, 10.0], 43));
    assert_ne!(sample_pairs(&m, &s), other);
    for pair in sample_pairs(&m, &s) {
        assert!((m.base_norm(&pair.q.base) - pair.separation).abs() < 1e-9);
        for i in 0..2 {
            let c = m.coset_norm(i, &pair.q.nil[i]);
            assert!(c >= (pair.separation - 1.0).exp() * (1.0 - 1e-12) && c <= pair.separation.exp() * (1.0 + 1e-12));
        }
    }
}

#[test]
fn identical_metrics_compare_trivially() {
    let m = metric([1.0, 1.0]);
    let r = compare_metrics(&m, &m, &spec(2, vec![5.0, 10.0], 3), &OptimizerSettings::default(), 500).unwrap();
    assert!(r.consistent);
    for f in &r.fits {
        assert!((f.lambda_top - 1.0).abs() < 1e-12 && (f.lambda_bottom - 1.0).abs() < 1e-12);
        assert!(f.c_upper <= 1e-9 * r.max_separation);
    }
    for row in &r.rows {
        assert!((row.d1_upper - row.d2_upper).abs() <= 0.02 * row.d1_upper);
    }
}

#[test]
fn delta_of_identical_metrics_is_zero() {
    let m = metric([1.0, 1.0]);
    let r = delta_vs_empirical(&m, &m, &spec(2, vec![5.0], 1), &OptimizerSettings::default(), 200).unwrap();
    assert_eq!(r.closed_form, 0.0);
    assert_eq!(r.empirical, 0.0);
}

#[test]
fn base_only_pairs_have_rho_equal_distance() {
    let m = metric([4.0, 1.0]);
    let s = SampleSpec {
        pairs_per_separation: 4,
        separations: vec![5.0, 10.0],
        seed: 9,
        kinds: vec![PairKind::Base],
    };
    let r = rho_vs_distance(&m, &s, &OptimizerSettings::default(), 100).unwrap();
    assert!(r.above_lower);
    for row in &r.rows {
        assert!((row.rho - row.upper).abs() <= 1e-12 * row.upper);
    }
}

#[test]
fn directional_pairs_follow_the_direction() {
    let m = metric([1.0, 1.0]);
    let u = DVector::from_vec(vec![1.0, 0.0]);
    let pairs = directional_pairs(m.group(), &u, &[5.0, 10.0]);
    assert_eq!(pairs[1].q.base, DVector::from_vec(vec![10.0, 0.0]));
}

/// Hyperbolic distance from `(0, 0)` to `(h, v)` for `dv² + e^{−2v}dh²`.
fn hyperbolic(h: f64, v: f64) -> f64 {
    let y = v.exp();
    (1.0 + (h * h + (y - 1.0).powi(2)) / (2.0 * y)).acosh()
}

#[test]
fn matches_product_of_hyperbolic_planes() {
    // Roots e₁*, e₂* with an orthonormal Gram give H² × H².
    let m = metric([1.0, 1.0]);
    for pair in sample_pairs(&m, &spec(2, vec![5.0, 20.0], 5)) {
        let exact = hyperbolic(pair.q.nil[0][0], pair.q.base[0]).hypot(hyperbolic(pair.q.nil[1][0], pair.q.base[1]));
        let e = estimate_distance(&pair.p, &pair.q, &m, &OptimizerSettings::default(), DEFAULT_BUDGET).unwrap();
        assert!(e.upper >= exact * (1.0 - 1e-6), "{} < {}", e.upper, exact);
        assert!(e.upper <= exact * 1.002, "{} vs {}", e.upper, exact);
    }
}
