use super::*;
use crate::boxpath::rho;
use crate::distortion::uniform_certificate;
use crate::group::tests::{abelian_factor, rank2_spec};
use crate::group::validate;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rank2() -> SplitMetric {
    let g = validate(&rank2_spec()).unwrap().0;
    SplitMetric::new(&g, DMatrix::identity(4, 4)).unwrap()
}

fn rank3() -> SplitMetric {
    let spec = GroupSpec {
        name: None,
        rank: 3,
        factors: vec![
            abelian_factor(&[1.0], 1, &[1.0, 0.0, 0.0]),
            abelian_factor(&[1.0], 1, &[0.0, 1.0, 0.0]),
            abelian_factor(&[1.0], 1, &[0.0, 0.0, 1.0]),
        ],
    };
    let g = validate(&spec).unwrap().0;
    SplitMetric::new(&g, DMatrix::identity(6, 6)).unwrap()
}

fn el(nil: &[f64], base: &[f64]) -> GroupElement {
    GroupElement::new(nil.iter().map(|h| DVector::from_element(1, *h)).collect(), DVector::from_row_slice(base))
}

/// Path through the given base vertices whose nil coordinates grow
/// linearly in the node index from 0 to `nil`.
fn polyline_path(vertices: &[Vec<f64>], nil: &[f64]) -> PiecewisePath {
    let m = vertices.len() - 1;
    let nodes = vertices
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let s = k as f64 / m as f64;
            el(&nil.iter().map(|h| h * s).collect::<Vec<_>>(), v)
        })
        .collect();
    PiecewisePath::new(nodes)
}

#[test]
fn k_constant_example() {
    assert_eq!(k_constant(4, 8.0), 85.0);
}

#[test]
fn epsilon_rule() {
    assert_eq!(choose_epsilon(std::f64::consts::E), Some(0.25));
    assert_eq!(choose_epsilon(4.0), Some(0.5));
    assert_eq!(choose_epsilon(1.5), Some(0.25));
    assert_eq!(choose_epsilon(1.0), None);
}

#[test]
fn retention_values() {
    assert_eq!(retention(1), 1.0);
    assert_eq!(retention(2), 0.5);
    assert_eq!(retention(3), 3.0 / 8.0);
}

#[test]
fn constants_satisfy_conditions() {
    let m = rank2();
    let cert = uniform_certificate(&m).unwrap();
    let k = compute_constants(&m, &cert).unwrap();
    assert!(k.all_hold());
    assert_eq!(k.k, k_constant(2, k.r));
    let steps = (k.r / cert.t.max(1.0)).log2();
    assert!((steps - steps.round()).abs() < 1e-12);
    if k.r > cert.t.max(1.0) {
        let half = PipelineConstants::with_r(2, k.c, k.a, k.t, k.epsilon, k.l1, k.r / 2.0);
        assert!(!half.all_hold());
    }
}

#[test]
fn conditions_fail_for_small_r() {
    let checks = check_conditions(3, 0.1, 1.2, 0.1, 1.0, 1.0);
    assert!(checks.iter().any(|c| !c.holds));
}

#[test]
fn straight_geodesic_uses_loops_only() {
    let m = rank2();
    let cert = uniform_certificate(&m).unwrap();
    let k = compute_constants(&m, &cert).unwrap();
    let e12 = 12.0_f64.exp();
    let p = m.group().identity();
    let q = el(&[e12, e12], &[5.0, 5.0]);
    let gamma = PiecewisePath::straight(&p, &q, 64);
    let out = make_hsv(&gamma, &p, &q, &m, &k).unwrap();
    assert!(out.audit.stages.is_empty());
    assert_eq!(out.audit.loops.len(), 2);
    assert!((out.audit.distances[0] - 7.0).abs() < 1e-9);
    assert!(out.length <= out.input_length + k.k + LENGTH_SLACK);
    let best = rho(&p, &q, &m).unwrap();
    assert!(out.length >= best.length - 1e-6, "{} < {}", out.length, best.length);
    assert!(is_hsv(&out.path.base_vertices(), &out.audit.half_spaces).visits_all);
    let as_path = out.path.to_path();
    assert_eq!(as_path.start(), Some(&p));
    assert_eq!(as_path.end(), Some(&q));
}

#[test]
fn already_visiting_input_gets_degenerate_loops() {
    let m = rank2();
    let cert = uniform_certificate(&m).unwrap();
    let k = compute_constants(&m, &cert).unwrap();
    let e4 = 4.0_f64.exp();
    let p = m.group().identity();
    let q = el(&[e4, e4], &[1.0, 1.0]);
    let gamma = polyline_path(&[vec![0.0, 0.0], vec![5.0, 0.0], vec![5.0, 5.0], vec![1.0, 1.0]], &[e4, e4]);
    let out = make_hsv(&gamma, &p, &q, &m, &k).unwrap();
    assert!(out.audit.distances.iter().all(|d| *d == 0.0));
    assert!(out.audit.loops.iter().all(|l| l.length == 0.0));
    assert_eq!(out.audit.surgered, out.audit.host);
    assert!(out.path.jump_cost() <= 2.0 * (-1.0_f64).exp() + 1e-12);
    assert!(out.length <= out.input_length + 2.0);
}

#[test]
fn mismatched_endpoints_are_rejected() {
    let m = rank2();
    let cert = uniform_certificate(&m).unwrap();
    let k = compute_constants(&m, &cert).unwrap();
    let p = m.group().identity();
    let q = el(&[1.0, 1.0], &[1.0, 0.0]);
    let gamma = PiecewisePath::straight(&p, &el(&[1.0, 1.0], &[1.0, 0.5]), 4);
    assert!(matches!(make_hsv(&gamma, &p, &q, &m, &k), Err(PipelineError::BadEndpoints)));
}

#[test]
fn multicurve_mass_closed_form() {
    let m = rank2();
    let h = 3.0;
    let p = m.group().identity();
    let q = el(&[50.0, 0.0], &[0.0, 0.5]);
    // Nil coordinate of factor 0 at node k is 10k; intervals in node index.
    let verts: Vec<Vec<f64>> = (0..6).map(|k| vec![0.0, k as f64 * 0.1]).collect();
    let gamma = polyline_path(&verts, &[50.0, 0.0]);
    let intervals = [(0.0, 1.5), (2.0, 2.25), (3.0, 5.0)];
    let got = multicurve_mass(&gamma, &p, &q, &m, 0, h, &intervals).unwrap();
    let expected: f64 = intervals.iter().map(|(a, b)| 10.0 * (b - a) * (-h).exp()).sum();
    assert!((got - expected).abs() < 1e-12 * expected, "{got} vs {expected}");
}

#[test]
fn first_slice_qualifies_with_full_mass() {
    let m = rank2();
    let e9 = 9.0_f64.exp();
    let p = m.group().identity();
    let q = el(&[e9, 0.0], &[0.0, 4.0]);
    let gamma = polyline_path(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![0.0, 4.0]], &[e9, 0.0]);
    let hs = half_spaces(&p, &q, &m).unwrap();
    let k = PipelineConstants::with_r(2, 1.0, std::f64::consts::E, 1.0, 0.25, 1.0, 1.0);
    let s = slice_curve(&gamma, &p, &q, &hs, &k, 0, &m).unwrap();
    assert_eq!(s.selected, 1);
    assert!((s.distance - 8.0).abs() < 1e-12);
    let first = s.selected_slice();
    assert_eq!(first.intervals, vec![(0.0, 2.0)]);
    assert!((first.mass - 1.0).abs() < 1e-12);
    assert_eq!(first.required, 4.0_f64.recip());
}

#[test]
fn later_slice_selected_when_first_is_light() {
    let m = rank2();
    let p = m.group().identity();
    let e9 = 9.0_f64.exp();
    // Distance 4 to the half-space at height 9. The part above height 1
    // carries no nil displacement.
    let verts = [vec![0.0, 0.0], vec![-2.0, 0.0], vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 0.0]];
    let nodes = vec![
        el(&[0.0, 0.0], &verts[0]),
        el(&[e9, 0.0], &verts[1]),
        el(&[e9, 0.0], &verts[2]),
        el(&[e9, 0.0], &verts[3]),
        el(&[e9, 0.0], &verts[4]),
    ];
    let gamma = PiecewisePath::new(nodes);
    let q = el(&[e9, 0.0], &[0.0, 0.0]);
    let hs = half_spaces(&p, &q, &m).unwrap();
    let k = PipelineConstants::with_r(2, 1.0, std::f64::consts::E, 1.0, 0.25, 1.0, 1.0);
    let s = slice_curve(&gamma, &p, &q, &hs, &k, 0, &m).unwrap();
    assert!((s.distance - 4.0).abs() < 1e-12);
    assert_eq!(s.slices[0].mass, 0.0);
    assert_eq!(s.selected, 2);
}

#[test]
fn half_space_within_r_is_not_sliced() {
    let m = rank2();
    let p = m.group().identity();
    let q = el(&[2.0_f64.exp(), 0.0], &[1.0, 0.0]);
    let gamma = PiecewisePath::straight(&p, &q, 4);
    let hs = half_spaces(&p, &q, &m).unwrap();
    let k = PipelineConstants::with_r(2, 1.0, std::f64::consts::E, 1.0, 0.25, 1.0, 4.0);
    assert!(matches!(
        slice_curve(&gamma, &p, &q, &hs, &k, 0, &m),
        Err(PipelineError::NotFarFromHalfSpace { .. })
    ));
}

/// Zigzag through the cube `[0, 3]³` with a long perpendicular trace in
/// every coordinate direction.
fn zigzag(segments: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![vec![0.0, 0.0, 0.0]];
    for k in 1..segments {
        if k == segments / 2 {
            out.push(vec![3.0, 3.0, 3.0]);
        } else {
            out.push((0..3).map(|_| rng.random_range(0.0..3.0)).collect());
        }
    }
    out.push(vec![1.0, 1.0, 1.0]);
    out
}

fn family_case() -> (SplitMetric, GroupElement, GroupElement, PiecewisePath, PipelineConstants) {
    let m = rank3();
    let h = 6.5_f64.exp();
    let p = m.group().identity();
    let q = el(&[h, h, h], &[1.0, 1.0, 1.0]);
    let gamma = polyline_path(&zigzag(30_000, 7), &[h, h, h]);
    let k = PipelineConstants::with_r(3, 1.0, std::f64::consts::E, 1.0, 0.5, 1.0, 1.0);
    (m, p, q, gamma, k)
}

#[test]
fn three_surgery_families() {
    let (m, p, q, gamma, k) = family_case();
    assert_eq!(k.k, 12.0);
    assert_eq!(k.n_sum, 2.0);
    let out = make_hsv(&gamma, &p, &q, &m, &k).unwrap();
    let a = &out.audit;
    assert_eq!(a.stages.len(), 3);
    assert!(a.loops.is_empty());
    for st in &a.stages {
        assert!((st.slice.distance - 3.5).abs() < 1e-12);
        assert_eq!(st.slice.selected, 1);
        assert_eq!(st.case, FamilyCase::Tent);
        assert_eq!(st.options.len(), 9);
        assert!(st.option_added_length.iter().all(|x| *x <= 1.0));
        assert!(st.checks.iter().find(|c| c.quantity == "perpendicular arclength").unwrap().holds);
    }
    let last = &a.selections.last().unwrap().selection;
    assert_eq!(last.picks.len(), 3);
    for w in a.picks.windows(2) {
        assert!(!w[0].overlaps(&w[1]));
    }
    for (s, rec) in a.selections.iter().enumerate() {
        assert_eq!(rec.families.len(), s + 1);
        assert_eq!(rec.loop_locations.len(), 2 - s);
    }
    assert!(is_hsv(&out.path.base_vertices(), &a.half_spaces).visits_all);
    assert!(out.length <= out.input_length + 12.0 + LENGTH_SLACK);
    assert!(out.path.jump_cost() <= 3.0 + 1e-9);
}

#[test]
fn replay_is_bit_for_bit() {
    let (m, p, q, gamma, k) = family_case();
    let out = make_hsv(&gamma, &p, &q, &m, &k).unwrap();
    let text = out.audit.to_json();
    let back = AuditTrail::from_json(&text).unwrap();
    assert_eq!(back.to_json(), text);
    let path = replay(&back).unwrap();
    assert_eq!(serde_json::to_string(&path).unwrap(), serde_json::to_string(&out.path).unwrap());

    let mut tampered = back.clone();
    tampered.picks.pop();
    assert!(matches!(replay(&tampered), Err(PipelineError::Replay(_))));
}

#[test]
fn short_perpendicular_trace_fails_certification() {
    let m = rank3();
    let h = 6.5_f64.exp();
    let p = m.group().identity();
    let q = el(&[h, h, h], &[1.0, 1.0, 1.0]);
    let gamma = polyline_path(&zigzag(200, 3), &[h, h, h]);
    let k = PipelineConstants::with_r(3, 1.0, std::f64::consts::E, 1.0, 0.5, 1.0, 1.0);
    match make_hsv(&gamma, &p, &q, &m, &k) {
        Err(PipelineError::CertificationFailure { measured, required, .. }) => assert!(measured < required),
        other => panic!("expected a certification failure, got {other:?}"),
    }
}
