//! Turn a path between two points into a half-space visiting box path whose
//! length exceeds the input by at most `K = (n+1)(2r+1)`.
//!
//! Every step is gated on measured quantities: when an inequality the
//! construction relies on fails, the pipeline stops with
//! [`PipelineError::CertificationFailure`] instead of emitting a path.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxpath::{box_path_from_polyline, half_spaces, is_hsv, BoxPath, BoxPathError, HalfSpaceSet, HSV_TOL};
use crate::distortion::DistortionCertificate;
use crate::group::{GroupElement, GroupError, GroupSpec, SolTypeGroup};
use crate::linalg::double_factorial;
use crate::metric::{MetricError, MetricSpec, SplitMetric};
use crate::path::{lerp, PiecewisePath};
use crate::surgery::{
    apply_surgeries, build_surgery_family, perpendicular_on, reflect_below, select_simultaneous_by, subtract_open,
    LoopSurgery, PathSurgery, PiecewiseCurve, Selection, SurgeryError, SurgeryFamily,
};

/// Condition (3) is checked term by term up to this `j`.
pub const J_CUTOFF: usize = 64;
/// Numerical slack on the final length bound.
pub const LENGTH_SLACK: f64 = 1e-6;
const EPSILON_CANDIDATES: [f64; 9] = [0.5, 0.25, 0.1, 0.05, 0.01, 0.005, 0.001, 1e-4, 1e-6];
const MAX_DOUBLINGS: u32 = 80;
const NIL_QUADRATURE: usize = 32;
const ENDPOINT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no valid constants: {0}")]
    NoValidConstants(String),
    #[error("factor {factor}: no slice carries enough nil mass (best {best:.6e})")]
    NoQualifyingSlice { factor: usize, best: f64 },
    #[error("factor {factor} misses its half-space by {distance:.6}, not more than r = {r:.6}")]
    NotFarFromHalfSpace { factor: usize, distance: f64, r: f64 },
    #[error("{stage}: {inequality} fails (measured {measured:.6e}, required {required:.6e})")]
    CertificationFailure {
        stage: String,
        inequality: String,
        measured: f64,
        required: f64,
    },
    #[error("path endpoints do not match the given pair")]
    BadEndpoints,
    #[error("replay mismatch: {0}")]
    Replay(String),
    #[error(transparent)]
    Surgery(#[from] SurgeryError),
    #[error(transparent)]
    BoxPath(#[from] BoxPathError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    /// Logarithms of both sides at `r′ = r`.
    pub log_lhs: f64,
    pub log_rhs: f64,
    /// Whether the inequality persists for every `r′ ≥ r`.
    pub monotone: bool,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConstants {
    pub n: usize,
    pub c: f64,
    pub a: f64,
    pub t: f64,
    pub epsilon: f64,
    /// `N = Σ (1−ε)ʲ = 1/ε`.
    pub n_sum: f64,
    pub l1: f64,
    pub r: f64,
    pub k: f64,
    /// `(2n−3)!!/(2n−2)!!`.
    pub retention: f64,
    pub conditions: Vec<ConditionCheck>,
}

impl PipelineConstants {
    /// Constants with a given `r`, bypassing the search. The conditions are
    /// still evaluated and recorded.
    pub fn with_r(n: usize, c: f64, a: f64, t: f64, epsilon: f64, l1: f64, r: f64) -> Self {
        let conditions = check_conditions(n, c, a, epsilon, l1, r);
        Self {
            n,
            c,
            a,
            t,
            epsilon,
            n_sum: 1.0 / epsilon,
            l1,
            r,
            k: k_constant(n, r),
            retention: retention(n),
            conditions,
        }
    }

    pub fn all_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }
}

pub fn k_constant(n: usize, r: f64) -> f64 {
    (n as f64 + 1.0) * (2.0 * r + 1.0)
}

fn retention(n: usize) -> f64 {
    let n = n as i64;
    double_factorial(2 * n - 3) / double_factorial(2 * n - 2)
}

/// Largest candidate `ε` with `a(1−ε) ≥ 2`, else the largest with
/// `a(1−ε) > 1`.
pub fn choose_epsilon(a: f64) -> Option<f64> {
    EPSILON_CANDIDATES
        .iter()
        .copied()
        .find(|e| a * (1.0 - e) >= 2.0)
        .or_else(|| EPSILON_CANDIDATES.iter().copied().find(|e| a * (1.0 - e) > 1.0))
}

/// Evaluate conditions (1)–(3) at `r′ = r` in log form.
pub fn check_conditions(n: usize, c: f64, a: f64, epsilon: f64, l1: f64, r: f64) -> Vec<ConditionCheck> {
    let nf = n as f64;
    let big_n = 1.0 / epsilon;
    let rho = retention(n);
    let la = a.ln();
    let c_prime = nf * (2.0 * r + 1.0);

    let lhs1 = c.ln() + r * la - big_n.ln() + rho.ln();
    let rhs1 = (2.0_f64.sqrt() * c_prime).ln();
    // d/dr of the log gap is ln a − 2/(2r+1).
    let mono1 = la >= 2.0 / (2.0 * r + 1.0);

    let lhs2 = 2.0 * c.ln() + 2.0 * r * la;
    let poly = 32.0 * nf * nf * r * r * (nf * nf + 1.0) + c_prime + (nf + 1.0) * r;
    let rhs2 = -2.0 * rho.ln() + 4.0_f64.ln() + c_prime.ln() + 2.0 * big_n.ln() + 2.0 * l1.ln() + poly.ln();
    // The right side has log-derivative at most 2/(2r+1) + 2/r ≤ 3/r.
    let mono2 = 2.0 * la >= 3.0 / r;

    let lb = (a * (1.0 - epsilon)).ln();
    let mut worst = f64::INFINITY;
    let mut lhs3 = 0.0;
    let mut rhs3 = 0.0;
    for j in 1..=J_CUTOFF {
        let l = 2.0 * (j as f64 - 1.0) * r * lb;
        let rr = 2.0 * (j as f64).ln();
        if l - rr < worst {
            worst = l - rr;
            lhs3 = l;
            rhs3 = rr;
        }
    }
    // Beyond the cutoff the gap grows once j > 1/(r ln b).
    let mono3 = lb > 0.0 && (J_CUTOFF as f64) * r * lb > 1.0;

    vec![
        ConditionCheck {
            name: "Ca^r/N·(2n−3)!!/(2n−2)!! ≥ √2·n(2r+1)".into(),
            log_lhs: lhs1,
            log_rhs: rhs1,
            monotone: mono1,
            holds: lhs1 >= rhs1 && mono1,
        },
        ConditionCheck {
            name: "C²a^{2r} ≥ ((2n−2)!!/(2n−3)!!)²·4C′N²L₁²(32n²r²(n²+1)+C′+(n+1)r)".into(),
            log_lhs: lhs2,
            log_rhs: rhs2,
            monotone: mono2,
            holds: lhs2 >= rhs2 && mono2,
        },
        ConditionCheck {
            name: "(a(1−ε))^{2(j−1)r} ≥ j² for j ≥ 1".into(),
            log_lhs: lhs3,
            log_rhs: rhs3,
            monotone: mono3,
            holds: worst >= 0.0 && mono3,
        },
    ]
}

/// Smallest `r = max(1, T)·2ᵏ` satisfying conditions (1)–(3).
pub fn compute_constants(metric: &SplitMetric, cert: &DistortionCertificate) -> Result<PipelineConstants, PipelineError> {
    let n = metric.group().n_factors();
    let (c, a, t) = (cert.c, cert.a, cert.t);
    if !(a > 1.0) {
        return Err(PipelineError::NoValidConstants(format!("a = {a} ≤ 1")));
    }
    if !(c > 0.0) {
        return Err(PipelineError::NoValidConstants(format!("C = {c} ≤ 0")));
    }
    let epsilon = choose_epsilon(a).ok_or_else(|| PipelineError::NoValidConstants(format!("no ε with a(1−ε) > 1 for a = {a}")))?;
    let l1 = metric.l1().max(f64::MIN_POSITIVE);
    let mut r = t.max(1.0);
    for _ in 0..MAX_DOUBLINGS {
        let k = PipelineConstants::with_r(n, c, a, t, epsilon, l1, r);
        if k.all_hold() {
            return Ok(k);
        }
        r *= 2.0;
    }
    Err(PipelineError::NoValidConstants(format!("no r up to {r:.3e}")))
}

/// A path sampled as nodes relative to `p`, with its base projection in
/// orthonormal base coordinates parameterized by node index.
#[derive(Debug, Clone)]
struct Host {
    rel: Vec<GroupElement>,
    curve: PiecewiseCurve,
}

impl Host {
    fn new(gamma: &PiecewisePath, p: &GroupElement, q: &GroupElement, metric: &SplitMetric) -> Result<Self, PipelineError> {
        let group = metric.group();
        let n = gamma.len();
        if n < 2 {
            return Err(PipelineError::BadEndpoints);
        }
        let first = &gamma.nodes[0];
        let last = &gamma.nodes[n - 1];
        let scale = |g: &GroupElement| 1.0 + g.base.amax() + g.nil.iter().map(|h| h.amax()).fold(0.0, f64::max);
        if first.max_abs_diff(p) > ENDPOINT_TOL * scale(p) || last.max_abs_diff(q) > ENDPOINT_TOL * scale(q) {
            return Err(PipelineError::BadEndpoints);
        }
        let pinv = group.inverse(p);
        let mut rel: Vec<GroupElement> = gamma.nodes.iter().map(|g| group.mul(&pinv, g)).collect();
        rel[0] = group.identity();
        rel[n - 1] = group.relative(p, q);
        let values = rel.iter().map(|g| metric.to_orthonormal_base(&g.base)).collect();
        let curve = PiecewiseCurve::from_points(values)?;
        Ok(Self { rel, curve })
    }

    fn rel_at(&self, t: f64) -> GroupElement {
        let n = self.rel.len();
        if t <= 0.0 {
            return self.rel[0].clone();
        }
        if t >= (n - 1) as f64 {
            return self.rel[n - 1].clone();
        }
        let k = t.floor() as usize;
        let s = t - k as f64;
        if s == 0.0 {
            return self.rel[k].clone();
        }
        lerp(&self.rel[k], &self.rel[k + 1], s)
    }

    /// Split `[a, b]` at the integer node parameters.
    fn pieces(a: f64, b: f64) -> Vec<(f64, f64)> {
        let mut cuts = vec![a];
        let mut k = a.floor() + 1.0;
        while k < b {
            cuts.push(k);
            k += 1.0;
        }
        cuts.push(b);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Unit normal of `αᵢ` in orthonormal base coordinates.
fn unit_normal(metric: &SplitMetric, i: usize) -> DVector<f64> {
    metric.orthonormal_normal(i) / metric.magnitude(i)
}

/// `d_{i,s}` between the nil coordinates at the ends of each interval,
/// summed.
fn mass(host: &Host, metric: &SplitMetric, i: usize, height: f64, intervals: &[(f64, f64)]) -> f64 {
    let f = metric.group().factor(i);
    let flow = f.flow(-height);
    intervals
        .iter()
        .map(|&(a, b)| {
            let x = &host.rel_at(a).nil[i];
            let y = &host.rel_at(b).nil[i];
            metric.coset_norm(i, &(&flow * f.bch(&-x, y)))
        })
        .sum()
}

/// `∫ ‖dhᵢ/dt‖` over the intervals, by the midpoint rule on each node piece.
fn nil_length(host: &Host, metric: &SplitMetric, i: usize, intervals: &[(f64, f64)]) -> f64 {
    let group = metric.group();
    let f = group.factor(i);
    let mut total = 0.0;
    for &(a, b) in intervals {
        for (s, t) in Host::pieces(a, b) {
            let r = group.relative(&host.rel_at(s), &host.rel_at(t));
            let rate = group.alpha(i, &r.base);
            let h = 1.0 / NIL_QUADRATURE as f64;
            let piece: f64 = (0..NIL_QUADRATURE)
                .map(|k| metric.coset_norm(i, &(f.flow(-(k as f64 + 0.5) * h * rate) * &r.nil[i])))
                .sum();
            total += piece * h;
        }
    }
    total
}

fn intersect(intervals: &[(f64, f64)], window: (f64, f64)) -> Vec<(f64, f64)> {
    intervals
        .iter()
        .filter_map(|&(a, b)| {
            let (lo, hi) = (a.max(window.0), b.min(window.1));
            (hi > lo).then_some((lo, hi))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub j: usize,
    /// Band of `∇αᵢ`-heights in base distance units.
    pub lower: f64,
    pub upper: f64,
    pub intervals: Vec<(f64, f64)>,
    pub mass: f64,
    pub required: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDecomposition {
    pub factor: usize,
    /// Distance from the path's base projection to the half-space.
    pub distance: f64,
    /// Half-space height in base distance units.
    pub height: f64,
    pub selected: usize,
    pub slices: Vec<SliceRecord>,
}

impl SliceDecomposition {
    pub fn selected_slice(&self) -> &SliceRecord {
        &self.slices[self.selected - 1]
    }
}

fn slice_host(
    host: &Host,
    hs: &HalfSpaceSet,
    constants: &PipelineConstants,
    i: usize,
    metric: &SplitMetric,
) -> Result<SliceDecomposition, PipelineError> {
    let u = unit_normal(metric, i);
    let threshold = hs.threshold(i).unwrap_or(f64::NEG_INFINITY);
    let height = threshold / metric.magnitude(i);
    let top = host.curve.max_height(&u).1;
    let bottom = host.curve.min_height(&u);
    let distance = height - top;
    if !(distance > constants.r) {
        return Err(PipelineError::NotFarFromHalfSpace {
            factor: i,
            distance,
            r: constants.r,
        });
    }
    let mut slices = Vec::new();
    let mut selected = None;
    let mut best = 0.0_f64;
    let mut j = 1;
    loop {
        let upper = height - j as f64 * distance;
        let lower = height - (j + 1) as f64 * distance;
        if upper < bottom {
            break;
        }
        let intervals = host.curve.band_intervals(&u, lower, upper);
        let m = mass(host, metric, i, threshold, &intervals);
        let required = (1.0 - constants.epsilon).powf((j as f64 - 1.0) * distance) / constants.n_sum;
        best = best.max(m);
        slices.push(SliceRecord {
            j,
            lower,
            upper,
            intervals,
            mass: m,
            required,
        });
        if m >= required {
            selected = Some(j);
            break;
        }
        j += 1;
    }
    let selected = selected.ok_or(PipelineError::NoQualifyingSlice { factor: i, best })?;
    Ok(SliceDecomposition {
        factor: i,
        distance,
        height,
        selected,
        slices,
    })
}

/// Slices of `gamma` below half-space `i` and the first one carrying the
/// required share of nil mass.
pub fn slice_curve(
    gamma: &PiecewisePath,
    p: &GroupElement,
    q: &GroupElement,
    hs: &HalfSpaceSet,
    constants: &PipelineConstants,
    i: usize,
    metric: &SplitMetric,
) -> Result<SliceDecomposition, PipelineError> {
    let host = Host::new(gamma, p, q, metric)?;
    slice_host(&host, hs, constants, i, metric)
}

/// `Σ d_{i,s}` over maximal subcurves on the given parameter intervals
/// (node index parameterization).
pub fn multicurve_mass(
    gamma: &PiecewisePath,
    p: &GroupElement,
    q: &GroupElement,
    metric: &SplitMetric,
    i: usize,
    height: f64,
    intervals: &[(f64, f64)],
) -> Result<f64, PipelineError> {
    let host = Host::new(gamma, p, q, metric)?;
    Ok(mass(&host, metric, i, height, intervals))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyCase {
    Tent,
    Reflection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub quantity: String,
    pub measured: f64,
    pub required: f64,
    pub holds: bool,
}

impl Measurement {
    fn new(quantity: &str, measured: f64, required: f64) -> Self {
        Self {
            quantity: quantity.into(),
            measured,
            required,
            holds: measured >= required,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorStage {
    pub factor: usize,
    pub slice: SliceDecomposition,
    /// The selected slice minus earlier picks.
    pub remaining: Vec<(f64, f64)>,
    pub checks: Vec<Measurement>,
    pub case: FamilyCase,
    pub options: Vec<(f64, f64)>,
    pub option_added_length: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    /// Factor of each family, in selection order.
    pub families: Vec<usize>,
    pub loop_locations: Vec<f64>,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTrail {
    pub group: GroupSpec,
    pub metric: MetricSpec,
    pub p: GroupElement,
    pub q: GroupElement,
    pub input: PiecewisePath,
    pub constants: PipelineConstants,
    pub half_spaces: HalfSpaceSet,
    /// Distance of the input from each half-space.
    pub distances: Vec<f64>,
    /// Factors in decreasing distance.
    pub order: Vec<usize>,
    pub loop_factors: Vec<usize>,
    pub loops: Vec<LoopSurgery>,
    pub stages: Vec<FactorStage>,
    pub selections: Vec<SelectionRecord>,
    pub picks: Vec<PathSurgery>,
    pub host: PiecewiseCurve,
    pub surgered: PiecewiseCurve,
    pub output: BoxPath,
    pub input_length: f64,
    pub output_length: f64,
    pub bound: f64,
    /// True when some loop distance exceeds `r`.
    pub exceeds_r: bool,
}

impl AuditTrail {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("audit trail serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone)]
pub struct HsvResult {
    pub path: BoxPath,
    pub length: f64,
    pub input_length: f64,
    pub bound: f64,
    pub audit: AuditTrail,
}

fn failure(stage: impl Into<String>, inequality: &str, measured: f64, required: f64) -> PipelineError {
    PipelineError::CertificationFailure {
        stage: stage.into(),
        inequality: inequality.into(),
        measured,
        required,
    }
}

/// Cut `intervals` into consecutive pieces each carrying perpendicular
/// arclength `target` inside the intervals. Pieces run from a point of the
/// multicurve to a later point of it.
fn reflection_pieces(curve: &PiecewiseCurve, u: &DVector<f64>, intervals: &[(f64, f64)], target: f64, count: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    let mut acc = 0.0;
    for &(a0, b) in intervals {
        let mut a = a0;
        loop {
            if start.is_none() {
                start = Some(a);
            }
            let here = curve.perpendicular_between(u, a, b);
            if acc + here < target {
                acc += here;
                break;
            }
            let Some(end) = curve.time_at_perpendicular(u, a, target - acc) else {
                break;
            };
            let end = end.min(b);
            out.push((start.unwrap_or(a), end));
            if out.len() == count {
                return out;
            }
            start = Some(end);
            acc = 0.0;
            if end >= b {
                break;
            }
            a = end;
        }
    }
    out
}

/// The proof construction: loops for half-spaces within `r`, surgery
/// families for the others, conflict-free selection, then the box path.
pub fn make_hsv(
    gamma: &PiecewisePath,
    p: &GroupElement,
    q: &GroupElement,
    metric: &SplitMetric,
    constants: &PipelineConstants,
) -> Result<HsvResult, PipelineError> {
    let group = metric.group();
    let n = group.n_factors();
    let hs = half_spaces(p, q, metric)?;
    let host = Host::new(gamma, p, q, metric)?;

    let mut distances = vec![0.0; n];
    let mut peaks = vec![0.0; n];
    for i in hs.finite() {
        let u = unit_normal(metric, i);
        let (t, top) = host.curve.max_height(&u);
        distances[i] = (hs.threshold(i).unwrap_or(0.0) / metric.magnitude(i) - top).max(0.0);
        peaks[i] = t;
    }
    let mut order: Vec<usize> = hs.finite();
    order.sort_by(|&x, &y| distances[y].total_cmp(&distances[x]));
    let far: Vec<usize> = order.iter().copied().filter(|&i| distances[i] > constants.r).collect();
    let near: Vec<usize> = order.iter().copied().filter(|&i| distances[i] <= constants.r).collect();

    let slices = far
        .iter()
        .map(|&i| slice_host(&host, &hs, constants, i, metric))
        .collect::<Result<Vec<_>, _>>()?;

    let nf = n as f64;
    let mut families: Vec<SurgeryFamily> = Vec::new();
    let mut stages = Vec::new();
    let mut selections: Vec<SelectionRecord> = Vec::new();
    let mut picked: Vec<(f64, f64)> = Vec::new();
    for (s, &i) in far.iter().enumerate() {
        let u = unit_normal(metric, i);
        let slice = &slices[s];
        let j = slice.selected;
        let ri = slice.distance;
        let stage = format!("factor {i}");
        let remaining = subtract_open(&slice.selected_slice().intervals, &picked);

        let mut checks = Vec::new();
        let m = mass(&host, metric, i, hs.threshold(i).unwrap_or(0.0), &remaining);
        let m_req = slice.selected_slice().required * constants.retention;
        checks.push(Measurement::new("remaining nil mass", m, m_req));
        let nl = nil_length(&host, metric, i, &remaining);
        let b = constants.a * (1.0 - constants.epsilon);
        let nl_req = constants.c * constants.a.powf(ri) * b.powf((j as f64 - 1.0) * ri) / constants.n_sum * constants.retention;
        checks.push(Measurement::new("nil length", nl, nl_req));
        let perp = perpendicular_on(&host.curve, &u, &remaining);
        let r_prime = (j as f64 + 1.0) * ri;
        let perp_req = (nf * nf + 1.0) * 8.0 * nf * nf * r_prime * r_prime;
        checks.push(Measurement::new("perpendicular arclength", perp, perp_req));
        if perp < perp_req {
            return Err(failure(stage, "perpendicular arclength ≥ (n²+1)·8n²r′²", perp, perp_req));
        }

        let piece = 8.0 * nf * nf * r_prime * r_prime;
        let h = slice.height;
        let tent_window = host
            .curve
            .band_intervals(&u, h - 2.0 * r_prime, f64::INFINITY)
            .into_iter()
            .find(|&(a, b)| host.curve.perpendicular_between(&u, a, b) >= piece);
        let (case, family) = match tent_window {
            Some(window) => (
                FamilyCase::Tent,
                build_surgery_family(&host.curve, &u, window, 8.0 * r_prime * r_prime, h - 2.0 * r_prime, n)?,
            ),
            None => {
                let pieces = reflection_pieces(&host.curve, &u, &remaining, piece, n * n);
                if pieces.len() < n * n {
                    return Err(failure(stage, "reflection pieces ≥ n²", pieces.len() as f64, (n * n) as f64));
                }
                let options = pieces
                    .iter()
                    .map(|&(a, b)| {
                        let original = host.curve.restrict(a, b)?;
                        let mut replacement = reflect_below(&original, &u, h - r_prime);
                        let last = replacement.values.len() - 1;
                        replacement.values[0] = original.values[0].clone();
                        replacement.values[last] = original.values[original.len() - 1].clone();
                        Ok(PathSurgery {
                            start: a,
                            end: b,
                            replacement,
                        })
                    })
                    .collect::<Result<Vec<_>, SurgeryError>>()?;
                (FamilyCase::Reflection, SurgeryFamily::new(options)?)
            }
        };
        let mut added = Vec::new();
        for o in &family.options {
            let top = o.replacement.max_height(&u).1;
            if top < h - HSV_TOL * h.abs().max(1.0) {
                return Err(failure(stage, "option reaches the half-space", top, h));
            }
            let extra = o.added_length(&host.curve);
            if extra > 1.0 + 1e-9 {
                return Err(failure(stage, "option lengthens the curve by at most 1", -extra, -1.0));
            }
            added.push(extra);
        }
        stages.push(FactorStage {
            factor: i,
            slice: slice.clone(),
            remaining,
            checks,
            case,
            options: family.options.iter().map(|o| (o.start, o.end)).collect(),
            option_added_length: added,
        });
        families.push(family);

        // Loops stand in for every half-space without a family yet.
        let loop_locations: Vec<f64> = near.iter().chain(&far[s + 1..]).map(|&k| peaks[k]).collect();
        let next = slices.get(s + 1).map(|sl| (sl.factor, sl.selected_slice().intervals.clone(), hs.threshold(sl.factor).unwrap_or(0.0)));
        let cost = |f: usize, o: usize| match &next {
            Some((k, iv, t)) => {
                let opt = &families[f].options[o];
                mass(&host, metric, *k, *t, &intersect(iv, (opt.start, opt.end)))
            }
            None => 0.0,
        };
        let selection = select_simultaneous_by(&loop_locations, &families, n, cost)?;
        picked = selection
            .picks
            .iter()
            .enumerate()
            .map(|(f, &o)| (families[f].options[o].start, families[f].options[o].end))
            .collect();
        selections.push(SelectionRecord {
            families: far[..=s].to_vec(),
            loop_locations,
            selection,
        });
    }

    let picks: Vec<PathSurgery> = match selections.last() {
        Some(rec) => rec.selection.picks.iter().enumerate().map(|(f, &o)| families[f].options[o].clone()).collect(),
        None => Vec::new(),
    };
    let loops = near
        .iter()
        .map(|&i| LoopSurgery::out_and_back(&host.curve, peaks[i], &unit_normal(metric, i), distances[i]))
        .collect::<Result<Vec<_>, _>>()?;

    let input_length = metric.path_length(gamma)?.value;
    let exceeds_r = near.iter().any(|&i| distances[i] > constants.r);
    let mut audit = AuditTrail {
        group: metric.standard_group().to_spec(),
        metric: MetricSpec::from_matrix(metric.gram()),
        p: p.clone(),
        q: q.clone(),
        input: gamma.clone(),
        constants: constants.clone(),
        half_spaces: hs.clone(),
        distances,
        order,
        loop_factors: near,
        loops,
        stages,
        selections,
        picks,
        host: host.curve.clone(),
        surgered: host.curve.clone(),
        output: BoxPath {
            start: p.clone(),
            end: q.clone(),
            segments: Vec::new(),
        },
        input_length,
        output_length: 0.0,
        bound: input_length + constants.k + LENGTH_SLACK,
        exceeds_r,
    };
    let (surgered, path) = assemble(&host, &audit, metric)?;

    let poly: Vec<DVector<f64>> = path.base_vertices();
    let check = is_hsv(&poly, &hs);
    if !check.visits_all {
        return Err(failure("final path", "visits every half-space", check.violated.len() as f64, 0.0));
    }
    let length = path.length(metric);
    if length > audit.bound {
        return Err(failure("final path", "length ≤ input + K", -length, -audit.bound));
    }
    audit.surgered = surgered;
    audit.output = path.clone();
    audit.output_length = length;
    Ok(HsvResult {
        path,
        length,
        input_length,
        bound: audit.bound,
        audit,
    })
}

/// Apply the recorded surgeries to the host and lift the result.
fn assemble(host: &Host, audit: &AuditTrail, metric: &SplitMetric) -> Result<(PiecewiseCurve, BoxPath), PipelineError> {
    let surgered = apply_surgeries(&host.curve, &audit.loops, &audit.picks)?;
    let group = metric.group();
    let target = group.relative(&audit.p, &audit.q).base;
    let mut poly: Vec<DVector<f64>> = surgered.values.iter().map(|y| metric.from_orthonormal_base(y)).collect();
    let last = poly.len() - 1;
    poly[0] = DVector::zeros(group.rank());
    poly[last] = target;
    let path = box_path_from_polyline(&audit.p, &audit.q, metric, &poly);
    Ok((surgered, path))
}

/// Rebuild the output from the recorded input and surgeries and compare it
/// with the recorded output.
pub fn replay(audit: &AuditTrail) -> Result<BoxPath, PipelineError> {
    let group = SolTypeGroup::from_spec(&audit.group)?;
    let metric = SplitMetric::from_spec(&group, &audit.metric)?;
    let host = Host::new(&audit.input, &audit.p, &audit.q, &metric)?;
    if host.curve != audit.host {
        return Err(PipelineError::Replay("host curve differs".into()));
    }
    let (surgered, path) = assemble(&host, audit, &metric)?;
    if surgered != audit.surgered {
        return Err(PipelineError::Replay("surgered curve differs".into()));
    }
    if serde_json::to_string(&path)? != serde_json::to_string(&audit.output)? {
        return Err(PipelineError::Replay("output path differs".into()));
    }
    Ok(path)
}

#[cfg(test)]
mod tests;
