//! Half-spaces, box paths and the box-geodesic distance `ρ`.
//!
//! All elements are in the split frame of the metric (see
//! [`SplitMetric::to_split`]). Thresholds are measured in units of the root:
//! the `i`-th half-space of a pair `(p, q)` is `{ v : αᵢ(v − v_p) ≥ Hᵢ }`.

mod touring;

pub use touring::{tour, HalfPlane, Tour};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{GroupElement, GroupError};
use crate::linalg::is_diagonal;
use crate::metric::SplitMetric;
use crate::path::PiecewisePath;

/// Relative length change at which the touch-point solver stops.
pub const TOUR_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 200_000;
/// Largest number of active half-spaces searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 6;
/// Slack used when checking that a path reaches a half-space.
pub const HSV_TOL: f64 = 1e-9;
const THRESHOLD_SCAN: usize = 4000;
/// How far past the first sub-unit height the scan for a later crossing
/// extends, in units of the slowest contraction rate.
const THRESHOLD_WINDOW: f64 = 40.0;

#[derive(Debug, Error)]
pub enum BoxPathError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("threshold search for factor {0} did not bracket a root")]
    NoThreshold(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub factor: usize,
    /// `None` when the nil displacement in this factor vanishes, i.e. the
    /// half-space is all of the base.
    pub threshold: Option<f64>,
    /// `∇αᵢ` in base coordinates.
    pub normal: Vec<f64>,
    pub magnitude: f64,
    /// False when the coset distance is only an upper bound.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceSet {
    /// Base coordinates of `p`.
    #[serde(with = "crate::serde_vec")]
    pub origin: DVector<f64>,
    pub half_spaces: Vec<HalfSpace>,
}

impl HalfSpaceSet {
    pub fn len(&self) -> usize {
        self.half_spaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.half_spaces.is_empty()
    }

    pub fn threshold(&self, i: usize) -> Option<f64> {
        self.half_spaces[i].threshold
    }

    /// `αᵢ(v − v_p)`.
    pub fn height(&self, i: usize, v: &DVector<f64>) -> f64 {
        let n = &self.half_spaces[i].normal;
        n.iter().zip((v - &self.origin).iter()).map(|(a, b)| a * b).sum()
    }

    pub fn contains(&self, i: usize, v: &DVector<f64>) -> bool {
        match self.threshold(i) {
            None => true,
            Some(h) => self.height(i, v) >= h,
        }
    }

    pub fn finite(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.threshold(i).is_some()).collect()
    }

    pub fn exact(&self) -> bool {
        self.half_spaces.iter().all(|h| h.exact)
    }

    /// Copy with threshold `i` lowered by `by ≥ 0`.
    pub fn relaxed(&self, i: usize, by: f64) -> Self {
        let mut out = self.clone();
        if let Some(h) = out.half_spaces[i].threshold.as_mut() {
            *h -= by.max(0.0);
        }
        out
    }
}

/// `dᵢ(e^{−H Dᵢ} h)`.
fn height_norm(metric: &SplitMetric, i: usize, h: &DVector<f64>, height: f64) -> f64 {
    metric.coset_norm(i, &(metric.group().factor(i).flow(-height) * h))
}

fn bisect(mut above: f64, mut below: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f(above) > 1 ≥ f(below), above < below.
    for _ in 0..200 {
        let mid = 0.5 * (above + below);
        if mid <= above || mid >= below {
            break;
        }
        if f(mid) > 1.0 {
            above = mid;
        } else {
            below = mid;
        }
    }
    below
}

/// Smallest `H` with `dᵢ(e^{−s Dᵢ} h) ≤ 1` for every `s ≥ H`.
pub fn threshold(metric: &SplitMetric, i: usize, h: &DVector<f64>) -> Result<Option<f64>, BoxPathError> {
    if h.iter().all(|x| *x == 0.0) {
        return Ok(None);
    }
    let factor = metric.group().factor(i);
    let d = factor.derivation();
    if factor.dim() == 1 {
        return Ok(Some(metric.coset_norm(i, h).ln() / d[(0, 0)]));
    }
    let f = |s: f64| height_norm(metric, i, h, s);
    let mut lo = 0.0_f64;
    let mut steps = 0;
    while f(lo) <= 1.0 {
        lo = 2.0 * lo - 1.0;
        steps += 1;
        if steps > 60 {
            return Err(BoxPathError::NoThreshold(i));
        }
    }
    let mut hi = 0.0_f64;
    steps = 0;
    while f(hi) > 1.0 {
        hi = 2.0 * hi + 1.0;
        steps += 1;
        if steps > 60 {
            return Err(BoxPathError::NoThreshold(i));
        }
    }
    let monotone = is_diagonal(d) && is_diagonal(metric.factor_gram(i));
    if monotone {
        return Ok(Some(bisect(lo, hi, f)));
    }
    // The norm along the flow need not be monotone; find the last crossing.
    let end = hi + THRESHOLD_WINDOW;
    let step = (end - lo) / THRESHOLD_SCAN as f64;
    let mut last_above = lo;
    for k in 0..=THRESHOLD_SCAN {
        let s = lo + step * k as f64;
        if f(s) > 1.0 {
            last_above = s;
        }
    }
    Ok(Some(bisect(last_above, last_above + step, f)))
}

/// Half-spaces associated to the pair `(p, q)`.
pub fn half_spaces(p: &GroupElement, q: &GroupElement, metric: &SplitMetric) -> Result<HalfSpaceSet, BoxPathError> {
    let group = metric.group();
    group.ensure_supported()?;
    group.check_element(p)?;
    group.check_element(q)?;
    let r = group.relative(p, q);
    let half_spaces = (0..group.n_factors())
        .map(|i| {
            Ok(HalfSpace {
                factor: i,
                threshold: threshold(metric, i, &r.nil[i])?,
                normal: group.root(i).as_slice().to_vec(),
                magnitude: metric.magnitude(i),
                exact: group.factor(i).is_abelian(),
            })
        })
        .collect::<Result<Vec<_>, BoxPathError>>()?;
    Ok(HalfSpaceSet {
        origin: p.base.clone(),
        half_spaces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsvCheck {
    pub visits_all: bool,
    pub violated: Vec<usize>,
}

/// Whether the base polyline meets every half-space. A linear functional
/// attains its maximum over a polyline at a vertex, so vertices suffice.
pub fn is_hsv(polyline: &[DVector<f64>], hs: &HalfSpaceSet) -> HsvCheck {
    let violated: Vec<usize> = hs
        .finite()
        .into_iter()
        .filter(|&i| {
            let h = hs.threshold(i).unwrap_or(f64::NEG_INFINITY);
            let best = polyline.iter().map(|v| hs.height(i, v)).fold(f64::NEG_INFINITY, f64::max);
            best < h - HSV_TOL * h.abs().max(1.0)
        })
        .collect();
    HsvCheck {
        visits_all: violated.is_empty(),
        violated,
    }
}

/// One piece of a box path: a base polyline inside a coset of the split
/// base, or a straight nil jump inside a coset of one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoxSegment {
    Base { nodes: Vec<GroupElement> },
    Jump { factor: usize, from: GroupElement, to: GroupElement, cost: f64 },
}

impl BoxSegment {
    pub fn from(&self) -> &GroupElement {
        match self {
            BoxSegment::Base { nodes } => &nodes[0],
            BoxSegment::Jump { from, .. } => from,
        }
    }

    pub fn to(&self) -> &GroupElement {
        match self {
            BoxSegment::Base { nodes } => &nodes[nodes.len() - 1],
            BoxSegment::Jump { to, .. } => to,
        }
    }

    fn set_to(&mut self, q: GroupElement) {
        match self {
            BoxSegment::Base { nodes } => {
                let last = nodes.len() - 1;
                nodes[last] = q;
            }
            BoxSegment::Jump { to, .. } => *to = q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPath {
    pub start: GroupElement,
    pub end: GroupElement,
    pub segments: Vec<BoxSegment>,
}

impl BoxPath {
    pub fn jump_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, BoxSegment::Jump { .. })).count()
    }

    pub fn base_segment_count(&self) -> usize {
        self.segments.len() - self.jump_count()
    }

    pub fn to_path(&self) -> PiecewisePath {
        let mut nodes = vec![self.start.clone()];
        for s in &self.segments {
            match s {
                BoxSegment::Base { nodes: ns } => nodes.extend(ns[1..].iter().cloned()),
                BoxSegment::Jump { to, .. } => nodes.push(to.clone()),
            }
        }
        PiecewisePath::new(nodes)
    }

    pub fn base_vertices(&self) -> Vec<DVector<f64>> {
        self.to_path().base_polyline()
    }

    pub fn base_length(&self, metric: &SplitMetric) -> f64 {
        self.segments
            .iter()
            .map(|s| match s {
                BoxSegment::Base { nodes } => nodes.windows(2).map(|w| metric.base_norm(&(&w[1].base - &w[0].base))).sum(),
                BoxSegment::Jump { .. } => 0.0,
            })
            .fold(0.0, |a, b| a + b)
    }

    pub fn jump_cost(&self) -> f64 {
        self.segments
            .iter()
            .filter_map(|s| match s {
                BoxSegment::Jump { cost, .. } => Some(*cost),
                BoxSegment::Base { .. } => None,
            })
            .fold(0.0, |a, b| a + b)
    }

    pub fn length(&self, metric: &SplitMetric) -> f64 {
        self.base_length(metric) + self.jump_cost()
    }
}

/// Lift a base polyline, given relative to `p` and running from `0` to
/// `v_q − v_p`, to a box path from `p` to `q`. The jump in factor `i`
/// happens at the first vertex where `αᵢ` is largest.
pub fn box_path_from_polyline(p: &GroupElement, q: &GroupElement, metric: &SplitMetric, poly: &[DVector<f64>]) -> BoxPath {
    let group = metric.group();
    let r = group.relative(p, q);
    let mut jumps_at: Vec<Vec<usize>> = vec![Vec::new(); poly.len()];
    for i in 0..group.n_factors() {
        if r.nil[i].iter().all(|x| *x == 0.0) {
            continue;
        }
        let mut best = 0;
        for (k, x) in poly.iter().enumerate() {
            if group.alpha(i, x) > group.alpha(i, &poly[best]) {
                best = k;
            }
        }
        jumps_at[best].push(i);
    }

    let mut rel = GroupElement::new(
        group.factors().iter().map(|f| DVector::zeros(f.dim())).collect(),
        DVector::zeros(group.rank()),
    );
    let mut segments = Vec::new();
    let mut run: Vec<GroupElement> = vec![p.clone()];
    for (k, x) in poly.iter().enumerate() {
        if !jumps_at[k].is_empty() {
            if run.len() > 1 {
                segments.push(BoxSegment::Base { nodes: std::mem::take(&mut run) });
            }
            for &i in &jumps_at[k] {
                let from = group.mul(p, &rel);
                let cost = height_norm(metric, i, &r.nil[i], group.alpha(i, x));
                rel.nil[i] = r.nil[i].clone();
                let to = group.mul(p, &rel);
                segments.push(BoxSegment::Jump { factor: i, from, to, cost });
            }
            run = vec![group.mul(p, &rel)];
        }
        if let Some(next) = poly.get(k + 1) {
            if next != x {
                rel.base = next.clone();
                run.push(group.mul(p, &rel));
            }
        }
    }
    if run.len() > 1 {
        segments.push(BoxSegment::Base { nodes: run });
    }
    if let Some(last) = segments.last_mut() {
        last.set_to(q.clone());
    }
    BoxPath {
        start: p.clone(),
        end: q.clone(),
        segments,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RhoResult {
    pub length: f64,
    pub base_length: f64,
    pub jump_cost: f64,
    /// `‖v_q − v_p‖` in the base metric.
    pub lower_bound: f64,
    /// Factors whose half-spaces get a touch point, in visiting order.
    pub order: Vec<usize>,
    pub orderings_tried: usize,
    pub exhaustive: bool,
    pub exact: bool,
    pub half_spaces: HalfSpaceSet,
    pub path: BoxPath,
}

/// Touch points for the given half-spaces in orthonormal base coordinates
/// relative to `p`. Returns the visiting order and the relative base
/// polyline.
fn best_tour(
    metric: &SplitMetric,
    hs: &HalfSpaceSet,
    target: &DVector<f64>,
) -> (Vec<usize>, Vec<DVector<f64>>, usize, bool) {
    let start = DVector::zeros(target.len());
    let end = metric.to_orthonormal_base(target);
    let plane = |i: usize| HalfPlane {
        normal: metric.orthonormal_normal(i),
        offset: hs.threshold(i).unwrap_or(f64::NEG_INFINITY),
    };
    let active: Vec<usize> = hs
        .finite()
        .into_iter()
        .filter(|&i| {
            let p = plane(i);
            !p.contains(&start) && !p.contains(&end)
        })
        .collect();
    let finish = |order: Vec<usize>, tour: Tour| {
        let mut poly = vec![DVector::zeros(target.len())];
        poly.extend(tour.points.iter().map(|y| metric.from_orthonormal_base(y)));
        poly.push(target.clone());
        (order, poly)
    };
    if active.len() <= EXHAUSTIVE_LIMIT {
        let orders = permutations(&active);
        let tried = orders.len();
        let tours: Vec<Tour> = orders
            .par_iter()
            .map(|order| {
                let planes: Vec<HalfPlane> = order.iter().map(|&i| plane(i)).collect();
                tour(&start, &end, &planes, TOUR_TOL, MAX_SWEEPS)
            })
            .collect();
        let mut best = 0;
        for (k, t) in tours.iter().enumerate() {
            if t.length < tours[best].length {
                best = k;
            }
        }
        let tour = tours.into_iter().nth(best).expect("at least one ordering");
        let (order, poly) = finish(orders[best].clone(), tour);
        (order, poly, tried, true)
    } else {
        let mut remaining = active;
        let mut order = Vec::new();
        let mut here = start.clone();
        while !remaining.is_empty() {
            let (k, _) = remaining
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let p = plane(i);
                    (k, (-p.value(&here)).max(0.0) / p.normal.norm())
                })
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            let i = remaining.remove(k);
            here = plane(i).project(&here);
            order.push(i);
        }
        let planes: Vec<HalfPlane> = order.iter().map(|&i| plane(i)).collect();
        let t = tour(&start, &end, &planes, TOUR_TOL, MAX_SWEEPS);
        let (order, poly) = finish(order, t);
        (order, poly, 1, false)
    }
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for k in 0..items.len() {
        let mut rest = items.to_vec();
        let first = rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

/// Length of the shortest base polyline from `p` to `q` meeting every
/// half-space of `hs`.
pub fn tour_length(p: &GroupElement, q: &GroupElement, metric: &SplitMetric, hs: &HalfSpaceSet) -> f64 {
    let target = &q.base - &p.base;
    let (_, poly, _, _) = best_tour(metric, hs, &target);
    poly.windows(2).map(|w| metric.base_norm(&(&w[1] - &w[0]))).sum()
}

/// Box geodesic from `p` to `q`.
pub fn rho(p: &GroupElement, q: &GroupElement, metric: &SplitMetric) -> Result<RhoResult, BoxPathError> {
    let hs = half_spaces(p, q, metric)?;
    let group = metric.group();
    let r = group.relative(p, q);
    let target = r.base.clone();
    let (order, poly, orderings_tried, exhaustive) = best_tour(metric, &hs, &target);

    let path = box_path_from_polyline(p, q, metric, &poly);
    let base_length = path.base_length(metric);
    let jump_cost = path.jump_cost();
    Ok(RhoResult {
        length: base_length + jump_cost,
        base_length,
        jump_cost,
        lower_bound: metric.base_norm(&target),
        order,
        orderings_tried,
        exhaustive,
        exact: hs.exact(),
        half_spaces: hs,
        path,
    })
}

/// `ρ(p, q)` and `ρ(q, p)`.
pub fn rho_both(p: &GroupElement, q: &GroupElement, metric: &SplitMetric) -> Result<(RhoResult, RhoResult), BoxPathError> {
    Ok((rho(p, q, metric)?, rho(q, p, metric)?))
}

#[cfg(test)]
mod tests;
