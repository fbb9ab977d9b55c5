//! Curve surgery on polylines in Euclidean space.
//!
//! Curves are piecewise linear in their parameter. A path surgery replaces
//! the curve on an open parameter interval; a loop surgery inserts a closed
//! excursion at a parameter and shifts the rest of the curve.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for endpoint agreement between a host and its surgeries.
pub const AGREEMENT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurgeryError {
    #[error("curve needs at least one sample")]
    EmptyCurve,
    #[error("parameters must be strictly increasing (index {0})")]
    NonIncreasingParameters(usize),
    #[error("curve contains a non-finite value")]
    NonFinite,
    #[error("sample dimensions do not match")]
    Shape,
    #[error("{0} and {1} conflict")]
    ConflictingSurgeries(String, String),
    #[error("{0} does not match the host at its endpoints")]
    Mismatch(String),
    #[error("{0} lies outside the host domain")]
    OutOfDomain(String),
    #[error("family {family}: {survivors} surviving options, {required} required")]
    SelectionImpossible { family: usize, survivors: usize, required: usize },
    #[error("{loops} loops and {families} families exceed n = {n}")]
    TooManySurgeries { loops: usize, families: usize, n: usize },
    #[error("family {family} has {options} options, {required} required")]
    TooFewOptions { family: usize, options: usize, required: usize },
    #[error("perpendicular arclength {available:.6} below required {required:.6}")]
    InsufficientPerpendicularLength { available: f64, required: f64 },
    #[error("curve drops to height {height:.6} below level {level:.6} in the window")]
    BelowLevel { height: f64, level: f64 },
    #[error("invalid interval [{0}, {1}]")]
    BadInterval(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseCurve {
    pub params: Vec<f64>,
    #[serde(with = "crate::serde_vec::list")]
    pub values: Vec<DVector<f64>>,
}

fn dot_height(x: &DVector<f64>, v: &DVector<f64>) -> f64 {
    x.dot(v)
}

fn split(d: &DVector<f64>, v: &DVector<f64>) -> (f64, f64) {
    let along = d.dot(v);
    let perp = (d - v * along).norm();
    (along.abs(), perp)
}

impl PiecewiseCurve {
    pub fn new(params: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self, SurgeryError> {
        if params.is_empty() {
            return Err(SurgeryError::EmptyCurve);
        }
        if params.len() != values.len() {
            return Err(SurgeryError::Shape);
        }
        let dim = values[0].len();
        if values.iter().any(|x| x.len() != dim) {
            return Err(SurgeryError::Shape);
        }
        if params.iter().any(|t| !t.is_finite()) || values.iter().any(|x| x.iter().any(|c| !c.is_finite())) {
            return Err(SurgeryError::NonFinite);
        }
        if let Some(k) = params.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SurgeryError::NonIncreasingParameters(k + 1));
        }
        Ok(Self { params, values })
    }

    /// Samples at parameters `0, 1, 2, …`.
    pub fn from_points(values: Vec<DVector<f64>>) -> Result<Self, SurgeryError> {
        let params = (0..values.len()).map(|k| k as f64).collect();
        Self::new(params, values)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.params[0], self.params[self.params.len() - 1])
    }

    pub fn segment_lengths(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect()
    }

    pub fn length(&self) -> f64 {
        self.segment_lengths().iter().sum()
    }

    /// Index `k` of the segment `[t_k, t_{k+1}]` containing `t`.
    fn segment_of(&self, t: f64) -> usize {
        let k = self.params.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(self.params.len().saturating_sub(2))
    }

    /// Linear interpolation, clamped to the domain.
    pub fn value_at(&self, t: f64) -> DVector<f64> {
        let (a, b) = self.domain();
        if self.len() == 1 || t <= a {
            return self.values[0].clone();
        }
        if t >= b {
            return self.values[self.len() - 1].clone();
        }
        let k = self.segment_of(t);
        let (t0, t1) = (self.params[k], self.params[k + 1]);
        if t == t0 {
            return self.values[k].clone();
        }
        let s = (t - t0) / (t1 - t0);
        &self.values[k] + (&self.values[k + 1] - &self.values[k]) * s
    }

    pub fn height(&self, v: &DVector<f64>, t: f64) -> f64 {
        dot_height(&self.value_at(t), v)
    }

    /// First parameter attaining the largest `v`-coordinate, and that value.
    pub fn max_height(&self, v: &DVector<f64>) -> (f64, f64) {
        let mut best = (self.params[0], dot_height(&self.values[0], v));
        for (t, x) in self.params.iter().zip(&self.values) {
            let h = dot_height(x, v);
            if h > best.1 {
                best = (*t, h);
            }
        }
        best
    }

    pub fn min_height(&self, v: &DVector<f64>) -> f64 {
        self.values.iter().map(|x| dot_height(x, v)).fold(f64::INFINITY, f64::min)
    }

    /// The curve on `[c, d]`, with interpolated endpoints.
    pub fn restrict(&self, c: f64, d: f64) -> Result<Self, SurgeryError> {
        let (a, b) = self.domain();
        if !(c < d) || c < a || d > b {
            return Err(SurgeryError::BadInterval(c, d));
        }
        let mut params = vec![c];
        let mut values = vec![self.value_at(c)];
        for (t, x) in self.params.iter().zip(&self.values) {
            if *t > c && *t < d {
                params.push(*t);
                values.push(x.clone());
            }
        }
        params.push(d);
        values.push(self.value_at(d));
        Self::new(params, values)
    }

    /// Cumulative arclength perpendicular to `v` at every sample.
    pub fn perpendicular_profile(&self, v: &DVector<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += split(&(&w[1] - &w[0]), v).1;
            out.push(acc);
        }
        out
    }

    /// Arclength perpendicular to `v` over `[c, d]`.
    pub fn perpendicular_between(&self, v: &DVector<f64>, c: f64, d: f64) -> f64 {
        if d <= c {
            return 0.0;
        }
        match self.restrict(c.max(self.domain().0), d.min(self.domain().1)) {
            Ok(piece) => directional_arclengths(&piece, v).1,
            Err(_) => 0.0,
        }
    }

    /// Smallest `t ≥ from` whose perpendicular arclength from `from` equals
    /// `amount`.
    pub fn time_at_perpendicular(&self, v: &DVector<f64>, from: f64, amount: f64) -> Option<f64> {
        if amount <= 0.0 {
            return Some(from);
        }
        let mut acc = 0.0;
        let mut prev_t = from;
        let mut prev_x = self.value_at(from);
        let start = self.params.partition_point(|&s| s <= from);
        for k in start..self.len() {
            let x = &self.values[k];
            let step = split(&(x - &prev_x), v).1;
            if acc + step >= amount && step > 0.0 {
                let s = (amount - acc) / step;
                return Some(prev_t + (self.params[k] - prev_t) * s);
            }
            acc += step;
            prev_t = self.params[k];
            prev_x = x.clone();
        }
        None
    }

    /// Maximal parameter intervals on which `lo ≤ ⟨γ, v⟩ ≤ hi`. Intervals of
    /// zero length are dropped.
    pub fn band_intervals(&self, v: &DVector<f64>, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut push = |a: f64, b: f64| {
            if b <= a {
                return;
            }
            if let Some(last) = out.last_mut() {
                if last.1 == a {
                    last.1 = b;
                    return;
                }
            }
            out.push((a, b));
        };
        for k in 0..self.len().saturating_sub(1) {
            let (t0, t1) = (self.params[k], self.params[k + 1]);
            let (h0, h1) = (dot_height(&self.values[k], v), dot_height(&self.values[k + 1], v));
            // Parameter fraction range where the linear height lies in [lo, hi].
            let (mut s0, mut s1) = (0.0_f64, 1.0_f64);
            let dh = h1 - h0;
            if dh == 0.0 {
                if h0 < lo || h0 > hi {
                    continue;
                }
            } else {
                let a = (lo - h0) / dh;
                let b = (hi - h0) / dh;
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                s0 = s0.max(a);
                s1 = s1.min(b);
                if s0 > s1 {
                    continue;
                }
            }
            let a = if s0 <= 0.0 { t0 } else { t0 + (t1 - t0) * s0 };
            let b = if s1 >= 1.0 { t1 } else { t0 + (t1 - t0) * s1 };
            push(a, b);
        }
        out
    }

    /// Shift all parameters by `dt`.
    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            params: self.params.iter().map(|t| t + dt).collect(),
            values: self.values.clone(),
        }
    }
}

/// Arclengths along and perpendicular to the unit vector `v`.
pub fn directional_arclengths(curve: &PiecewiseCurve, v: &DVector<f64>) -> (f64, f64) {
    curve.values.windows(2).fold((0.0, 0.0), |acc, w| {
        let (a, p) = split(&(&w[1] - &w[0]), v);
        (acc.0 + a, acc.1 + p)
    })
}

/// Total perpendicular arclength over a set of parameter intervals.
pub fn perpendicular_on(curve: &PiecewiseCurve, v: &DVector<f64>, intervals: &[(f64, f64)]) -> f64 {
    intervals.iter().map(|&(a, b)| curve.perpendicular_between(v, a, b)).sum()
}

/// Remove open intervals from a list of closed intervals.
pub fn subtract_open(intervals: &[(f64, f64)], removed: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pieces: Vec<(f64, f64)> = intervals.to_vec();
    for &(c, d) in removed {
        let mut next = Vec::new();
        for (a, b) in pieces {
            if d <= a || c >= b {
                next.push((a, b));
                continue;
            }
            if a < c {
                next.push((a, c));
            }
            if d < b {
                next.push((d, b));
            }
        }
        pieces = next;
    }
    pieces.retain(|(a, b)| b > a);
    pieces
}

/// Replace the curve on an open parameter interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSurgery {
    pub start: f64,
    pub end: f64,
    /// Defined on `[start, end]`, matching the host at both ends.
    pub replacement: PiecewiseCurve,
}

impl PathSurgery {
    pub fn overlaps(&self, other: &PathSurgery) -> bool {
        intervals_overlap((self.start, self.end), (other.start, other.end))
    }

    /// Whether the loop location `t` lies in the open interval.
    pub fn contains(&self, t: f64) -> bool {
        self.start < t && t < self.end
    }

    /// Length added relative to the host on the same interval.
    pub fn added_length(&self, host: &PiecewiseCurve) -> f64 {
        let original = host.restrict(self.start, self.end).map(|c| c.length()).unwrap_or(0.0);
        self.replacement.length() - original
    }
}

fn intervals_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0.max(b.0) < a.1.min(b.1)
}

/// Insert a closed excursion at `location`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSurgery {
    pub location: f64,
    /// Parameter length of the loop.
    pub length: f64,
    /// Defined on `[0, length]`, starting and ending at the host value.
    pub curve: PiecewiseCurve,
}

impl LoopSurgery {
    /// Straight out-and-back loop of the given travel `distance` along the
    /// unit vector `direction`. A non-positive distance gives a degenerate
    /// loop that only marks its location.
    pub fn out_and_back(host: &PiecewiseCurve, location: f64, direction: &DVector<f64>, distance: f64) -> Result<Self, SurgeryError> {
        let x = host.value_at(location);
        if distance <= 0.0 {
            return Ok(Self {
                location,
                length: 0.0,
                curve: PiecewiseCurve::new(vec![0.0], vec![x])?,
            });
        }
        let curve = PiecewiseCurve::new(vec![0.0, distance, 2.0 * distance], vec![x.clone(), &x + direction * distance, x])?;
        Ok(Self {
            location,
            length: 2.0 * distance,
            curve,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgeryFamily {
    pub options: Vec<PathSurgery>,
}

impl SurgeryFamily {
    pub fn new(options: Vec<PathSurgery>) -> Result<Self, SurgeryError> {
        for i in 0..options.len() {
            for j in i + 1..options.len() {
                if options[i].overlaps(&options[j]) {
                    return Err(SurgeryError::ConflictingSurgeries(format!("option {i}"), format!("option {j}")));
                }
            }
        }
        Ok(Self { options })
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    /// The interior gaps between consecutive options; single points appear
    /// as degenerate intervals.
    pub fn interstices(&self) -> Vec<(f64, f64)> {
        let mut iv: Vec<(f64, f64)> = self.options.iter().map(|o| (o.start, o.end)).collect();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        iv.windows(2).map(|w| (w[0].1, w[1].0)).collect()
    }
}

fn close(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    (a - b).amax() <= AGREEMENT_TOL * a.amax().max(1.0)
}

/// Compose path and loop surgeries into one curve. Loops at equal
/// locations are applied one after another in the given order.
pub fn apply_surgeries(host: &PiecewiseCurve, loops: &[LoopSurgery], picks: &[PathSurgery]) -> Result<PiecewiseCurve, SurgeryError> {
    let (a, b) = host.domain();
    for (i, p) in picks.iter().enumerate() {
        if p.start < a || p.end > b || p.start >= p.end {
            return Err(SurgeryError::OutOfDomain(format!("pick {i}")));
        }
        let (ra, rb) = p.replacement.domain();
        if ra != p.start || rb != p.end {
            return Err(SurgeryError::Mismatch(format!("pick {i}")));
        }
        let first = &p.replacement.values[0];
        let last = &p.replacement.values[p.replacement.len() - 1];
        if !close(first, &host.value_at(p.start)) || !close(last, &host.value_at(p.end)) {
            return Err(SurgeryError::Mismatch(format!("pick {i}")));
        }
        for (j, q) in picks.iter().enumerate().skip(i + 1) {
            if p.overlaps(q) {
                return Err(SurgeryError::ConflictingSurgeries(format!("pick {i}"), format!("pick {j}")));
            }
        }
        for (j, l) in loops.iter().enumerate() {
            if p.contains(l.location) {
                return Err(SurgeryError::ConflictingSurgeries(format!("pick {i}"), format!("loop {j}")));
            }
        }
    }

    let mut base: Vec<(f64, DVector<f64>)> = host
        .params
        .iter()
        .zip(&host.values)
        .filter(|(t, _)| !picks.iter().any(|p| p.contains(**t)))
        .map(|(t, x)| (*t, x.clone()))
        .collect();
    for p in picks {
        let n = p.replacement.len();
        // Host values are kept at the interval ends.
        base.push((p.start, host.value_at(p.start)));
        base.push((p.end, host.value_at(p.end)));
        for k in 1..n - 1 {
            base.push((p.replacement.params[k], p.replacement.values[k].clone()));
        }
    }
    base.sort_by(|x, y| x.0.total_cmp(&y.0));
    base.dedup_by(|x, y| x.0 == y.0);
    let merged = PiecewiseCurve::new(base.iter().map(|x| x.0).collect(), base.into_iter().map(|x| x.1).collect())?;

    let mut order: Vec<usize> = (0..loops.len()).collect();
    order.sort_by(|&i, &j| loops[i].location.total_cmp(&loops[j].location));
    for &i in &order {
        let l = &loops[i];
        if l.location < a || l.location > b {
            return Err(SurgeryError::OutOfDomain(format!("loop {i}")));
        }
        let at = merged.value_at(l.location);
        let (la, lb) = l.curve.domain();
        if la != 0.0 || lb != l.length || !close(&l.curve.values[0], &at) || !close(&l.curve.values[l.curve.len() - 1], &at) {
            return Err(SurgeryError::Mismatch(format!("loop {i}")));
        }
    }

    let mut params: Vec<f64> = Vec::new();
    let mut values: Vec<DVector<f64>> = Vec::new();
    let emit = |t: f64, x: DVector<f64>, params: &mut Vec<f64>, values: &mut Vec<DVector<f64>>| {
        if params.last().is_some_and(|&s| s >= t) {
            return;
        }
        params.push(t);
        values.push(x);
    };
    let mut shift = 0.0;
    let mut next = 0;
    for (t, x) in merged.params.iter().zip(&merged.values) {
        while next < order.len() && loops[order[next]].location <= *t {
            let l = &loops[order[next]];
            next += 1;
            if l.length <= 0.0 {
                continue;
            }
            let anchor = l.location + shift;
            emit(anchor, merged.value_at(l.location), &mut params, &mut values);
            for k in 1..l.curve.len() - 1 {
                emit(anchor + l.curve.params[k], l.curve.values[k].clone(), &mut params, &mut values);
            }
            emit(anchor + l.length, merged.value_at(l.location), &mut params, &mut values);
            shift += l.length;
        }
        emit(t + shift, x.clone(), &mut params, &mut values);
    }
    PiecewiseCurve::new(params, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Chosen option index per family.
    pub picks: Vec<usize>,
    /// Options surviving the filter at each step.
    pub survivors: Vec<usize>,
    /// Survivors guaranteed by the counting argument at each step.
    pub required: Vec<usize>,
}

/// Greedy conflict-free choice of one option per family, taking the first
/// survivor at each step.
pub fn select_simultaneous(loops: &[f64], families: &[SurgeryFamily], n: usize) -> Result<Selection, SurgeryError> {
    select_simultaneous_by(loops, families, n, |_, _| 0.0)
}

/// As [`select_simultaneous`], choosing the surviving option of least
/// `cost(family, option)` (first on ties).
pub fn select_simultaneous_by(
    loops: &[f64],
    families: &[SurgeryFamily],
    n: usize,
    cost: impl Fn(usize, usize) -> f64,
) -> Result<Selection, SurgeryError> {
    if loops.len() + families.len() > n {
        return Err(SurgeryError::TooManySurgeries {
            loops: loops.len(),
            families: families.len(),
            n,
        });
    }
    for (f, fam) in families.iter().enumerate() {
        if fam.len() < n * n {
            return Err(SurgeryError::TooFewOptions {
                family: f,
                options: fam.len(),
                required: n * n,
            });
        }
    }
    let mut alive: Vec<Vec<usize>> = families.iter().map(|_| (0..n * n).collect()).collect();
    let mut picks = Vec::new();
    let mut survivors = Vec::new();
    let mut required = Vec::new();
    for s in 0..families.len() {
        let cur = n - s;
        let limit = 2 * cur - 2;
        let need = 2 * (cur - 1);
        let opts = &families[s].options;
        let candidates: Vec<usize> = alive[s]
            .iter()
            .copied()
            .filter(|&o| {
                let opt = &opts[o];
                if loops.iter().any(|&t| opt.contains(t)) {
                    return false;
                }
                (s + 1..families.len()).all(|j| {
                    alive[j]
                        .iter()
                        .filter(|&&k| opt.overlaps(&families[j].options[k]))
                        .count()
                        <= limit
                })
            })
            .collect();
        survivors.push(candidates.len());
        required.push(need);
        if candidates.is_empty() || candidates.len() < need {
            return Err(SurgeryError::SelectionImpossible {
                family: s,
                survivors: candidates.len(),
                required: need.max(1),
            });
        }
        let mut best = candidates[0];
        for &o in &candidates[1..] {
            if cost(s, o) < cost(s, best) {
                best = o;
            }
        }
        picks.push(best);
        let chosen = &opts[best];
        let keep = (cur - 1) * (cur - 1);
        for j in s + 1..families.len() {
            alive[j].retain(|&k| !chosen.overlaps(&families[j].options[k]));
            alive[j].truncate(keep);
        }
    }
    Ok(Selection {
        picks,
        survivors,
        required,
    })
}

/// Replace the `v`-coordinate below `level` by its mirror image. Crossings
/// become samples so the result stays piecewise linear.
pub fn reflect_below(curve: &PiecewiseCurve, v: &DVector<f64>, level: f64) -> PiecewiseCurve {
    let mirror = |x: &DVector<f64>| {
        let h = x.dot(v);
        if h < level {
            x + v * (2.0 * (level - h))
        } else {
            x.clone()
        }
    };
    let mut params = vec![curve.params[0]];
    let mut values = vec![mirror(&curve.values[0])];
    for k in 0..curve.len() - 1 {
        let (x0, x1) = (&curve.values[k], &curve.values[k + 1]);
        let (h0, h1) = (x0.dot(v) - level, x1.dot(v) - level);
        if (h0 < 0.0 && h1 > 0.0) || (h0 > 0.0 && h1 < 0.0) {
            let s = h0 / (h0 - h1);
            let t = curve.params[k] + (curve.params[k + 1] - curve.params[k]) * s;
            if t > params[params.len() - 1] && t < curve.params[k + 1] {
                let mut x = x0 + (x1 - x0) * s;
                // Put the crossing exactly on the level.
                let off = x.dot(v) - level;
                x -= v * off;
                params.push(t);
                values.push(x);
            }
        }
        params.push(curve.params[k + 1]);
        values.push(mirror(x1));
    }
    PiecewiseCurve { params, values }
}

/// Options of a tent-surgery family on `window`: `n²` consecutive pieces of
/// perpendicular arclength `l`, each lifted to reach `d + √(l/2)`.
pub fn build_surgery_family(
    curve: &PiecewiseCurve,
    v: &DVector<f64>,
    window: (f64, f64),
    l: f64,
    d: f64,
    n: usize,
) -> Result<SurgeryFamily, SurgeryError> {
    let (a, b) = window;
    let piece = curve.restrict(a, b)?;
    let m = n * n;
    let available = directional_arclengths(&piece, v).1;
    let needed = m as f64 * l;
    if available < needed {
        return Err(SurgeryError::InsufficientPerpendicularLength {
            available,
            required: needed,
        });
    }
    let low = piece.min_height(v);
    if low < d - AGREEMENT_TOL * d.abs().max(1.0) {
        return Err(SurgeryError::BelowLevel { height: low, level: d });
    }
    let peak = d + (l / 2.0).sqrt();
    let mut breaks = vec![a];
    for i in 1..=m {
        let t = curve
            .time_at_perpendicular(v, a, i as f64 * l)
            .ok_or(SurgeryError::InsufficientPerpendicularLength {
                available,
                required: needed,
            })?;
        breaks.push(t.min(b));
    }
    let mut options = Vec::with_capacity(m);
    for w in breaks.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let host = curve.restrict(t0, t1)?;
        if host.max_height(v).1 >= peak {
            options.push(PathSurgery {
                start: t0,
                end: t1,
                replacement: host,
            });
            continue;
        }
        options.push(PathSurgery {
            start: t0,
            end: t1,
            replacement: tent(&host, v, l, peak),
        });
    }
    SurgeryFamily::new(options)
}

/// Keep the perpendicular trace of `host` and replace its `v`-coordinate by
/// the piecewise-linear function of perpendicular arclength that climbs to
/// `peak` at arclength `l/2`.
fn tent(host: &PiecewiseCurve, v: &DVector<f64>, l: f64, peak: f64) -> PiecewiseCurve {
    let (t0, t1) = host.domain();
    let mid_t = host.time_at_perpendicular(v, t0, l / 2.0).unwrap_or(0.5 * (t0 + t1));
    let mut params: Vec<f64> = host.params.clone();
    if mid_t > t0 && mid_t < t1 && !params.contains(&mid_t) {
        params.push(mid_t);
        params.sort_by(f64::total_cmp);
    }
    let first = host.values[0].clone();
    let last = host.values[host.len() - 1].clone();
    let (h0, h1) = (first.dot(v), last.dot(v));
    let half = l / 2.0;
    let mut values = Vec::with_capacity(params.len());
    let mut s = 0.0;
    let mut prev: Option<DVector<f64>> = None;
    for (k, &t) in params.iter().enumerate() {
        if k == 0 {
            values.push(first.clone());
            prev = Some(first.clone());
            continue;
        }
        if k == params.len() - 1 {
            values.push(last.clone());
            break;
        }
        let x = host.value_at(t);
        if let Some(p) = &prev {
            s += split(&(&x - p), v).1;
        }
        prev = Some(x.clone());
        let f = if s <= half {
            h0 + (peak - h0) * (s / half)
        } else {
            peak + (h1 - peak) * ((s - half) / half).min(1.0)
        };
        values.push(&x - v * x.dot(v) + v * f);
    }
    PiecewiseCurve { params, values }
}
