//! Descent on the discretized energy of a path with fixed endpoints.
//!
//! Interior node `k` is described by its base point and, per factor, a
//! coordinate `z` with `h = h_ref + e^{μᵢ αᵢ(v_ref)} z`, where `μᵢ` is the mean
//! eigenvalue of `Dᵢ`. The reference frame is reset at every checkpoint so
//! that nil steps stay commensurate with the local metric.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::group::GroupElement;
use crate::metric::SplitMetric;
use crate::path::{lerp, PiecewisePath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub initial_segments: usize,
    pub max_segments: usize,
    /// Relative length change between refinement levels that ends the run.
    pub refine_tol: f64,
    /// Relative energy decrease over `stall_window` iterations that ends a level.
    pub stall_tol: f64,
    pub stall_window: usize,
    /// Iterations between true-length evaluations and frame resets.
    pub checkpoint: usize,
    pub memory: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            initial_segments: 128,
            max_segments: 1024,
            refine_tol: 0.005,
            stall_tol: 1e-6,
            stall_window: 50,
            checkpoint: 25,
            memory: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub segments: usize,
    pub iterations: usize,
    pub length: f64,
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub path: PiecewisePath,
    pub length: f64,
    pub levels: Vec<LevelRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub budget_exceeded: bool,
}

/// Height change that triggers a new frame at a checkpoint.
const REFRAME_DRIFT: f64 = 0.5;

/// Four-point Gauss–Legendre nodes and weights on `[0, 1]`.
const GAUSS: [(f64, f64); 4] = [
    (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
    (0.330_009_478_207_571_87, 0.326_072_577_431_273_07),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
    (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
];

/// Layout of the optimization variables and the current frame.
struct Frame<'a> {
    metric: &'a SplitMetric,
    start: GroupElement,
    end: GroupElement,
    reference: Vec<GroupElement>,
    scales: Vec<Vec<f64>>,
    rank: usize,
    offsets: Vec<usize>,
    stride: usize,
    abelian: bool,
    diagonal: Option<DiagonalLayout>,
}

/// Flat data for groups whose factors are abelian with diagonal
/// derivations: nil coordinate `c` contracts at rate `βᶜ · v`.
struct DiagonalLayout {
    /// `βᶜ = λ_c αᵢ₍c₎`, row-major `nd × k`.
    beta: Vec<f64>,
    base_gram: Vec<f64>,
    nil_gram: Vec<f64>,
}

impl<'a> Frame<'a> {
    fn new(metric: &'a SplitMetric, nodes: &[GroupElement]) -> Self {
        let group = metric.group();
        let rank = group.rank();
        let mut offsets = Vec::new();
        let mut o = rank;
        for f in group.factors() {
            offsets.push(o);
            o += f.dim();
        }
        let means: Vec<f64> = group.factors().iter().map(|f| f.derivation().trace() / f.dim() as f64).collect();
        let reference: Vec<GroupElement> = nodes[1..nodes.len() - 1].to_vec();
        let scales = reference
            .iter()
            .map(|g| (0..group.n_factors()).map(|i| (means[i] * group.alpha(i, &g.base)).exp()).collect())
            .collect();
        Self {
            metric,
            start: nodes[0].clone(),
            end: nodes[nodes.len() - 1].clone(),
            reference,
            scales,
            rank,
            offsets,
            stride: o,
            abelian: group.factors().iter().all(|f| f.is_abelian()),
            diagonal: DiagonalLayout::new(metric),
        }
    }

    /// Largest change of `αᵢ` at any node since the frame was set.
    fn drift(&self, x: &DVector<f64>) -> f64 {
        let group = self.metric.group();
        let mut worst = 0.0_f64;
        for (k, r) in self.reference.iter().enumerate() {
            let v = x.rows(k * self.stride, self.rank).into_owned() - &r.base;
            for i in 0..group.n_factors() {
                worst = worst.max(group.alpha(i, &v).abs());
            }
        }
        worst
    }

    fn len(&self) -> usize {
        self.reference.len() * self.stride
    }

    fn initial(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        for (k, g) in self.reference.iter().enumerate() {
            x.rows_mut(k * self.stride, self.rank).copy_from(&g.base);
        }
        x
    }

    fn nodes(&self, x: &DVector<f64>) -> Vec<GroupElement> {
        let mut out = Vec::with_capacity(self.reference.len() + 2);
        out.push(self.start.clone());
        for (k, r) in self.reference.iter().enumerate() {
            let row = k * self.stride;
            let base = x.rows(row, self.rank).into_owned();
            let nil = r
                .nil
                .iter()
                .enumerate()
                .map(|(i, h)| h + x.rows(row + self.offsets[i], h.len()) * self.scales[k][i])
                .collect();
            out.push(GroupElement::new(nil, base));
        }
        out.push(self.end.clone());
        out
    }

    fn gauss_length(&self, a: &GroupElement, b: &GroupElement) -> f64 {
        let group = self.metric.group();
        let r = group.relative(a, b);
        let base_sq = self.metric.base_norm(&r.base).powi(2);
        GAUSS
            .iter()
            .map(|&(t, wt)| {
                let w: Vec<DVector<f64>> = (0..group.n_factors())
                    .map(|i| group.factor(i).flow(-t * group.alpha(i, &r.base)) * &r.nil[i])
                    .collect();
                wt * (base_sq + self.metric.nil_norm(&w).powi(2)).sqrt()
            })
            .sum()
    }

    fn energy(&self, nodes: &[GroupElement]) -> f64 {
        let m = (nodes.len() - 1) as f64;
        m * nodes
            .windows(2)
            .map(|w| self.gauss_length(&w[0], &w[1]).powi(2))
            .sum::<f64>()
    }

    fn energy_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        if let Some(layout) = &self.diagonal {
            return self.analytic_diagonal(layout, x);
        }
        let nodes = self.nodes(x);
        if self.abelian {
            self.analytic(&nodes)
        } else {
            self.finite_difference(x, &nodes)
        }
    }

    /// Segment length by Gauss–Legendre quadrature of the speed
    /// `√(|Δv|² + |w(t)|²)`, `wᵢ(t) = e^{−αᵢ(v(t))Dᵢ} Δhᵢ`; the energy is
    /// `m Σ ℓ²`.
    fn analytic(&self, nodes: &[GroupElement]) -> (f64, DVector<f64>) {
        let group = self.metric.group();
        let b = self.metric.base_gram();
        let g = self.metric.nil_gram();
        let nf = group.n_factors();
        let m = (nodes.len() - 1) as f64;
        let mut energy = 0.0;
        // Gradient in (base, h) per node, including the fixed endpoints.
        let mut grad: Vec<(DVector<f64>, Vec<DVector<f64>>)> = nodes
            .iter()
            .map(|n| (DVector::zeros(self.rank), n.nil.iter().map(|h| DVector::zeros(h.len())).collect()))
            .collect();
        for k in 0..nodes.len() - 1 {
            let (a, c) = (&nodes[k], &nodes[k + 1]);
            let dv = &c.base - &a.base;
            let bdv = b * &dv;
            let base_sq = dv.dot(&bdv);
            let dh: Vec<DVector<f64>> = (0..nf).map(|i| &c.nil[i] - &a.nil[i]).collect();
            let mut length = 0.0;
            // Derivatives of ℓ with respect to Δv, each Δhᵢ, and v_a, v_c.
            let mut d_dv = DVector::zeros(self.rank);
            let mut d_dh: Vec<DVector<f64>> = dh.iter().map(|x| DVector::zeros(x.len())).collect();
            let mut d_va = DVector::zeros(self.rank);
            let mut d_vc = DVector::zeros(self.rank);
            for (t, wt) in GAUSS {
                let v = &a.base + &dv * t;
                let flows: Vec<DMatrix<f64>> = (0..nf).map(|i| group.factor(i).flow(-group.alpha(i, &v))).collect();
                let w: Vec<DVector<f64>> = (0..nf).map(|i| &flows[i] * &dh[i]).collect();
                let mut wall = DVector::zeros(g.nrows());
                for i in 0..nf {
                    wall.rows_mut(self.offsets[i] - self.rank, w[i].len()).copy_from(&w[i]);
                }
                let gw = g * &wall;
                let speed = (base_sq + wall.dot(&gw)).sqrt();
                length += wt * speed;
                if speed == 0.0 {
                    continue;
                }
                let f = wt / speed;
                d_dv += &bdv * f;
                let mut dvq = DVector::zeros(self.rank);
                for i in 0..nf {
                    let gi = gw.rows(self.offsets[i] - self.rank, w[i].len()).into_owned();
                    d_dh[i] += flows[i].transpose() * &gi * f;
                    let s = -gi.dot(&(group.factor(i).derivation() * &w[i])) * f;
                    dvq += group.root(i) * s;
                }
                d_va += &dvq * (1.0 - t);
                d_vc += &dvq * t;
            }
            energy += length * length;
            let scale = 2.0 * length;
            grad[k + 1].0 += (&d_dv + &d_vc) * scale;
            grad[k].0 += (&d_va - &d_dv) * scale;
            for i in 0..nf {
                grad[k + 1].1[i] += &d_dh[i] * scale;
                grad[k].1[i] -= &d_dh[i] * scale;
            }
        }
        let mut out = DVector::zeros(self.len());
        for (k, (gb, gh)) in grad[1..nodes.len() - 1].iter().enumerate() {
            let row = k * self.stride;
            out.rows_mut(row, self.rank).copy_from(&(gb * m));
            for i in 0..nf {
                out.rows_mut(row + self.offsets[i], gh[i].len()).copy_from(&(&gh[i] * (m * self.scales[k][i])));
            }
        }
        (m * energy, out)
    }

    /// Every node as `(base, nil)` in one flat array, endpoints included.
    fn flat(&self, x: &DVector<f64>) -> Vec<f64> {
        let n = self.reference.len();
        let mut out = vec![0.0; (n + 2) * self.stride];
        let mut put = |k: usize, g: &GroupElement| {
            let row = k * self.stride;
            out[row..row + self.rank].copy_from_slice(g.base.as_slice());
            for (i, h) in g.nil.iter().enumerate() {
                out[row + self.offsets[i]..row + self.offsets[i] + h.len()].copy_from_slice(h.as_slice());
            }
        };
        put(0, &self.start);
        put(n + 1, &self.end);
        for (k, r) in self.reference.iter().enumerate() {
            let row = (k + 1) * self.stride;
            let src = k * self.stride;
            out[row..row + self.rank].copy_from_slice(&x.as_slice()[src..src + self.rank]);
            for (i, h) in r.nil.iter().enumerate() {
                for a in 0..h.len() {
                    let j = self.offsets[i] + a;
                    out[row + j] = h[a] + x[src + j] * self.scales[k][i];
                }
            }
        }
        out
    }

    /// [`Frame::analytic`] without per-point allocation.
    fn analytic_diagonal(&self, layout: &DiagonalLayout, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (k, s) = (self.rank, self.stride);
        let nd = s - k;
        let pts = self.flat(x);
        let nodes = pts.len() / s;
        let m = (nodes - 1) as f64;
        let mut grad = vec![0.0; pts.len()];
        let (mut dv, mut bdv, mut v) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        let (mut d_dv, mut d_va, mut d_vc, mut dvq) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        let (mut dh, mut e, mut w, mut gw, mut d_dh) = (vec![0.0; nd], vec![0.0; nd], vec![0.0; nd], vec![0.0; nd], vec![0.0; nd]);
        let mut energy = 0.0;
        for seg in 0..nodes - 1 {
            let (a, c) = (&pts[seg * s..seg * s + s], &pts[(seg + 1) * s..(seg + 2) * s]);
            for j in 0..k {
                dv[j] = c[j] - a[j];
            }
            for j in 0..nd {
                dh[j] = c[k + j] - a[k + j];
            }
            let mut base_sq = 0.0;
            for r in 0..k {
                bdv[r] = (0..k).map(|q| layout.base_gram[r * k + q] * dv[q]).sum();
                base_sq += dv[r] * bdv[r];
            }
            d_dv.fill(0.0);
            d_va.fill(0.0);
            d_vc.fill(0.0);
            d_dh.fill(0.0);
            let mut length = 0.0;
            for (t, wt) in GAUSS {
                for j in 0..k {
                    v[j] = a[j] + t * dv[j];
                }
                for cc in 0..nd {
                    let beta = &layout.beta[cc * k..cc * k + k];
                    e[cc] = (-beta.iter().zip(&v).map(|(b, x)| b * x).sum::<f64>()).exp();
                    w[cc] = e[cc] * dh[cc];
                }
                let mut nil_sq = 0.0;
                for r in 0..nd {
                    gw[r] = (0..nd).map(|q| layout.nil_gram[r * nd + q] * w[q]).sum();
                    nil_sq += w[r] * gw[r];
                }
                let speed = (base_sq + nil_sq).sqrt();
                length += wt * speed;
                if speed == 0.0 {
                    continue;
                }
                let f = wt / speed;
                dvq.fill(0.0);
                for cc in 0..nd {
                    d_dh[cc] += e[cc] * gw[cc] * f;
                    let g = -gw[cc] * w[cc] * f;
                    for j in 0..k {
                        dvq[j] += layout.beta[cc * k + j] * g;
                    }
                }
                for j in 0..k {
                    d_dv[j] += bdv[j] * f;
                    d_va[j] += dvq[j] * (1.0 - t);
                    d_vc[j] += dvq[j] * t;
                }
            }
            energy += length * length;
            let scale = 2.0 * length;
            let (lo, hi) = (seg * s, (seg + 1) * s);
            for j in 0..k {
                grad[hi + j] += (d_dv[j] + d_vc[j]) * scale;
                grad[lo + j] += (d_va[j] - d_dv[j]) * scale;
            }
            for j in 0..nd {
                grad[hi + k + j] += d_dh[j] * scale;
                grad[lo + k + j] -= d_dh[j] * scale;
            }
        }
        let mut out = DVector::zeros(self.len());
        for kk in 0..self.reference.len() {
            let (row, src) = (kk * s, (kk + 1) * s);
            for j in 0..k {
                out[row + j] = grad[src + j] * m;
            }
            for (i, &o) in self.offsets.iter().enumerate() {
                let dim = if i + 1 < self.offsets.len() { self.offsets[i + 1] - o } else { s - o };
                for a in 0..dim {
                    out[row + o + a] = grad[src + o + a] * m * self.scales[kk][i];
                }
            }
        }
        (m * energy, out)
    }

    fn finite_difference(&self, x: &DVector<f64>, nodes: &[GroupElement]) -> (f64, DVector<f64>) {
        let m = (nodes.len() - 1) as f64;
        let seg = |a: &GroupElement, b: &GroupElement| self.gauss_length(a, b).powi(2);
        let energy = self.energy(nodes);
        let mut out = DVector::zeros(self.len());
        let mut y = x.clone();
        for j in 0..self.len() {
            let k = j / self.stride;
            let step = 1e-6 * x[j].abs().max(1.0);
            let local = |y: &DVector<f64>| {
                let ns = self.nodes_around(y, k);
                seg(&ns[0], &ns[1]) + seg(&ns[1], &ns[2])
            };
            y[j] = x[j] + step;
            let up = local(&y);
            y[j] = x[j] - step;
            let down = local(&y);
            y[j] = x[j];
            out[j] = m * (up - down) / (2.0 * step);
        }
        (energy, out)
    }

    /// Nodes `k`, `k+1`, `k+2` of the full path, i.e. interior node `k` and
    /// its neighbours.
    fn nodes_around(&self, x: &DVector<f64>, k: usize) -> [GroupElement; 3] {
        let interior = |j: usize| {
            let r = &self.reference[j];
            let row = j * self.stride;
            let base = x.rows(row, self.rank).into_owned();
            let nil = r
                .nil
                .iter()
                .enumerate()
                .map(|(i, h)| h + x.rows(row + self.offsets[i], h.len()) * self.scales[j][i])
                .collect();
            GroupElement::new(nil, base)
        };
        let prev = if k == 0 { self.start.clone() } else { interior(k - 1) };
        let next = if k + 1 == self.reference.len() { self.end.clone() } else { interior(k + 1) };
        [prev, interior(k), next]
    }
}

impl DiagonalLayout {
    fn new(metric: &SplitMetric) -> Option<Self> {
        let group = metric.group();
        if !group.factors().iter().all(|f| f.is_abelian() && is_diagonal(f.derivation())) {
            return None;
        }
        let k = group.rank();
        let mut beta = Vec::with_capacity(group.nil_dim() * k);
        for (i, f) in group.factors().iter().enumerate() {
            for c in 0..f.dim() {
                beta.extend(group.root(i).iter().map(|a| a * f.derivation()[(c, c)]));
            }
        }
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        Some(Self {
            beta,
            base_gram: row_major(metric.base_gram()),
            nil_gram: row_major(metric.nil_gram()),
        })
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|r| (0..m.ncols()).all(|c| r == c || m[(r, c)] == 0.0))
}

fn true_length(metric: &SplitMetric, nodes: &[GroupElement]) -> f64 {
    metric
        .path_length(&PiecewisePath::new(nodes.to_vec()))
        .map(|l| l.value)
        .unwrap_or(f64::INFINITY)
}

/// Two-loop recursion for the L-BFGS direction.
fn direction(grad: &DVector<f64>, history: &[(DVector<f64>, DVector<f64>)]) -> DVector<f64> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / y.dot(s);
        let a = rho * s.dot(&q);
        q -= y * a;
        alphas.push((a, rho));
    }
    if let Some((s, y)) = history.last() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y), (a, rho)) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q += s * (a - b);
    }
    -q
}

struct LevelOutcome {
    nodes: Vec<GroupElement>,
    best: (f64, Vec<GroupElement>),
    iterations: usize,
    stalled: bool,
}

/// Optimize one refinement level. `used` counts iterations spent so far and
/// `budget` caps the total.
fn run_level(
    metric: &SplitMetric,
    nodes: Vec<GroupElement>,
    settings: &OptimizerSettings,
    used: usize,
    budget: usize,
) -> LevelOutcome {
    let mut best = (true_length(metric, &nodes), nodes.clone());
    if nodes.len() <= 2 {
        return LevelOutcome {
            nodes,
            best,
            iterations: 0,
            stalled: true,
        };
    }
    let mut frame = Frame::new(metric, &nodes);
    let mut x = frame.initial();
    let (mut f, mut g) = frame.energy_and_gradient(&x);
    let mut history: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut stalled = false;
    while used + iterations < budget {
        iterations += 1;
        let mut d = direction(&g, &history);
        if d.dot(&g) >= 0.0 {
            history.clear();
            d = -&g;
        }
        let slope = d.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &d * step;
            let (ft, gt) = frame.energy_and_gradient(&trial);
            if ft.is_finite() && ft < f && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((xn, fn_, gn)) => {
                let s = &xn - &x;
                let y = &gn - &g;
                if s.dot(&y) > 0.0 {
                    history.push((s, y));
                    if history.len() > settings.memory {
                        history.remove(0);
                    }
                }
                x = xn;
                f = fn_;
                g = gn;
            }
            None => stalled = true,
        }
        trace.push(f);
        if trace.len() > settings.stall_window {
            let old = trace[trace.len() - 1 - settings.stall_window];
            if old - f <= settings.stall_tol * f.abs() {
                stalled = true;
            }
        }
        if stalled || (used + iterations).is_multiple_of(settings.checkpoint) {
            let current = frame.nodes(&x);
            let l = true_length(metric, &current);
            if l < best.0 {
                best = (l, current.clone());
            }
            if stalled {
                return LevelOutcome {
                    nodes: current,
                    best,
                    iterations,
                    stalled,
                };
            }
            if frame.drift(&x) > REFRAME_DRIFT {
                frame = Frame::new(metric, &current);
                x = frame.initial();
                let eg = frame.energy_and_gradient(&x);
                f = eg.0;
                g = eg.1;
                history.clear();
            }
        }
    }
    let current = frame.nodes(&x);
    let l = true_length(metric, &current);
    if l < best.0 {
        best = (l, current.clone());
    }
    LevelOutcome {
        nodes: current,
        best,
        iterations,
        stalled,
    }
}

/// Split each segment of `path` into pieces of roughly equal length, about
/// `segments` in total.
fn equalize(metric: &SplitMetric, path: &PiecewisePath, segments: usize) -> PiecewisePath {
    let lengths: Vec<f64> = path.nodes.windows(2).map(|w| metric.segment_length(&w[0], &w[1], 16)).collect();
    let total: f64 = lengths.iter().sum();
    if !(total > 0.0) {
        return path.clone();
    }
    let target = total / segments.max(1) as f64;
    let mut nodes = vec![path.nodes[0].clone()];
    for (w, l) in path.nodes.windows(2).zip(&lengths) {
        let pieces = (l / target).round().max(1.0) as usize;
        for k in 1..=pieces {
            nodes.push(lerp(&w[0], &w[1], k as f64 / pieces as f64));
        }
    }
    PiecewisePath::new(nodes)
}

/// Minimize the length of `init` (split coordinates, endpoints kept) with
/// node doubling. `budget` is rounded up to a multiple of the checkpoint
/// spacing; the returned length is the best true length seen.
pub fn optimize_path(metric: &SplitMetric, init: &PiecewisePath, settings: &OptimizerSettings, budget: usize) -> Optimized {
    let budget = budget.div_ceil(settings.checkpoint) * settings.checkpoint;
    let mut nodes = equalize(metric, init, settings.initial_segments).nodes;
    let mut used = 0;
    let mut levels = Vec::new();
    let mut best = (f64::INFINITY, nodes.clone());
    let mut previous: Option<f64> = None;
    let mut converged = false;
    loop {
        let out = run_level(metric, nodes, settings, used, budget);
        used += out.iterations;
        if out.best.0 < best.0 {
            best = out.best.clone();
        }
        let level_length = true_length(metric, &out.nodes);
        levels.push(LevelRecord {
            segments: out.nodes.len() - 1,
            iterations: out.iterations,
            length: level_length,
        });
        if !out.stalled {
            break;
        }
        if let Some(p) = previous {
            if (p - level_length).abs() <= settings.refine_tol * level_length {
                converged = true;
                break;
            }
        }
        previous = Some(level_length);
        if out.nodes.len() > settings.max_segments {
            break;
        }
        nodes = PiecewisePath::new(out.nodes).subdivided().nodes;
    }
    Optimized {
        path: PiecewisePath::new(best.1),
        length: best.0,
        levels,
        iterations: used,
        converged,
        budget_exceeded: used >= budget && !converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::tests::rank2_spec;
    use crate::group::validate;

    fn rank2() -> SplitMetric {
        let g = validate(&rank2_spec()).unwrap().0;
        SplitMetric::new(&g, DMatrix::identity(4, 4)).unwrap()
    }

    fn el(nil: &[f64], base: &[f64]) -> GroupElement {
        GroupElement::new(nil.iter().map(|h| DVector::from_element(1, *h)).collect(), DVector::from_row_slice(base))
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let m = rank2();
        let nodes = vec![
            el(&[0.0, 0.0], &[0.0, 0.0]),
            el(&[3.0, -1.0], &[0.7, 0.2]),
            el(&[5.0, 2.0], &[1.1, -0.4]),
            el(&[20.0, 2.5], &[0.5, 0.3]),
        ];
        let frame = Frame::new(&m, &nodes);
        let x = frame.initial() + DVector::from_fn(frame.len(), |j, _| 0.01 * j as f64);
        let (e, g) = frame.analytic(&frame.nodes(&x));
        let (e2, g2) = frame.finite_difference(&x, &frame.nodes(&x));
        assert!((e - e2).abs() < 1e-10 * e);
        assert!((&g - &g2).amax() < 1e-5 * g.amax(), "{g} vs {g2}");
    }

    #[test]
    fn diagonal_path_matches_general_analytic() {
        let m = rank2();
        let nodes = vec![
            el(&[0.0, 0.0], &[0.0, 0.0]),
            el(&[3.0, -1.0], &[0.7, 0.2]),
            el(&[5.0, 2.0], &[1.1, -0.4]),
            el(&[20.0, 2.5], &[0.5, 0.3]),
        ];
        let frame = Frame::new(&m, &nodes);
        let layout = frame.diagonal.as_ref().expect("rank-2 factors are diagonal");
        let x = frame.initial() + DVector::from_fn(frame.len(), |j, _| 0.03 * j as f64 - 0.05);
        let (e, g) = frame.analytic(&frame.nodes(&x));
        let (e2, g2) = frame.analytic_diagonal(layout, &x);
        assert!((e - e2).abs() < 1e-12 * e);
        assert!((&g - &g2).amax() < 1e-10 * g.amax(), "{g} vs {g2}");
    }

    #[test]
    fn straight_base_segment_is_kept() {
        let m = rank2();
        let a = el(&[0.0, 0.0], &[0.0, 0.0]);
        let b = el(&[0.0, 0.0], &[3.0, 4.0]);
        let out = optimize_path(&m, &PiecewisePath::straight(&a, &b, 1), &OptimizerSettings::default(), 400);
        assert!((out.length - 5.0).abs() < 1e-9);
    }

    #[test]
    fn descent_shortens_a_nil_displacement() {
        let m = rank2();
        let a = el(&[0.0, 0.0], &[0.0, 0.0]);
        let b = el(&[200.0, 0.0], &[0.0, 0.0]);
        let init = PiecewisePath::straight(&a, &b, 8);
        let start = m.path_length(&init).unwrap().value;
        let out = optimize_path(&m, &init, &OptimizerSettings::default(), 4000);
        // Hyperbolic plane: d = 2 asinh(x/2) for a horocyclic displacement x.
        let exact = 2.0 * (100.0_f64).asinh();
        assert!(out.length < start);
        assert!(out.length >= exact - 1e-9);
        assert!(out.length <= exact * 1.01, "{} vs {}", out.length, exact);
    }

    #[test]
    fn more_budget_never_hurts() {
        let m = rank2();
        let a = el(&[0.0, 0.0], &[0.0, 0.0]);
        let b = el(&[50.0, -30.0], &[1.0, 2.0]);
        let init = PiecewisePath::straight(&a, &b, 8);
        let mut last = f64::INFINITY;
        for budget in [25, 50, 100, 200, 400] {
            let out = optimize_path(&m, &init, &OptimizerSettings::default(), budget);
            assert!(out.length <= last);
            last = out.length;
        }
    }
}
