//! Distance estimates and sampling experiments.
//!
//! Pairs are given in standard coordinates; each metric converts them to
//! its own split frame before measuring.

mod optimize;
pub mod report;

pub use optimize::{optimize_path, LevelRecord, OptimizerSettings, Optimized};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxpath::{rho, BoxPathError};
use crate::group::{GroupElement, SolTypeGroup};
use crate::linalg::linear_fit;
use crate::metric::{change_of_metric, delta_distance, MetricError, SplitMetric};
use crate::path::PiecewisePath;

/// Default iteration budget per initialization.
pub const DEFAULT_BUDGET: usize = 3000;
/// Slope band for "bounded" residual series.
pub const SLOPE_BAND: f64 = 0.02;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    BoxPath(#[from] BoxPathError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("metrics live on groups of different shape")]
    GroupMismatch,
    #[error("empty sample")]
    EmptySample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    Straight,
    BoxPath,
    Exact,
}

#[derive(Debug, Clone)]
pub struct DistanceEstimate {
    /// Length of the best optimized path.
    pub upper: f64,
    /// Base distance, a 1-Lipschitz projection bound.
    pub lower: f64,
    pub method: Initialization,
    pub levels: Vec<LevelRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub budget_exceeded: bool,
    /// Best path, in split coordinates.
    pub path: PiecewisePath,
}

/// Upper and lower bounds for `d(p, q)`, with `p` and `q` in split
/// coordinates.
pub fn estimate_distance(
    p: &GroupElement,
    q: &GroupElement,
    metric: &SplitMetric,
    settings: &OptimizerSettings,
    budget: usize,
) -> Result<DistanceEstimate, HarnessError> {
    let group = metric.group();
    let r = group.relative(p, q);
    let lower = metric.base_norm(&r.base);
    if r.nil_is_zero() {
        // Base cosets are totally geodesic.
        return Ok(DistanceEstimate {
            upper: lower,
            lower,
            method: Initialization::Exact,
            levels: Vec::new(),
            iterations: 0,
            converged: true,
            budget_exceeded: false,
            path: PiecewisePath::new(vec![p.clone(), q.clone()]),
        });
    }
    let straight = PiecewisePath::straight(p, q, settings.initial_segments);
    let boxed = rho(p, q, metric)?.path.to_path();
    let single_level = OptimizerSettings {
        max_segments: settings.initial_segments,
        ..settings.clone()
    };
    let runs = vec![
        (Initialization::Straight, optimize_path(metric, &straight, &single_level, budget.div_ceil(4))),
        (Initialization::BoxPath, optimize_path(metric, &boxed, settings, budget)),
    ];
    let (method, best) = runs
        .into_iter()
        .reduce(|a, b| if b.1.length < a.1.length { b } else { a })
        .expect("two initializations");
    Ok(DistanceEstimate {
        upper: best.length.max(lower),
        lower,
        method,
        levels: best.levels,
        iterations: best.iterations,
        converged: best.converged,
        budget_exceeded: best.budget_exceeded,
        path: best.path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Base displacement plus nil displacement in every factor.
    Mixed,
    /// Base displacement only.
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub pairs_per_separation: usize,
    pub separations: Vec<f64>,
    pub seed: u64,
    pub kinds: Vec<PairKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub id: usize,
    pub separation: f64,
    pub kind: PairKind,
    /// Standard coordinates.
    pub p: GroupElement,
    pub q: GroupElement,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if v.norm() > 1e-12 {
            return v;
        }
    }
}

/// `p = identity`, `q = (h, v)` with `v` uniform on the sphere of radius `s`
/// and, for mixed pairs, each `hᵢ` of coset norm log-uniform in
/// `[e^{s−1}, e^s]` in a uniform random direction.
pub fn sample_pairs(metric: &SplitMetric, spec: &SampleSpec) -> Vec<PairSample> {
    let group = metric.group();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    for &s in &spec.separations {
        for k in 0..spec.pairs_per_separation {
            let kind = spec.kinds[k % spec.kinds.len().max(1)];
            let y = gaussian(&mut rng, group.rank());
            let v = metric.from_orthonormal_base(&(&y * (s / y.norm())));
            let nil = group
                .factors()
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let u = gaussian(&mut rng, f.dim());
                    let c = rng.random_range((s - 1.0)..=s).exp();
                    match kind {
                        PairKind::Mixed => &u * (c / metric.coset_norm(i, &u)),
                        PairKind::Base => DVector::zeros(f.dim()),
                    }
                })
                .collect();
            let q = metric.from_split(&GroupElement::new(nil, v));
            out.push(PairSample {
                id: out.len(),
                separation: s,
                kind,
                p: group.identity(),
                q,
            });
        }
    }
    out
}

/// Pairs `(identity, (0, s·u))` along a fixed base direction `u`.
pub fn directional_pairs(group: &SolTypeGroup, direction: &DVector<f64>, separations: &[f64]) -> Vec<PairSample> {
    separations
        .iter()
        .enumerate()
        .map(|(id, &s)| PairSample {
            id,
            separation: s,
            kind: PairKind::Base,
            p: group.identity(),
            q: group.base_element(direction * s),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeasurement {
    pub lower: f64,
    pub upper: f64,
    pub rho: f64,
    pub converged: bool,
    pub budget_exceeded: bool,
}

/// `d̂` and `ρ` for a pair in standard coordinates.
pub fn measure_pair(
    p: &GroupElement,
    q: &GroupElement,
    metric: &SplitMetric,
    settings: &OptimizerSettings,
    budget: usize,
) -> Result<PairMeasurement, HarnessError> {
    let (ps, qs) = (metric.to_split(p), metric.to_split(q));
    let est = estimate_distance(&ps, &qs, metric, settings, budget)?;
    let r = rho(&ps, &qs, metric)?;
    Ok(PairMeasurement {
        lower: est.lower,
        upper: est.upper,
        rho: r.length,
        converged: est.converged,
        budget_exceeded: est.budget_exceeded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub pair: usize,
    pub separation: f64,
    pub d1_lower: f64,
    pub d1_upper: f64,
    pub rho1: f64,
    pub d2_lower: f64,
    pub d2_upper: f64,
    pub rho2: f64,
    /// `(d̂₂ − λ₁d̂₁)⁺` and `(λₖd̂₁ − d̂₂)⁺` with stretch factors.
    pub residual_upper_stretch: f64,
    pub residual_lower_stretch: f64,
    /// The same with raw eigenvalues of `AᵀA`.
    pub residual_upper_eigen: f64,
    pub residual_lower_eigen: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedBound {
    pub convention: String,
    pub lambda_top: f64,
    pub lambda_bottom: f64,
    /// Largest observed violation of `d₂ ≤ λ₁d₁` and of `λₖd₁ ≤ d₂`.
    pub c_upper: f64,
    pub c_lower: f64,
    pub slope_upper: f64,
    pub slope_lower: f64,
}

impl FittedBound {
    pub fn bounded(&self) -> bool {
        self.slope_upper.abs() <= SLOPE_BAND && self.slope_lower.abs() <= SLOPE_BAND
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub eigenvalues: Vec<f64>,
    pub stretch_factors: Vec<f64>,
    pub fits: Vec<FittedBound>,
    pub max_separation: f64,
    /// Rows with `lower ≤ ρ` and `lower ≤ upper` for both metrics.
    pub consistent: bool,
}

impl ComparisonReport {
    pub fn fit(&self, convention: &str) -> Option<&FittedBound> {
        self.fits.iter().find(|f| f.convention == convention)
    }
}

fn check_shapes(m1: &SplitMetric, m2: &SplitMetric) -> Result<(), HarnessError> {
    let (g1, g2) = (m1.group(), m2.group());
    if g1.rank() != g2.rank() || g1.n_factors() != g2.n_factors() || g1.nil_dim() != g2.nil_dim() {
        return Err(HarnessError::GroupMismatch);
    }
    Ok(())
}

fn measure_all(
    pairs: &[PairSample],
    metric: &SplitMetric,
    settings: &OptimizerSettings,
    budget: usize,
) -> Result<Vec<PairMeasurement>, HarnessError> {
    pairs
        .par_iter()
        .map(|s| measure_pair(&s.p, &s.q, metric, settings, budget))
        .collect()
}

/// Sample pairs and fit the additive constants of
/// `λₖd₁ − C ≤ d₂ ≤ λ₁d₁ + C` under both conventions for `λ`.
pub fn compare_metrics(
    m1: &SplitMetric,
    m2: &SplitMetric,
    spec: &SampleSpec,
    settings: &OptimizerSettings,
    budget: usize,
) -> Result<ComparisonReport, HarnessError> {
    check_shapes(m1, m2)?;
    let pairs = sample_pairs(m1, spec);
    if pairs.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    let a = measure_all(&pairs, m1, settings, budget)?;
    let b = measure_all(&pairs, m2, settings, budget)?;
    let change = change_of_metric(m1, m2);
    let top = |v: &[f64]| v.first().copied().unwrap_or(1.0);
    let bottom = |v: &[f64]| v.last().copied().unwrap_or(1.0);
    let (s1, sk) = (top(&change.stretch_factors), bottom(&change.stretch_factors));
    let (e1, ek) = (top(&change.eigenvalues), bottom(&change.eigenvalues));
    let rows: Vec<ComparisonRow> = pairs
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(s, (x, y))| ComparisonRow {
            pair: s.id,
            separation: s.separation,
            d1_lower: x.lower,
            d1_upper: x.upper,
            rho1: x.rho,
            d2_lower: y.lower,
            d2_upper: y.upper,
            rho2: y.rho,
            residual_upper_stretch: (y.upper - s1 * x.upper).max(0.0),
            residual_lower_stretch: (sk * x.upper - y.upper).max(0.0),
            residual_upper_eigen: (y.upper - e1 * x.upper).max(0.0),
            residual_lower_eigen: (ek * x.upper - y.upper).max(0.0),
            flagged: x.budget_exceeded || y.budget_exceeded,
        })
        .collect();
    let seps: Vec<f64> = rows.iter().map(|r| r.separation).collect();
    let fit = |name: &str, lt: f64, lb: f64, up: fn(&ComparisonRow) -> f64, lo: fn(&ComparisonRow) -> f64| {
        let u: Vec<f64> = rows.iter().map(up).collect();
        let l: Vec<f64> = rows.iter().map(lo).collect();
        FittedBound {
            convention: name.into(),
            lambda_top: lt,
            lambda_bottom: lb,
            c_upper: u.iter().copied().fold(0.0, f64::max),
            c_lower: l.iter().copied().fold(0.0, f64::max),
            slope_upper: linear_fit(&seps, &u).0,
            slope_lower: linear_fit(&seps, &l).0,
        }
    };
    let fits = vec![
        fit("stretch", s1, sk, |r| r.residual_upper_stretch, |r| r.residual_lower_stretch),
        fit("eigenvalue", e1, ek, |r| r.residual_upper_eigen, |r| r.residual_lower_eigen),
    ];
    let consistent = rows
        .iter()
        .all(|r| r.d1_lower <= r.d1_upper && r.d1_lower <= r.rho1 && r.d2_lower <= r.d2_upper && r.d2_lower <= r.rho2);
    Ok(ComparisonReport {
        rows,
        eigenvalues: change.eigenvalues,
        stretch_factors: change.stretch_factors,
        fits,
        max_separation: seps.iter().copied().fold(0.0, f64::max),
        consistent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoRow {
    pub pair: usize,
    pub separation: f64,
    pub lower: f64,
    pub upper: f64,
    pub rho: f64,
    pub gap_upper: f64,
    pub gap_lower: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoReport {
    pub rows: Vec<RhoRow>,
    pub slope: f64,
    pub intercept: f64,
    pub min_gap: f64,
    pub max_gap: f64,
    /// `ρ ≥ lower` on every pair.
    pub above_lower: bool,
}

impl RhoReport {
    pub fn bounded(&self) -> bool {
        self.slope.abs() <= SLOPE_BAND
    }
}

/// `ρ − d̂` over sampled pairs.
pub fn rho_vs_distance(
    metric: &SplitMetric,
    spec: &SampleSpec,
    settings: &OptimizerSettings,
    budget: usize,
) -> Result<RhoReport, HarnessError> {
    let pairs = sample_pairs(metric, spec);
    if pairs.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    let m = measure_all(&pairs, metric, settings, budget)?;
    let rows: Vec<RhoRow> = pairs
        .iter()
        .zip(&m)
        .map(|(s, x)| RhoRow {
            pair: s.id,
            separation: s.separation,
            lower: x.lower,
            upper: x.upper,
            rho: x.rho,
            gap_upper: x.rho - x.upper,
            gap_lower: x.rho - x.lower,
            flagged: x.budget_exceeded,
        })
        .collect();
    let seps: Vec<f64> = rows.iter().map(|r| r.separation).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap_upper).collect();
    let (slope, intercept) = linear_fit(&seps, &gaps);
    Ok(RhoReport {
        above_lower: rows.iter().all(|r| r.rho >= r.lower),
        min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
        max_gap: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        rows,
        slope,
        intercept,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub pair: usize,
    pub separation: f64,
    pub d1: f64,
    pub d2: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub closed_form: f64,
    /// `log(max d₂/d₁ ÷ min d₂/d₁)` over the sampled pairs.
    pub empirical: f64,
    pub relative_discrepancy: f64,
    pub rows: Vec<RatioRow>,
}

/// Compare `Δ(m1, m2)` with the spread of sampled distance ratios.
pub fn delta_vs_empirical(
    m1: &SplitMetric,
    m2: &SplitMetric,
    spec: &SampleSpec,
    settings: &OptimizerSettings,
    budget: usize,
) -> Result<DeltaReport, HarnessError> {
    check_shapes(m1, m2)?;
    let pairs = sample_pairs(m1, spec);
    if pairs.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    let a = measure_all(&pairs, m1, settings, budget)?;
    let b = measure_all(&pairs, m2, settings, budget)?;
    let rows: Vec<RatioRow> = pairs
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(s, (x, y))| RatioRow {
            pair: s.id,
            separation: s.separation,
            d1: x.upper,
            d2: y.upper,
            ratio: y.upper / x.upper,
        })
        .collect();
    let hi = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let closed_form = delta_distance(m1, m2);
    let empirical = (hi / lo).ln();
    let relative_discrepancy = if closed_form == 0.0 {
        empirical.abs()
    } else {
        (empirical - closed_form).abs() / closed_form
    };
    Ok(DeltaReport {
        closed_form,
        empirical,
        relative_discrepancy,
        rows,
    })
}

#[cfg(test)]
mod tests;
