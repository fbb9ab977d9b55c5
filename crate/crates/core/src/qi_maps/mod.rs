//! Product quasi-isometries `L_x ∘ (∏ fᵢ) ∘ σ`, rough-isometry tests and
//! box-path pushforward.
//!
//! Maps act on whatever coordinates they are handed; the harness entry points
//! below work in the split frame of the metric.

mod file;

pub use file::{AffineSpec, Declared, QiSpec, SymmetrySpec};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxpath::{BoxPath, BoxSegment};
use crate::group::{GroupElement, SolTypeGroup};
use crate::harness::{estimate_distance, sample_pairs, HarnessError, OptimizerSettings, SampleSpec, SLOPE_BAND};
use crate::linalg::linear_fit;
use crate::metric::SplitMetric;

/// Tolerance for `σ*αᵢ = α_π(i)` and for the derivation and bracket checks,
/// relative to the size of the compared objects.
pub const ROOT_TOL: f64 = 1e-12;
/// Smallest slope accepted as growth.
pub const NOT_ROUGH_SLOPE: f64 = 0.1;
/// Distinct separations needed before growth is reported.
pub const MIN_SCALES: usize = 5;

#[derive(Debug, Error)]
pub enum QiError {
    #[error("invalid symmetry: {reason} (residual {residual:.3e})")]
    InvalidSymmetry { reason: String, residual: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("box path pushforward needs a trivial symmetry")]
    NontrivialSymmetry,
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub linear: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            linear: DMatrix::identity(dim, dim),
            offset: DVector::zeros(dim),
        }
    }

    pub fn apply(&self, h: &DVector<f64>) -> DVector<f64> {
        &self.linear * h + &self.offset
    }
}

/// Automorphism `(h, v) ↦ (h', Mv)` with `h'_{π(i)} = Sᵢ hᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Symmetry {
    pub permutation: Vec<usize>,
    pub base_matrix: DMatrix<f64>,
    pub nil_maps: Vec<DMatrix<f64>>,
}

impl Symmetry {
    pub fn identity(group: &SolTypeGroup) -> Self {
        Self {
            permutation: (0..group.n_factors()).collect(),
            base_matrix: DMatrix::identity(group.rank(), group.rank()),
            nil_maps: group.factors().iter().map(|f| DMatrix::identity(f.dim(), f.dim())).collect(),
        }
    }

    pub fn is_trivial(&self) -> bool {
        let id = |m: &DMatrix<f64>| m.is_square() && *m == DMatrix::identity(m.nrows(), m.nrows());
        self.permutation.iter().enumerate().all(|(i, &p)| i == p) && id(&self.base_matrix) && self.nil_maps.iter().all(id)
    }

    pub fn apply(&self, g: &GroupElement) -> GroupElement {
        let mut nil = g.nil.clone();
        for (i, &p) in self.permutation.iter().enumerate() {
            nil[p] = &self.nil_maps[i] * &g.nil[i];
        }
        GroupElement::new(nil, &self.base_matrix * &g.base)
    }

    /// `max_i ‖Mᵀα_π(i) − αᵢ‖∞`.
    pub fn root_residual(&self, group: &SolTypeGroup) -> f64 {
        let mt = self.base_matrix.transpose();
        self.permutation
            .iter()
            .enumerate()
            .map(|(i, &p)| (&mt * group.root(p) - group.root(i)).amax())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self, group: &SolTypeGroup) -> Result<(), QiError> {
        let n = group.n_factors();
        let k = group.rank();
        let invalid = |reason: String, residual: f64| Err(QiError::InvalidSymmetry { reason, residual });
        if self.permutation.len() != n || self.nil_maps.len() != n {
            return Err(QiError::Shape(format!("symmetry lists {} factors, group has {n}", self.permutation.len())));
        }
        if self.base_matrix.shape() != (k, k) {
            return Err(QiError::Shape(format!("base matrix is {:?}, rank is {k}", self.base_matrix.shape())));
        }
        let mut seen = vec![false; n];
        for &p in &self.permutation {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return invalid(format!("{:?} is not a permutation", self.permutation), f64::NAN);
            }
        }
        let root_scale = group.roots().iter().map(|r| r.amax()).fold(1.0, f64::max);
        let r = self.root_residual(group);
        if r > ROOT_TOL * root_scale {
            return invalid("base matrix does not permute the roots".into(), r);
        }
        if self.base_matrix.clone().svd(false, false).singular_values.min() <= ROOT_TOL {
            return invalid("base matrix is singular".into(), 0.0);
        }
        for (i, &p) in self.permutation.iter().enumerate() {
            let (fi, fp) = (group.factor(i), group.factor(p));
            let s = &self.nil_maps[i];
            if fi.dim() != fp.dim() || s.shape() != (fi.dim(), fi.dim()) {
                return Err(QiError::Shape(format!("nil map {i} is {:?}, factors have dims {} and {}", s.shape(), fi.dim(), fp.dim())));
            }
            if s.clone().svd(false, false).singular_values.min() <= ROOT_TOL {
                return invalid(format!("nil map {i} is singular"), 0.0);
            }
            let scale = s.amax().max(1.0) * fi.derivation().amax().max(fp.derivation().amax()).max(1.0);
            let d = (s * fi.derivation() - fp.derivation() * s).amax();
            if d > ROOT_TOL * scale {
                return invalid(format!("nil map {i} does not intertwine the derivations"), d);
            }
            let basis = |a: usize| DVector::from_fn(fi.dim(), |r, _| if r == a { 1.0 } else { 0.0 });
            for a in 0..fi.dim() {
                for b in a + 1..fi.dim() {
                    let (x, y) = (basis(a), basis(b));
                    let lhs = s * fi.bracket(&x, &y);
                    let rhs = fp.bracket(&(s * &x), &(s * &y));
                    let e = (lhs - &rhs).amax();
                    if e > ROOT_TOL * scale * s.amax().max(1.0) {
                        return invalid(format!("nil map {i} is not a Lie algebra map"), e);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductQI {
    pub translation: GroupElement,
    pub factor_maps: Vec<AffineMap>,
    pub symmetry: Symmetry,
    pub declared: Declared,
}

fn matrix(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>, QiError> {
    if data.len() != rows * cols {
        return Err(QiError::Shape(format!("{what} has {} entries, expected {}", data.len(), rows * cols)));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl ProductQI {
    pub fn identity(group: &SolTypeGroup) -> Self {
        Self {
            translation: group.identity(),
            factor_maps: group.factors().iter().map(|f| AffineMap::identity(f.dim())).collect(),
            symmetry: Symmetry::identity(group),
            declared: Declared::default(),
        }
    }

    /// Left translation by `x`.
    pub fn translation(group: &SolTypeGroup, x: GroupElement) -> Self {
        Self {
            translation: x,
            ..Self::identity(group)
        }
    }

    pub fn from_spec(group: &SolTypeGroup, spec: &QiSpec) -> Result<Self, QiError> {
        let mut qi = Self::identity(group);
        qi.declared = spec.declared;
        if let Some(x) = &spec.translation {
            group.check_element(x).map_err(|e| QiError::Shape(e.to_string()))?;
            qi.translation = x.clone();
        }
        if let Some(maps) = &spec.factor_maps {
            if maps.len() != group.n_factors() {
                return Err(QiError::Shape(format!("{} factor maps for {} factors", maps.len(), group.n_factors())));
            }
            qi.factor_maps = maps
                .iter()
                .zip(group.factors())
                .enumerate()
                .map(|(i, (m, f))| {
                    let linear = matrix(f.dim(), f.dim(), &m.linear, &format!("factor map {i}"))?;
                    if m.offset.len() != f.dim() {
                        return Err(QiError::Shape(format!("factor map {i} offset has {} entries", m.offset.len())));
                    }
                    Ok(AffineMap {
                        linear,
                        offset: DVector::from_vec(m.offset.clone()),
                    })
                })
                .collect::<Result<_, _>>()?;
        }
        if let Some(s) = &spec.symmetry {
            let k = group.rank();
            if s.nil_maps.len() != group.n_factors() {
                return Err(QiError::Shape(format!("{} nil maps for {} factors", s.nil_maps.len(), group.n_factors())));
            }
            qi.symmetry = Symmetry {
                permutation: s.permutation.clone(),
                base_matrix: matrix(k, k, &s.base_matrix, "base matrix")?,
                nil_maps: s
                    .nil_maps
                    .iter()
                    .zip(group.factors())
                    .enumerate()
                    .map(|(i, (m, f))| matrix(f.dim(), f.dim(), m, &format!("nil map {i}")))
                    .collect::<Result<_, _>>()?,
            };
        }
        qi.symmetry.validate(group)?;
        Ok(qi)
    }

    pub fn to_spec(&self) -> QiSpec {
        let row_major = |m: &DMatrix<f64>| m.transpose().iter().copied().collect::<Vec<f64>>();
        QiSpec {
            name: None,
            translation: Some(self.translation.clone()),
            factor_maps: Some(
                self.factor_maps
                    .iter()
                    .map(|f| AffineSpec {
                        linear: row_major(&f.linear),
                        offset: f.offset.iter().copied().collect(),
                    })
                    .collect(),
            ),
            symmetry: Some(SymmetrySpec {
                permutation: self.symmetry.permutation.clone(),
                base_matrix: row_major(&self.symmetry.base_matrix),
                nil_maps: self.symmetry.nil_maps.iter().map(row_major).collect(),
            }),
            declared: self.declared,
        }
    }

    /// `L_x ∘ (∏ fᵢ) ∘ σ`.
    pub fn apply(&self, group: &SolTypeGroup, g: &GroupElement) -> GroupElement {
        let s = self.symmetry.apply(g);
        let f = GroupElement::new(self.factor_maps.iter().zip(&s.nil).map(|(m, h)| m.apply(h)).collect(), s.base);
        group.mul(&self.translation, &f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    RoughIsometry,
    NotRoughIsometry,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiRow {
    pub pair: usize,
    pub series: String,
    pub separation: f64,
    pub d: f64,
    pub d_image: f64,
    pub difference: f64,
    pub relative: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFit {
    pub name: String,
    /// Base direction of a directional probe.
    pub direction: Option<Vec<f64>>,
    pub slope: f64,
    pub intercept: f64,
    pub scales: usize,
    pub max_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub series: String,
    /// Base direction of `q − p` for the witness pairs.
    pub direction: Vec<f64>,
    pub slope: f64,
    /// Row indices of the witness pairs.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughIsometryReport {
    pub rows: Vec<QiRow>,
    pub series: Vec<SeriesFit>,
    pub max_relative: f64,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
}

impl RoughIsometryReport {
    pub fn series(&self, name: &str) -> Option<&SeriesFit> {
        self.series.iter().find(|s| s.name == name)
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Compare `d̂(qi·p, qi·q)` with `d̂(p, q)` on sampled pairs and on base
/// probes along each coordinate axis at the sample separations.
pub fn test_rough_isometry(
    qi: &ProductQI,
    metric: &SplitMetric,
    spec: &SampleSpec,
    settings: &OptimizerSettings,
    budget: usize,
) -> Result<RoughIsometryReport, QiError> {
    let group = metric.group();
    qi.symmetry.validate(group)?;

    let mut pairs: Vec<(String, f64, GroupElement, GroupElement)> = sample_pairs(metric, spec)
        .into_iter()
        .map(|s| ("random".to_string(), s.separation, metric.to_split(&s.p), metric.to_split(&s.q)))
        .collect();
    let mut directions = Vec::new();
    for j in 0..group.rank() {
        let axis = DVector::from_fn(group.rank(), |r, _| if r == j { 1.0 } else { 0.0 });
        let u = &axis / metric.base_norm(&axis);
        let name = format!("base_{j}");
        for &s in &spec.separations {
            let q = group.base_element(&u * s);
            pairs.push((name.clone(), s, group.identity(), q));
        }
        directions.push((name, u));
    }

    let measured = pairs
        .par_iter()
        .map(|(_, _, p, q)| {
            let d = estimate_distance(p, q, metric, settings, budget)?;
            let (qp, qq) = (qi.apply(group, p), qi.apply(group, q));
            let e = estimate_distance(&qp, &qq, metric, settings, budget)?;
            Ok((d, e))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let rows: Vec<QiRow> = pairs
        .iter()
        .zip(&measured)
        .enumerate()
        .map(|(pair, ((series, s, _, _), (d, e)))| {
            let difference = (e.upper - d.upper).abs();
            QiRow {
                pair,
                series: series.clone(),
                separation: *s,
                d: d.upper,
                d_image: e.upper,
                difference,
                relative: if d.upper > 0.0 { difference / d.upper } else { difference },
                flagged: d.budget_exceeded || e.budget_exceeded,
            }
        })
        .collect();

    let mut names: Vec<(String, Option<DVector<f64>>)> = Vec::new();
    if rows.iter().any(|r| r.series == "random") {
        names.push(("random".into(), None));
    }
    names.extend(directions.into_iter().map(|(n, u)| (n, Some(u))));
    let series: Vec<SeriesFit> = names
        .iter()
        .map(|(name, u)| {
            let rs: Vec<&QiRow> = rows.iter().filter(|r| &r.series == name).collect();
            let x: Vec<f64> = rs.iter().map(|r| r.separation).collect();
            let y: Vec<f64> = rs.iter().map(|r| r.difference).collect();
            let (slope, intercept) = linear_fit(&x, &y);
            SeriesFit {
                name: name.clone(),
                direction: u.as_ref().map(|u| u.iter().copied().collect()),
                slope,
                intercept,
                scales: distinct(x.into_iter()),
                max_difference: y.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect();

    let max_relative = rows.iter().map(|r| r.relative).fold(0.0, f64::max);
    let steepest = series
        .iter()
        .filter(|s| s.scales >= MIN_SCALES)
        .max_by(|a, b| a.slope.total_cmp(&b.slope));
    let (verdict, witness) = match steepest {
        _ if series.iter().all(|s| s.slope.abs() <= SLOPE_BAND) => (Verdict::RoughIsometry, None),
        Some(s) if s.slope >= NOT_ROUGH_SLOPE => {
            let members: Vec<usize> = rows.iter().filter(|r| r.series == s.name).map(|r| r.pair).collect();
            let direction = match &s.direction {
                Some(u) => u.clone(),
                None => {
                    let worst = members
                        .iter()
                        .copied()
                        .max_by(|&a, &b| rows[a].difference.total_cmp(&rows[b].difference))
                        .expect("non-empty series");
                    let (_, _, p, q) = &pairs[worst];
                    let b = &q.base - &p.base;
                    let n = metric.base_norm(&b);
                    (if n > 0.0 { b / n } else { b }).iter().copied().collect()
                }
            };
            let witness = Witness {
                series: s.name.clone(),
                direction,
                slope: s.slope,
                rows: members,
            };
            (Verdict::NotRoughIsometry, Some(witness))
        }
        _ => (Verdict::Inconclusive, None),
    };

    Ok(RoughIsometryReport {
        rows,
        series,
        max_relative,
        verdict,
        witness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpShift {
    pub segment: usize,
    pub factor: usize,
    /// Upper bounds for `d(from, qi·from)` and `d(to, qi·to)`.
    pub from_shift: f64,
    pub to_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pushforward {
    pub path: BoxPath,
    pub length_before: f64,
    pub length_after: f64,
    pub increase: f64,
    /// `n (K + C)` from the declared constants.
    pub bound: f64,
    pub within_bound: bool,
    pub shifts: Vec<JumpShift>,
}

/// Length of the path that moves along the one-parameter subgroup of the
/// nil part of `a⁻¹b` and then along the base: an upper bound for `d(a, b)`.
pub fn shift_bound(metric: &SplitMetric, a: &GroupElement, b: &GroupElement) -> f64 {
    let r = metric.group().relative(a, b);
    metric.nil_norm(&r.nil) + metric.base_norm(&r.base)
}

/// Image of a box path under a map with trivial symmetry. Base segments map
/// to base segments; each jump is replaced by the straight jump between the
/// image endpoints.
pub fn boxpath_pushforward(qi: &ProductQI, path: &BoxPath, metric: &SplitMetric) -> Result<Pushforward, QiError> {
    if !qi.symmetry.is_trivial() {
        return Err(QiError::NontrivialSymmetry);
    }
    let group = metric.group();
    let map = |g: &GroupElement| qi.apply(group, g);
    let mut shifts = Vec::new();
    let segments: Vec<BoxSegment> = path
        .segments
        .iter()
        .enumerate()
        .map(|(k, s)| match s {
            BoxSegment::Base { nodes } => BoxSegment::Base {
                nodes: nodes.iter().map(map).collect(),
            },
            BoxSegment::Jump { factor, from, to, .. } => {
                let (a, b) = (map(from), map(to));
                shifts.push(JumpShift {
                    segment: k,
                    factor: *factor,
                    from_shift: shift_bound(metric, from, &a),
                    to_shift: shift_bound(metric, to, &b),
                });
                let cost = metric.coset_norm(*factor, &group.relative(&a, &b).nil[*factor]);
                BoxSegment::Jump {
                    factor: *factor,
                    from: a,
                    to: b,
                    cost,
                }
            }
        })
        .collect();
    let image = BoxPath {
        start: map(&path.start),
        end: map(&path.end),
        segments,
    };
    let length_before = path.length(metric);
    let length_after = image.length(metric);
    let bound = group.n_factors() as f64 * (qi.declared.k + qi.declared.c);
    Ok(Pushforward {
        path: image,
        length_before,
        length_after,
        increase: length_after - length_before,
        bound,
        within_bound: length_after - length_before <= bound,
        shifts,
    })
}
