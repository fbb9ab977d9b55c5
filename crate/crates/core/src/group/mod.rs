//! Higher-rank Sol-type groups `G = ∏ Nᵢ ⋊ ℝᵏ`.
//!
//! Elements are stored as `(h, v)` where `h` holds exponential coordinates
//! in each nilpotent factor and `v ∈ ℝᵏ`. The product is
//! `(h, v)·(h', v') = (h · φ_v(h'), v + v')` with `φ_v(h')ᵢ = e^{αᵢ(v)Dᵢ} h'ᵢ`,
//! and the product inside each `Nᵢ` is the step-two Baker–Campbell–Hausdorff
//! formula `X + Y + ½[X, Y]`.

mod file;
mod jordan;

pub use file::{FactorSpec, GroupSpec};
pub use jordan::{absolute_jordan_form, AbsoluteJordanForm, JordanBlock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::expm_scaled;

const IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("factor {factor}: derivation identity fails on basis pair ({i}, {j}), residual {residual:.3e}")]
    NonDerivation {
        factor: usize,
        i: usize,
        j: usize,
        residual: f64,
    },
    #[error("factor {factor}: eigenvalue {re}{im:+}i has non-positive real part")]
    NonPositiveEigenvalue { factor: usize, re: f64, im: f64 },
    #[error("factor {factor}: Jacobi identity fails on basis triple ({i}, {j}, {k}), residual {residual:.3e}")]
    JacobiViolation {
        factor: usize,
        i: usize,
        j: usize,
        k: usize,
        residual: f64,
    },
    #[error("factor {factor}: structure constants for [e{i}, e{j}] are not antisymmetric")]
    NotAntisymmetric { factor: usize, i: usize, j: usize },
    #[error("factor {factor}: Lie algebra is not nilpotent")]
    NotNilpotent { factor: usize },
    #[error("factor {factor}: nilpotency step {step} is not supported (maximum 2)")]
    UnsupportedStep { factor: usize, step: usize },
    #[error("rank {0} is below 2")]
    RankTooSmall(usize),
    #[error("malformed group data: {0}")]
    Shape(String),
    #[error("ill-conditioned Jordan computation: {0}")]
    IllConditioned(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A simply connected nilpotent Lie algebra together with a contracting
/// derivation.
#[derive(Debug, Clone, PartialEq)]
pub struct NilpotentFactor {
    dim: usize,
    /// Nonzero structure constants `(i, j, k, c)` with `[e_i, e_j] = c·e_k`,
    /// both orders stored.
    brackets: Vec<(usize, usize, usize, f64)>,
    derivation: DMatrix<f64>,
    step: usize,
}

impl NilpotentFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn derivation(&self) -> &DMatrix<f64> {
        &self.derivation
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_abelian(&self) -> bool {
        self.brackets.is_empty()
    }

    /// Lie bracket `[x, y]`.
    pub fn bracket(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for &(i, j, k, c) in &self.brackets {
            out[k] += c * x[i] * y[j];
        }
        out
    }

    /// Matrix of `ad_x = [x, ·]`.
    pub fn ad(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, k, c) in &self.brackets {
            out[(k, j)] += c * x[i];
        }
        out
    }

    /// Group product in exponential coordinates (step ≤ 2).
    pub fn bch(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        if self.is_abelian() {
            x + y
        } else {
            x + y + self.bracket(x, y) * 0.5
        }
    }

    /// `e^{t D}`.
    pub fn flow(&self, t: f64) -> DMatrix<f64> {
        expm_scaled(&self.derivation, t)
    }

    pub(crate) fn with_derivation(&self, derivation: DMatrix<f64>) -> Self {
        Self {
            derivation,
            ..self.clone()
        }
    }

    pub(crate) fn structure_triples(&self) -> Vec<(usize, usize, usize, f64)> {
        self.brackets
            .iter()
            .copied()
            .filter(|&(i, j, _, _)| i < j)
            .collect()
    }

    /// Basis-level validation of a raw factor; returns the factor and its
    /// residuals.
    fn from_raw(
        index: usize,
        dim: usize,
        derivation: DMatrix<f64>,
        triples: &[(usize, usize, usize, f64)],
    ) -> Result<(Self, FactorResiduals), GroupError> {
        if dim == 0 || derivation.nrows() != dim || derivation.ncols() != dim {
            return Err(GroupError::Shape(format!(
                "factor {index}: derivation must be {dim}×{dim}"
            )));
        }
        if derivation.iter().any(|x| !x.is_finite()) {
            return Err(GroupError::Shape(format!(
                "factor {index}: non-finite derivation entry"
            )));
        }
        let mut dense = vec![0.0; dim * dim * dim];
        let mut set = vec![false; dim * dim * dim];
        let idx = |i: usize, j: usize, k: usize| (i * dim + j) * dim + k;
        for &(i, j, k, c) in triples {
            if i >= dim || j >= dim || k >= dim || !c.is_finite() {
                return Err(GroupError::Shape(format!(
                    "factor {index}: bad structure constant ({i}, {j}, {k})"
                )));
            }
            if i == j && c != 0.0 {
                return Err(GroupError::NotAntisymmetric { factor: index, i, j });
            }
            let (a, b) = (idx(i, j, k), idx(j, i, k));
            if (set[a] && dense[a] != c) || (set[b] && dense[b] != -c) {
                return Err(GroupError::NotAntisymmetric { factor: index, i, j });
            }
            dense[a] = c;
            dense[b] = -c;
            set[a] = true;
            set[b] = true;
        }
        let mut brackets = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    let c = dense[idx(i, j, k)];
                    if c != 0.0 {
                        brackets.push((i, j, k, c));
                    }
                }
            }
        }
        let mut factor = Self {
            dim,
            brackets,
            derivation,
            step: 1,
        };
        let scale = 1.0_f64.max(dense.iter().fold(0.0_f64, |m, c| m.max(c.abs())));
        let dscale = 1.0_f64.max(factor.derivation.amax());

        let basis = |i: usize| {
            let mut e = DVector::zeros(dim);
            e[i] = 1.0;
            e
        };
        let mut jacobi_residual = 0.0_f64;
        for i in 0..dim {
            for j in i + 1..dim {
                for k in j + 1..dim {
                    let (a, b, c) = (basis(i), basis(j), basis(k));
                    let r = factor.bracket(&a, &factor.bracket(&b, &c))
                        + factor.bracket(&b, &factor.bracket(&c, &a))
                        + factor.bracket(&c, &factor.bracket(&a, &b));
                    let res = r.amax();
                    jacobi_residual = jacobi_residual.max(res);
                    if res > IDENTITY_TOL * scale * scale {
                        return Err(GroupError::JacobiViolation {
                            factor: index,
                            i,
                            j,
                            k,
                            residual: res,
                        });
                    }
                }
            }
        }
        let mut derivation_residual = 0.0_f64;
        for i in 0..dim {
            for j in i + 1..dim {
                let (a, b) = (basis(i), basis(j));
                let d = &factor.derivation;
                let r = d * factor.bracket(&a, &b)
                    - factor.bracket(&(d * &a), &b)
                    - factor.bracket(&a, &(d * &b));
                let res = r.amax();
                derivation_residual = derivation_residual.max(res);
                if res > IDENTITY_TOL * scale * dscale {
                    return Err(GroupError::NonDerivation {
                        factor: index,
                        i,
                        j,
                        residual: res,
                    });
                }
            }
        }
        factor.step = factor.nilpotency_step().ok_or(GroupError::NotNilpotent { factor: index })?;
        Ok((
            factor,
            FactorResiduals {
                derivation: derivation_residual,
                jacobi: jacobi_residual,
            },
        ))
    }

    /// Length of the lower central series, or `None` if it never vanishes.
    fn nilpotency_step(&self) -> Option<usize> {
        if self.is_abelian() {
            return Some(1);
        }
        let dim = self.dim;
        let mut current: Vec<DVector<f64>> = (0..dim)
            .map(|i| {
                let mut e = DVector::zeros(dim);
                e[i] = 1.0;
                e
            })
            .collect();
        for step in 1..=dim {
            let mut gens = Vec::new();
            for i in 0..dim {
                let mut e = DVector::zeros(dim);
                e[i] = 1.0;
                for w in &current {
                    gens.push(self.bracket(&e, w));
                }
            }
            let next = span_basis(&gens);
            if next.is_empty() {
                return Some(step);
            }
            current = next;
        }
        None
    }
}

/// Orthonormal basis of the span of `vectors` (numerical rank at 1e-10).
fn span_basis(vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    if vectors.is_empty() {
        return Vec::new();
    }
    let m = DMatrix::from_columns(vectors);
    let svd = m.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.max();
    if top <= 1e-10 {
        return Vec::new();
    }
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > 1e-10 * top.max(1.0))
        .map(|(i, _)| u.column(i).into_owned())
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
struct FactorResiduals {
    derivation: f64,
    jacobi: f64,
}

/// Per-factor validation diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct FactorReport {
    pub dim: usize,
    pub step: usize,
    /// Scale applied to the raw derivation (`1 / min Re λ`).
    pub normalization: f64,
    /// Eigenvalues of the normalized derivation as `(re, im)`.
    pub eigenvalues: Vec<(f64, f64)>,
    pub derivation_residual: f64,
    pub jacobi_residual: f64,
}

/// Outcome of [`validate`].
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub factors: Vec<FactorReport>,
    pub normalized: GroupSpec,
}

/// Validated and normalized Sol-type group.
#[derive(Debug, Clone, PartialEq)]
pub struct SolTypeGroup {
    rank: usize,
    factors: Vec<NilpotentFactor>,
    roots: Vec<DVector<f64>>,
}

/// Check a raw group definition and return its normalized form.
pub fn validate(spec: &GroupSpec) -> Result<(SolTypeGroup, ValidationReport), GroupError> {
    if spec.rank < 2 {
        return Err(GroupError::RankTooSmall(spec.rank));
    }
    if spec.factors.is_empty() {
        return Err(GroupError::Shape("at least one factor is required".into()));
    }
    let mut factors = Vec::new();
    let mut roots = Vec::new();
    let mut reports = Vec::new();
    for (index, f) in spec.factors.iter().enumerate() {
        if f.derivation.len() != f.dim * f.dim {
            return Err(GroupError::Shape(format!(
                "factor {index}: derivation has {} entries, expected {}",
                f.derivation.len(),
                f.dim * f.dim
            )));
        }
        if f.root.len() != spec.rank || f.root.iter().any(|x| !x.is_finite()) {
            return Err(GroupError::Shape(format!(
                "factor {index}: root must have {} finite entries",
                spec.rank
            )));
        }
        let d = DMatrix::from_row_slice(f.dim, f.dim, &f.derivation);
        let triples = f.structure_constants.clone().unwrap_or_default();
        let (factor, residuals) = NilpotentFactor::from_raw(index, f.dim, d, &triples)?;

        let eig = factor.derivation.complex_eigenvalues();
        let mut min_re = f64::INFINITY;
        for z in eig.iter() {
            if z.re <= 0.0 {
                return Err(GroupError::NonPositiveEigenvalue {
                    factor: index,
                    re: z.re,
                    im: z.im,
                });
            }
            min_re = min_re.min(z.re);
        }
        let scale = 1.0 / min_re;
        let normalized = factor.with_derivation(factor.derivation.clone() * scale);
        let root = DVector::from_row_slice(&f.root) * min_re;
        let mut eigenvalues: Vec<(f64, f64)> = eig.iter().map(|z| (z.re * scale, z.im * scale)).collect();
        eigenvalues.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        reports.push(FactorReport {
            dim: f.dim,
            step: normalized.step,
            normalization: scale,
            eigenvalues,
            derivation_residual: residuals.derivation,
            jacobi_residual: residuals.jacobi,
        });
        factors.push(normalized);
        roots.push(root);
    }
    let group = SolTypeGroup {
        rank: spec.rank,
        factors,
        roots,
    };
    let mut normalized = group.to_spec();
    normalized.name.clone_from(&spec.name);
    Ok((
        group,
        ValidationReport {
            factors: reports,
            normalized,
        },
    ))
}

impl SolTypeGroup {
    pub fn from_spec(spec: &GroupSpec) -> Result<Self, GroupError> {
        validate(spec).map(|(g, _)| g)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[NilpotentFactor] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> &NilpotentFactor {
        &self.factors[i]
    }

    pub fn roots(&self) -> &[DVector<f64>] {
        &self.roots
    }

    pub fn root(&self, i: usize) -> &DVector<f64> {
        &self.roots[i]
    }

    /// Total dimension of `⊕ 𝔫ᵢ`.
    pub fn nil_dim(&self) -> usize {
        self.factors.iter().map(|f| f.dim).sum()
    }

    pub fn dim(&self) -> usize {
        self.nil_dim() + self.rank
    }

    /// Offset of factor `i` inside `⊕ 𝔫ᵢ`.
    pub fn nil_offset(&self, i: usize) -> usize {
        self.factors[..i].iter().map(|f| f.dim).sum()
    }

    /// `αᵢ(v)`.
    pub fn alpha(&self, i: usize, v: &DVector<f64>) -> f64 {
        self.roots[i].dot(v)
    }

    /// `e^{αᵢ(v) Dᵢ}`.
    pub fn action(&self, i: usize, v: &DVector<f64>) -> DMatrix<f64> {
        self.factors[i].flow(self.alpha(i, v))
    }

    pub fn max_step(&self) -> usize {
        self.factors.iter().map(|f| f.step).max().unwrap_or(1)
    }

    pub fn ensure_supported(&self) -> Result<(), GroupError> {
        for (factor, f) in self.factors.iter().enumerate() {
            if f.step > 2 {
                return Err(GroupError::UnsupportedStep {
                    factor,
                    step: f.step,
                });
            }
        }
        Ok(())
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement {
            nil: self.factors.iter().map(|f| DVector::zeros(f.dim)).collect(),
            base: DVector::zeros(self.rank),
        }
    }

    /// Element `(0, v)` of the base subgroup.
    pub fn base_element(&self, v: DVector<f64>) -> GroupElement {
        GroupElement {
            nil: self.factors.iter().map(|f| DVector::zeros(f.dim)).collect(),
            base: v,
        }
    }

    pub fn multiply(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement, GroupError> {
        self.ensure_supported()?;
        Ok(self.mul(a, b))
    }

    /// Product without the step check; callers guarantee step ≤ 2.
    pub(crate) fn mul(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        let nil = self
            .factors
            .iter()
            .enumerate()
            .map(|(i, f)| f.bch(&a.nil[i], &(self.action(i, &a.base) * &b.nil[i])))
            .collect();
        GroupElement {
            nil,
            base: &a.base + &b.base,
        }
    }

    pub fn inverse(&self, a: &GroupElement) -> GroupElement {
        let nil = self
            .factors
            .iter()
            .enumerate()
            .map(|(i, f)| -(f.flow(-self.alpha(i, &a.base)) * &a.nil[i]))
            .collect();
        GroupElement {
            nil,
            base: -&a.base,
        }
    }

    /// `a⁻¹ b`.
    pub(crate) fn relative(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        self.mul(&self.inverse(a), b)
    }

    /// Same algebra and roots with replaced derivations.
    pub(crate) fn with_derivations(&self, derivations: Vec<DMatrix<f64>>) -> Self {
        Self {
            rank: self.rank,
            factors: self
                .factors
                .iter()
                .zip(derivations)
                .map(|(f, d)| f.with_derivation(d))
                .collect(),
            roots: self.roots.clone(),
        }
    }

    pub fn to_spec(&self) -> GroupSpec {
        GroupSpec {
            name: None,
            rank: self.rank,
            factors: self
                .factors
                .iter()
                .zip(&self.roots)
                .map(|(f, r)| {
                    let triples = f.structure_triples();
                    FactorSpec {
                        dim: f.dim,
                        derivation: f.derivation.transpose().as_slice().to_vec(),
                        root: r.as_slice().to_vec(),
                        structure_constants: (!triples.is_empty()).then_some(triples),
                    }
                })
                .collect(),
        }
    }

    /// Check that `g` has the right shape and finite coordinates.
    pub fn check_element(&self, g: &GroupElement) -> Result<(), GroupError> {
        let ok = g.nil.len() == self.factors.len()
            && g.base.len() == self.rank
            && g.nil.iter().zip(&self.factors).all(|(h, f)| h.len() == f.dim)
            && g.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GroupError::Shape("element does not match group dimensions".into()))
        }
    }
}

/// Group element `(h, v)` in exponential/base coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    #[serde(with = "crate::serde_vec::list")]
    pub nil: Vec<DVector<f64>>,
    #[serde(with = "crate::serde_vec")]
    pub base: DVector<f64>,
}

impl GroupElement {
    pub fn new(nil: Vec<DVector<f64>>, base: DVector<f64>) -> Self {
        Self { nil, base }
    }

    pub fn is_finite(&self) -> bool {
        self.base.iter().all(|x| x.is_finite()) && self.nil.iter().all(|h| h.iter().all(|x| x.is_finite()))
    }

    /// Largest coordinate difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m = (&self.base - &other.base).amax();
        for (a, b) in self.nil.iter().zip(&other.nil) {
            m = m.max((a - b).amax());
        }
        m
    }

    /// True when every nil coordinate vanishes.
    pub fn nil_is_zero(&self) -> bool {
        self.nil.iter().all(|h| h.iter().all(|x| *x == 0.0))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn abelian_factor(derivation: &[f64], dim: usize, root: &[f64]) -> FactorSpec {
        FactorSpec {
            dim,
            derivation: derivation.to_vec(),
            root: root.to_vec(),
            structure_constants: None,
        }
    }

    /// Two one-dimensional factors with roots `e₁*`, `e₂*`.
    pub(crate) fn rank2_spec() -> GroupSpec {
        GroupSpec {
            name: None,
            rank: 2,
            factors: vec![
                abelian_factor(&[1.0], 1, &[1.0, 0.0]),
                abelian_factor(&[1.0], 1, &[0.0, 1.0]),
            ],
        }
    }

    /// Heisenberg factor with derivation diag(1, 2, 3) plus an abelian factor.
    pub(crate) fn heisenberg_spec() -> GroupSpec {
        GroupSpec {
            name: None,
            rank: 2,
            factors: vec![
                FactorSpec {
                    dim: 3,
                    derivation: vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0],
                    root: vec![1.0, 0.5],
                    structure_constants: Some(vec![(0, 1, 2, 1.0)]),
                },
                abelian_factor(&[1.0, 1.0, 0.0, 1.0], 2, &[-1.0, 1.0]),
            ],
        }
    }

    fn element(g: &SolTypeGroup, xs: &[f64]) -> GroupElement {
        let mut it = xs.iter().copied();
        let nil = g
            .factors()
            .iter()
            .map(|f| DVector::from_iterator(f.dim(), it.by_ref().take(f.dim())))
            .collect();
        let base = DVector::from_iterator(g.rank(), it.take(g.rank()));
        GroupElement::new(nil, base)
    }

    #[test]
    fn jordan_block_factor_is_valid() {
        let spec = GroupSpec {
            name: None,
            rank: 2,
            factors: vec![abelian_factor(&[1.0, 1.0, 0.0, 1.0], 2, &[1.0, 0.0])],
        };
        let (_, report) = validate(&spec).unwrap();
        assert_eq!(report.factors[0].eigenvalues, vec![(1.0, 0.0), (1.0, 0.0)]);
    }

    #[test]
    fn normalization_rescales_derivation_and_root() {
        let spec = GroupSpec {
            name: None,
            rank: 2,
            factors: vec![abelian_factor(&[2.0, 0.0, 0.0, 4.0], 2, &[1.0, 0.0])],
        };
        let (g, _) = validate(&spec).unwrap();
        assert_eq!(g.factor(0).derivation(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
        assert_eq!(g.root(0), &DVector::from_vec(vec![2.0, 0.0]));
    }

    #[test]
    fn rotation_derivation_is_rejected() {
        let spec = GroupSpec {
            name: None,
            rank: 2,
            factors: vec![abelian_factor(&[0.0, 1.0, -1.0, 0.0], 2, &[1.0, 0.0])],
        };
        match validate(&spec) {
            Err(GroupError::NonPositiveEigenvalue { factor: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_derivation_is_rejected() {
        let mut spec = heisenberg_spec();
        spec.factors[0].derivation = vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0];
        assert!(matches!(validate(&spec), Err(GroupError::NonDerivation { factor: 0, .. })));
    }

    #[test]
    fn jacobi_violation_is_rejected() {
        let spec = GroupSpec {
            name: None,
            rank: 2,
            factors: vec![FactorSpec {
                dim: 3,
                derivation: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                root: vec![1.0, 0.0],
                structure_constants: Some(vec![(0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0)]),
            }],
        };
        let mut broken = spec.clone();
        broken.factors[0].structure_constants = Some(vec![(0, 1, 2, 1.0), (0, 2, 0, 1.0), (1, 2, 1, 1.0)]);
        assert!(matches!(validate(&broken), Err(GroupError::JacobiViolation { factor: 0, .. })));
        assert!(matches!(validate(&spec), Err(GroupError::NonDerivation { .. })));
    }

    #[test]
    fn rank_one_is_rejected() {
        let mut spec = rank2_spec();
        spec.rank = 1;
        spec.factors = vec![abelian_factor(&[1.0], 1, &[1.0])];
        assert!(matches!(validate(&spec), Err(GroupError::RankTooSmall(1))));
    }

    #[test]
    fn step_is_detected() {
        let (g, _) = validate(&heisenberg_spec()).unwrap();
        assert_eq!(g.factor(0).step(), 2);
        assert_eq!(g.factor(1).step(), 1);
    }

    #[test]
    fn multiply_matches_worked_example() {
        let spec = GroupSpec {
            name: None,
            rank: 2,
            factors: vec![abelian_factor(&[1.0], 1, &[1.0, 0.0])],
        };
        let g = SolTypeGroup::from_spec(&spec).unwrap();
        let a = element(&g, &[1.0, 1.0, 0.0]);
        let b = element(&g, &[1.0, 0.0, 0.0]);
        let c = g.multiply(&a, &b).unwrap();
        assert!((c.nil[0][0] - (1.0 + std::f64::consts::E)).abs() < 1e-15);
        assert_eq!(c.base, DVector::from_vec(vec![1.0, 0.0]));
    }

    /// The three-dimensional subgroup as 2×2 matrices `[[e^{v₁}, h], [0, 1]]`.
    #[test]
    fn multiply_matches_matrix_representation() {
        let spec = GroupSpec {
            name: None,
            rank: 2,
            factors: vec![abelian_factor(&[1.0], 1, &[1.0, 0.0])],
        };
        let g = SolTypeGroup::from_spec(&spec).unwrap();
        let mat = |x: &GroupElement| DMatrix::from_row_slice(2, 2, &[x.base[0].exp(), x.nil[0][0], 0.0, 1.0]);
        let a = element(&g, &[0.3, -0.7, 2.0]);
        let b = element(&g, &[-1.1, 0.4, 5.0]);
        let c = g.multiply(&a, &b).unwrap();
        assert!((mat(&c) - mat(&a) * mat(&b)).amax() < 1e-14);
    }

    #[test]
    fn identity_and_inverse() {
        let g = SolTypeGroup::from_spec(&heisenberg_spec()).unwrap();
        let e = g.identity();
        assert_eq!(g.inverse(&e), e);
        let v = g.base_element(DVector::from_vec(vec![1.5, -2.0]));
        assert_eq!(g.inverse(&v).base, DVector::from_vec(vec![-1.5, 2.0]));
        assert!(g.inverse(&v).nil_is_zero());
    }

    #[test]
    fn heintze_action_is_a_homomorphism() {
        let g = SolTypeGroup::from_spec(&heisenberg_spec()).unwrap();
        let v = DVector::from_vec(vec![0.4, -1.3]);
        let w = DVector::from_vec(vec![-0.2, 0.9]);
        for i in 0..g.n_factors() {
            let lhs = g.action(i, &(&v + &w));
            let rhs = g.action(i, &v) * g.action(i, &w);
            assert!((lhs - rhs).amax() < 1e-9);
        }
    }

    fn coords(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0..3.0f64, n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn associativity(a in coords(7), b in coords(7), c in coords(7)) {
            let g = SolTypeGroup::from_spec(&heisenberg_spec()).unwrap();
            let (a, b, c) = (element(&g, &a), element(&g, &b), element(&g, &c));
            let lhs = g.mul(&g.mul(&a, &b), &c);
            let rhs = g.mul(&a, &g.mul(&b, &c));
            let scale = 1.0 + lhs.nil.iter().map(|h| h.amax()).fold(0.0, f64::max);
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-9 * scale);
        }

        #[test]
        fn inverse_law(a in coords(7)) {
            let g = SolTypeGroup::from_spec(&heisenberg_spec()).unwrap();
            let a = element(&g, &a);
            let e = g.mul(&a, &g.inverse(&a));
            prop_assert!(e.max_abs_diff(&g.identity()) <= 1e-9);
            let e = g.mul(&g.inverse(&a), &a);
            prop_assert!(e.max_abs_diff(&g.identity()) <= 1e-9);
        }
    }
}
