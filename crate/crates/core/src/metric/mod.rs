//! Left-invariant metrics with perpendicular splittings.
//!
//! A [`SplitMetric`] stores the Gram matrix in the frame where the base
//! directions are the Gram-orthogonal complement of `⊕ 𝔫ᵢ`. Group elements
//! handed to its length functionals are in these split coordinates; use
//! [`SplitMetric::to_split`] to convert from the standard frame.

mod file;

pub use file::MetricSpec;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::group::{GroupElement, GroupError, NilpotentFactor, SolTypeGroup};
use crate::linalg::{generalized_sym_eigenvalues, gnorm, min_sym_eigenvalue, symmetrize};
use crate::path::PiecewisePath;

const SUBALGEBRA_TOL: f64 = 1e-10;
const MIN_EIGENVALUE: f64 = 1e-12;
/// Relative change below which node doubling stops.
pub const REFINEMENT_TOL: f64 = 1e-3;
const MAX_REFINEMENT_LEVEL: u32 = 16;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("Gram matrix is not positive definite (smallest eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),
    #[error("orthogonal complement is not a subalgebra: [a'{j}, a'{l}] has residual {residual:.3e}")]
    NotASubalgebra { j: usize, l: usize, residual: f64 },
    #[error("malformed metric data: {0}")]
    Shape(String),
    #[error("path has no nodes")]
    EmptyPath,
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// The Gram-orthogonal complement of `⊕ 𝔫ᵢ` and the conjugating element
/// `y = exp(u)` with `Ad_y(e_j) = a'_j`.
#[derive(Debug, Clone, Serialize)]
pub struct Splitting {
    /// Columns `a'_j` in standard coordinates.
    pub complement: Vec<Vec<f64>>,
    /// `u` per factor.
    pub conjugator: Vec<Vec<f64>>,
    pub bracket_residual: f64,
    pub conjugation_residual: f64,
}

/// `∇αᵢ` in the base block and their norms `aᵢ`.
#[derive(Debug, Clone, Serialize)]
pub struct GradientField {
    pub gradients: Vec<Vec<f64>>,
    pub magnitudes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChangeOfMetric {
    /// `AᵀA`: the second base metric written in an orthonormal frame of the first.
    pub matrix: Vec<Vec<f64>>,
    /// Eigenvalues of `AᵀA`, descending.
    pub eigenvalues: Vec<f64>,
    /// Square roots of the eigenvalues: extreme length ratios `|v|₂/|v|₁`.
    pub stretch_factors: Vec<f64>,
}

/// Length of a discretized path with its refinement record.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PathLength {
    pub value: f64,
    pub quadrature_points: usize,
    pub converged: bool,
}

/// The Heintze group `𝐍ᵢ ⋊ ℝ` obtained by collapsing the other factors and
/// `ker αᵢ`.
#[derive(Debug, Clone)]
pub struct HeintzeQuotient {
    pub factor: NilpotentFactor,
    /// Derivation acting along the unit vector `∇αᵢ/aᵢ`.
    pub derivation: DMatrix<f64>,
    /// Gram matrix on `𝔫ᵢ ⊕ ℝ`.
    pub gram: DMatrix<f64>,
    /// Lipschitz constant of the quotient projection.
    pub lipschitz: f64,
}

#[derive(Debug, Clone)]
pub struct SplitMetric {
    standard_group: SolTypeGroup,
    group: SolTypeGroup,
    standard_gram: DMatrix<f64>,
    nil_gram: DMatrix<f64>,
    base_gram: DMatrix<f64>,
    /// Upper Cholesky factor `Lᵀ` of the base Gram: `|v| = |Lᵀ v|`.
    base_sqrt: DMatrix<f64>,
    base_sqrt_inv: DMatrix<f64>,
    factor_grams: Vec<DMatrix<f64>>,
    gradients: Vec<DVector<f64>>,
    magnitudes: Vec<f64>,
    conjugator: Vec<DVector<f64>>,
    trivial_splitting: bool,
    block_diagonal: bool,
    splitting: Splitting,
}

impl SplitMetric {
    pub fn from_spec(group: &SolTypeGroup, spec: &MetricSpec) -> Result<Self, MetricError> {
        Self::new(group, spec.matrix()?)
    }

    /// Check the perpendicular splitting and build the split frame.
    pub fn new(group: &SolTypeGroup, gram: DMatrix<f64>) -> Result<Self, MetricError> {
        group.ensure_supported()?;
        let nd = group.nil_dim();
        let k = group.rank();
        let dim = nd + k;
        if gram.nrows() != dim || gram.ncols() != dim {
            return Err(MetricError::Shape(format!(
                "Gram is {}×{}, group dimension is {dim}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if gram.iter().any(|x| !x.is_finite()) {
            return Err(MetricError::Shape("non-finite Gram entry".into()));
        }
        let asym = (&gram - gram.transpose()).amax();
        if asym > 1e-12 * gram.amax().max(1.0) {
            return Err(MetricError::Shape(format!("Gram is not symmetric (defect {asym:.3e})")));
        }
        let gram = symmetrize(&gram);
        let min_eig = min_sym_eigenvalue(&gram);
        if !(min_eig > MIN_EIGENVALUE) {
            return Err(MetricError::NotPositiveDefinite(min_eig));
        }
        let g_nn = gram.view((0, 0), (nd, nd)).into_owned();
        let g_na = gram.view((0, nd), (nd, k)).into_owned();
        let g_aa = gram.view((nd, nd), (k, k)).into_owned();
        let block_diagonal = g_na.iter().all(|x| *x == 0.0);
        let w = if block_diagonal {
            DMatrix::zeros(nd, k)
        } else {
            -g_nn
                .clone()
                .cholesky()
                .ok_or(MetricError::NotPositiveDefinite(min_eig))?
                .solve(&g_na)
        };

        let split_col = |j: usize| -> Vec<DVector<f64>> {
            group
                .factors()
                .iter()
                .enumerate()
                .map(|(i, f)| w.view((group.nil_offset(i), j), (f.dim(), 1)).into_owned())
                .map(|c| DVector::from_column_slice(c.as_slice()))
                .collect()
        };
        let cols: Vec<Vec<DVector<f64>>> = (0..k).map(split_col).collect();
        let dscale = group
            .factors()
            .iter()
            .map(|f| f.derivation().amax())
            .fold(1.0, f64::max);
        let tol = SUBALGEBRA_TOL * w.amax().max(1.0).powi(2) * dscale;
        let mut bracket_residual = 0.0_f64;
        for j in 0..k {
            for l in j + 1..k {
                let mut sq = 0.0;
                for (i, f) in group.factors().iter().enumerate() {
                    let aj = group.root(i)[j];
                    let al = group.root(i)[l];
                    let r = f.bracket(&cols[j][i], &cols[l][i]) + f.derivation() * (&cols[l][i] * aj - &cols[j][i] * al);
                    sq += r.norm_squared();
                }
                let residual = sq.sqrt();
                bracket_residual = bracket_residual.max(residual);
                if residual > tol {
                    return Err(MetricError::NotASubalgebra { j, l, residual });
                }
            }
        }

        // Conjugator u with Ad_{exp u}(e_j) = a'_j, factor by factor.
        let mut conjugator = Vec::with_capacity(group.n_factors());
        let mut conjugation_residual = 0.0_f64;
        for (i, f) in group.factors().iter().enumerate() {
            let root = group.root(i);
            let jstar = root.iamax();
            let u = if root[jstar] == 0.0 {
                DVector::zeros(f.dim())
            } else {
                let c = &cols[jstar][i] / root[jstar];
                let d = f.derivation();
                let dinv = d.clone().try_inverse().ok_or_else(|| {
                    MetricError::Group(GroupError::IllConditioned(format!("derivation of factor {i} is singular")))
                })?;
                let mut u = -(&dinv * &c);
                for _ in 0..2 {
                    u = -(&dinv * (&c + f.bracket(&u, &(d * &u)) * 0.5));
                }
                u
            };
            let du = f.derivation() * &u;
            let image = -(&du + f.bracket(&u, &du) * 0.5);
            for j in 0..k {
                let r = (&image * root[j] - &cols[j][i]).amax();
                conjugation_residual = conjugation_residual.max(r);
            }
            conjugator.push(u);
        }
        if conjugation_residual > 1e-8 * w.amax().max(1.0) {
            return Err(MetricError::NotASubalgebra {
                j: 0,
                l: 0,
                residual: conjugation_residual,
            });
        }
        let trivial_splitting = conjugator.iter().all(|u| u.iter().all(|x| *x == 0.0));

        // Split-frame derivations D' = Ad_y D Ad_y⁻¹ with Ad_y = I + ad_u.
        let derivations = group
            .factors()
            .iter()
            .zip(&conjugator)
            .map(|(f, u)| {
                if f.is_abelian() {
                    f.derivation().clone()
                } else {
                    let ad = f.ad(u);
                    let id = DMatrix::identity(f.dim(), f.dim());
                    (&id + &ad) * f.derivation() * (&id - &ad)
                }
            })
            .collect();
        let split_group = group.with_derivations(derivations);

        let mut a_prime = DMatrix::zeros(dim, k);
        a_prime.view_mut((0, 0), (nd, k)).copy_from(&w);
        a_prime.view_mut((nd, 0), (k, k)).fill_with_identity();
        let base_gram = if block_diagonal {
            g_aa.clone()
        } else {
            symmetrize(&(a_prime.transpose() * &gram * &a_prime))
        };
        let chol = base_gram
            .clone()
            .cholesky()
            .ok_or(MetricError::NotPositiveDefinite(min_sym_eigenvalue(&base_gram)))?;
        let base_sqrt = chol.l().transpose();
        let base_sqrt_inv = base_sqrt
            .clone()
            .try_inverse()
            .ok_or(MetricError::NotPositiveDefinite(0.0))?;
        let gram_inv = chol.inverse();
        let gradients: Vec<DVector<f64>> = group.roots().iter().map(|a| &gram_inv * a).collect();
        let magnitudes = group
            .roots()
            .iter()
            .zip(&gradients)
            .map(|(a, g)| a.dot(g).max(0.0).sqrt())
            .collect();
        let factor_grams = (0..group.n_factors())
            .map(|i| {
                let o = group.nil_offset(i);
                let d = group.factor(i).dim();
                g_nn.view((o, o), (d, d)).into_owned()
            })
            .collect();
        let splitting = Splitting {
            complement: (0..k).map(|j| a_prime.column(j).iter().copied().collect()).collect(),
            conjugator: conjugator.iter().map(|u| u.as_slice().to_vec()).collect(),
            bracket_residual,
            conjugation_residual,
        };
        Ok(Self {
            standard_group: group.clone(),
            group: split_group,
            standard_gram: gram,
            nil_gram: g_nn,
            base_gram,
            base_sqrt,
            base_sqrt_inv,
            factor_grams,
            gradients,
            magnitudes,
            conjugator,
            trivial_splitting,
            block_diagonal,
            splitting,
        })
    }

    /// The group in split coordinates (derivations conjugated by `y`).
    pub fn group(&self) -> &SolTypeGroup {
        &self.group
    }

    pub fn standard_group(&self) -> &SolTypeGroup {
        &self.standard_group
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.standard_gram
    }

    pub fn nil_gram(&self) -> &DMatrix<f64> {
        &self.nil_gram
    }

    /// Gram of the split base directions `a'_j`.
    pub fn base_gram(&self) -> &DMatrix<f64> {
        &self.base_gram
    }

    pub fn factor_gram(&self, i: usize) -> &DMatrix<f64> {
        &self.factor_grams[i]
    }

    /// True when the standard base block is already Gram-orthogonal to `⊕ 𝔫ᵢ`.
    pub fn is_block_diagonal(&self) -> bool {
        self.block_diagonal
    }

    pub fn splitting(&self) -> &Splitting {
        &self.splitting
    }

    pub fn gradient(&self, i: usize) -> &DVector<f64> {
        &self.gradients[i]
    }

    /// `aᵢ = |∇αᵢ|`.
    pub fn magnitude(&self, i: usize) -> f64 {
        self.magnitudes[i]
    }

    pub fn gradient_field(&self) -> GradientField {
        GradientField {
            gradients: self.gradients.iter().map(|g| g.as_slice().to_vec()).collect(),
            magnitudes: self.magnitudes.clone(),
        }
    }

    pub fn base_norm(&self, v: &DVector<f64>) -> f64 {
        (&self.base_sqrt * v).norm()
    }

    /// Coordinates in which the base metric is Euclidean.
    pub fn to_orthonormal_base(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.base_sqrt * v
    }

    pub fn from_orthonormal_base(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.base_sqrt_inv * y
    }

    /// Unit normal of the level sets of `αᵢ` in orthonormal base coordinates,
    /// scaled by `aᵢ`: `αᵢ(v) = ⟨nᵢ, Lᵀv⟩`.
    pub fn orthonormal_normal(&self, i: usize) -> DVector<f64> {
        self.base_sqrt_inv.transpose() * self.group.root(i)
    }

    /// Norm of `h ∈ 𝔫ᵢ` in the factor Gram block.
    pub fn coset_norm(&self, i: usize, h: &DVector<f64>) -> f64 {
        gnorm(&self.factor_grams[i], h)
    }

    /// Norm of a vector in `⊕ 𝔫ᵢ` given factor by factor.
    pub fn nil_norm(&self, w: &[DVector<f64>]) -> f64 {
        let mut sq = 0.0;
        for (i, wi) in w.iter().enumerate() {
            let oi = self.group.nil_offset(i);
            for (j, wj) in w.iter().enumerate() {
                let oj = self.group.nil_offset(j);
                for a in 0..wi.len() {
                    for b in 0..wj.len() {
                        sq += wi[a] * self.nil_gram[(oi + a, oj + b)] * wj[b];
                    }
                }
            }
        }
        sq.max(0.0).sqrt()
    }

    /// Standard coordinates to split coordinates: `h' = h · φ_v(y) · y⁻¹`.
    pub fn to_split(&self, g: &GroupElement) -> GroupElement {
        if self.trivial_splitting {
            return g.clone();
        }
        let sg = &self.standard_group;
        let nil = sg
            .factors()
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let u = &self.conjugator[i];
                let pu = sg.action(i, &g.base) * u;
                f.bch(&f.bch(&g.nil[i], &pu), &-u)
            })
            .collect();
        GroupElement::new(nil, g.base.clone())
    }

    /// Split coordinates to standard coordinates.
    pub fn from_split(&self, g: &GroupElement) -> GroupElement {
        if self.trivial_splitting {
            return g.clone();
        }
        let sg = &self.standard_group;
        let nil = sg
            .factors()
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let u = &self.conjugator[i];
                let pu = sg.action(i, &g.base) * u;
                f.bch(&f.bch(&g.nil[i], u), &-pu)
            })
            .collect();
        GroupElement::new(nil, g.base.clone())
    }

    /// Integrand of the coordinate-linear segment from the identity to `r`
    /// at parameter `t`.
    fn relative_speed(&self, r: &GroupElement, base_sq: f64, t: f64) -> f64 {
        let w: Vec<DVector<f64>> = (0..self.group.n_factors())
            .map(|i| self.group.factor(i).flow(-t * self.group.alpha(i, &r.base)) * &r.nil[i])
            .collect();
        let n = self.nil_norm(&w);
        (n * n + base_sq).sqrt()
    }

    /// Composite midpoint rule with `pieces` subintervals for the segment
    /// `a → b`.
    pub fn segment_length(&self, a: &GroupElement, b: &GroupElement, pieces: usize) -> f64 {
        let r = self.group.relative(a, b);
        self.relative_segment_length(&r, pieces)
    }

    fn relative_segment_length(&self, r: &GroupElement, pieces: usize) -> f64 {
        let base_sq = self.base_norm(&r.base).powi(2);
        if r.nil_is_zero() {
            return base_sq.sqrt();
        }
        let p = pieces.max(1);
        let h = 1.0 / p as f64;
        (0..p).map(|k| self.relative_speed(r, base_sq, (k as f64 + 0.5) * h)).sum::<f64>() * h
    }

    /// Single midpoint per segment.
    pub fn raw_length(&self, path: &PiecewisePath) -> Result<f64, MetricError> {
        if path.is_empty() {
            return Err(MetricError::EmptyPath);
        }
        Ok(path.nodes.windows(2).map(|w| self.segment_length(&w[0], &w[1], 1)).sum())
    }

    /// Length with node doubling per segment until the relative change is
    /// below [`REFINEMENT_TOL`].
    pub fn path_length(&self, path: &PiecewisePath) -> Result<PathLength, MetricError> {
        if path.is_empty() {
            return Err(MetricError::EmptyPath);
        }
        let mut total = 0.0;
        let mut points = 0;
        let mut converged = true;
        for w in path.nodes.windows(2) {
            let r = self.group.relative(&w[0], &w[1]);
            let mut pieces = 1;
            let mut prev = self.relative_segment_length(&r, pieces);
            points += 1;
            if !r.nil_is_zero() {
                let mut ok = false;
                for _ in 0..MAX_REFINEMENT_LEVEL {
                    pieces *= 2;
                    let next = self.relative_segment_length(&r, pieces);
                    points += pieces;
                    let change = (next - prev).abs();
                    prev = next;
                    if change <= REFINEMENT_TOL * next.abs() {
                        ok = true;
                        break;
                    }
                }
                converged &= ok;
            }
            total += prev;
        }
        Ok(PathLength {
            value: total,
            quadrature_points: points,
            converged,
        })
    }

    /// Length of the base projection in the base metric.
    pub fn base_projection_length(&self, path: &PiecewisePath) -> f64 {
        path.nodes
            .windows(2)
            .map(|w| self.base_norm(&(&w[1].base - &w[0].base)))
            .sum()
    }

    /// Operator norm of the projection `⊕ 𝔫ⱼ → 𝔫ᵢ` along the other factors.
    pub fn projection_lipschitz(&self, i: usize) -> f64 {
        let nd = self.group.nil_dim();
        let o = self.group.nil_offset(i);
        let d = self.group.factor(i).dim();
        let mut a = DMatrix::zeros(nd, nd);
        a.view_mut((o, o), (d, d)).copy_from(&self.factor_grams[i]);
        generalized_sym_eigenvalues(&a, &self.nil_gram)
            .and_then(|ev| ev.last().copied())
            .unwrap_or(1.0)
            .max(0.0)
            .sqrt()
    }

    /// Largest projection Lipschitz constant over all factors.
    pub fn l1(&self) -> f64 {
        (0..self.group.n_factors())
            .map(|i| self.projection_lipschitz(i))
            .fold(0.0, f64::max)
    }

    pub fn heintze_quotient(&self, i: usize) -> HeintzeQuotient {
        let f = self.group.factor(i).clone();
        let d = f.dim();
        let mut gram = DMatrix::zeros(d + 1, d + 1);
        gram.view_mut((0, 0), (d, d)).copy_from(&self.factor_grams[i]);
        gram[(d, d)] = 1.0;
        HeintzeQuotient {
            derivation: f.derivation() * self.magnitudes[i],
            factor: f,
            gram,
            lipschitz: self.projection_lipschitz(i).max(1.0),
        }
    }
}

/// Compare the base metrics of two split metrics on the same group.
pub fn change_of_metric(m1: &SplitMetric, m2: &SplitMetric) -> ChangeOfMetric {
    let linv = &m1.base_sqrt_inv;
    let ata = symmetrize(&(linv.transpose() * &m2.base_gram * linv));
    let mut eigenvalues: Vec<f64> = ata.symmetric_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let stretch_factors = eigenvalues.iter().map(|x| x.max(0.0).sqrt()).collect();
    ChangeOfMetric {
        matrix: (0..ata.nrows()).map(|r| ata.row(r).iter().copied().collect()).collect(),
        eigenvalues,
        stretch_factors,
    }
}

/// `log(s_max / s_min)` of the base change of metric.
pub fn delta_distance(m1: &SplitMetric, m2: &SplitMetric) -> f64 {
    let c = change_of_metric(m1, m2);
    let top = c.stretch_factors.first().copied().unwrap_or(1.0);
    let bottom = c.stretch_factors.last().copied().unwrap_or(1.0);
    (top / bottom).ln().max(0.0)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::group::tests::{heisenberg_spec, rank2_spec};
    use crate::group::{validate, FactorSpec, GroupSpec};
    use proptest::prelude::*;

    fn rank2() -> SolTypeGroup {
        SolTypeGroup::from_spec(&rank2_spec()).unwrap()
    }

    /// Four one-dimensional factors with roots ±e₁*, ±2e₂*.
    pub(crate) fn sol8() -> SolTypeGroup {
        let f = |root: [f64; 2]| FactorSpec {
            dim: 1,
            derivation: vec![1.0],
            root: root.to_vec(),
            structure_constants: None,
        };
        let spec = GroupSpec {
            name: None,
            rank: 2,
            factors: vec![f([1.0, 0.0]), f([0.0, 2.0]), f([-1.0, 0.0]), f([0.0, -2.0])],
        };
        validate(&spec).unwrap().0
    }

    /// A Gram whose complement of `𝔫` is the graph of `v ↦ Ad_y v`: built by
    /// declaring the split-frame Gram block diagonal and changing basis.
    pub(crate) fn gram_from_splitting(group: &SolTypeGroup, u: &[DVector<f64>], g_nn: &DMatrix<f64>, g_aa: &DMatrix<f64>) -> DMatrix<f64> {
        let nd = group.nil_dim();
        let k = group.rank();
        // Columns of B: basis (n, a') in standard coordinates.
        let mut b = DMatrix::identity(nd + k, nd + k);
        for (i, f) in group.factors().iter().enumerate() {
            let du = f.derivation() * &u[i];
            let img = -(&du + f.bracket(&u[i], &du) * 0.5);
            for j in 0..k {
                let o = group.nil_offset(i);
                for a in 0..f.dim() {
                    b[(o + a, nd + j)] = img[a] * group.root(i)[j];
                }
            }
        }
        let mut split = DMatrix::zeros(nd + k, nd + k);
        split.view_mut((0, 0), (nd, nd)).copy_from(g_nn);
        split.view_mut((nd, nd), (k, k)).copy_from(g_aa);
        let binv = b.try_inverse().unwrap();
        binv.transpose() * split * binv
    }

    #[test]
    fn block_diagonal_gram_splits_trivially() {
        let g = rank2();
        let m = SplitMetric::new(&g, DMatrix::identity(4, 4)).unwrap();
        assert!(m.is_block_diagonal());
        assert_eq!(m.splitting().bracket_residual, 0.0);
        assert_eq!(m.base_gram(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn splitting_grams_pass_and_generic_grams_fail_on_sol8() {
        let g = sol8();
        let u: Vec<DVector<f64>> = [0.3, -0.7, 1.1, 0.2].iter().map(|x| DVector::from_element(1, *x)).collect();
        let g_nn = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.1 });
        let g_aa = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.8]);
        let gram = gram_from_splitting(&g, &u, &g_nn, &g_aa);
        let m = SplitMetric::new(&g, gram.clone()).unwrap();
        assert!(!m.is_block_diagonal());
        assert!((m.base_gram() - &g_aa).amax() < 1e-12);
        // Factors 1 and 3 share the e₁ direction with opposite roots; a
        // generic perturbation of the mixed block breaks closure.
        let mut bad = gram;
        bad[(0, 5)] += 0.3;
        bad[(5, 0)] += 0.3;
        match SplitMetric::new(&g, bad) {
            Err(MetricError::NotASubalgebra { residual, .. }) => assert!(residual > 1e-3),
            other => panic!("expected NotASubalgebra, got {other:?}"),
        }
    }

    #[test]
    fn heisenberg_perturbation_fails_closure() {
        let g = SolTypeGroup::from_spec(&heisenberg_spec()).unwrap();
        let u = vec![DVector::from_vec(vec![0.2, -0.4, 0.1]), DVector::from_vec(vec![0.3, 0.5])];
        let g_nn = DMatrix::identity(5, 5);
        let g_aa = DMatrix::identity(2, 2);
        let gram = gram_from_splitting(&g, &u, &g_nn, &g_aa);
        let m = SplitMetric::new(&g, gram.clone()).unwrap();
        assert!(m.splitting().bracket_residual < 1e-12);
        // The split frame has conjugated derivations with the same spectrum.
        let ev = m.group().factor(0).derivation().complex_eigenvalues();
        let mut re: Vec<f64> = ev.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        assert!((re[0] - 1.0).abs() < 1e-12 && (re[2] - 3.0).abs() < 1e-12);
        let mut bad = gram;
        bad[(2, 5)] += 0.05;
        bad[(5, 2)] += 0.05;
        assert!(matches!(SplitMetric::new(&g, bad), Err(MetricError::NotASubalgebra { .. })));
    }

    #[test]
    fn split_coordinates_round_trip() {
        let g = SolTypeGroup::from_spec(&heisenberg_spec()).unwrap();
        let u = vec![DVector::from_vec(vec![0.2, -0.4, 0.1]), DVector::from_vec(vec![0.3, 0.5])];
        let gram = gram_from_splitting(&g, &u, &DMatrix::identity(5, 5), &DMatrix::identity(2, 2));
        let m = SplitMetric::new(&g, gram).unwrap();
        let x = GroupElement::new(
            vec![DVector::from_vec(vec![1.0, -2.0, 0.5]), DVector::from_vec(vec![0.3, 0.1])],
            DVector::from_vec(vec![0.7, -0.4]),
        );
        let back = m.from_split(&m.to_split(&x));
        assert!(back.max_abs_diff(&x) < 1e-12);
        // Split coordinates turn the standard product into the split product.
        let y = GroupElement::new(
            vec![DVector::from_vec(vec![-0.3, 0.2, 1.0]), DVector::from_vec(vec![0.0, 2.0])],
            DVector::from_vec(vec![-1.1, 0.9]),
        );
        let lhs = m.to_split(&g.mul(&x, &y));
        let rhs = m.group().mul(&m.to_split(&x), &m.to_split(&y));
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn gradient_field_is_dual_to_roots() {
        let g = sol8();
        let gram = {
            let mut m = DMatrix::identity(6, 6);
            m[(4, 4)] = 2.0;
            m[(4, 5)] = 0.5;
            m[(5, 4)] = 0.5;
            m
        };
        let m = SplitMetric::new(&g, gram).unwrap();
        for i in 0..4 {
            for w in [DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.3, -2.0])] {
                let lhs = (m.base_gram() * m.gradient(i)).dot(&w);
                assert!((lhs - g.alpha(i, &w)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_and_base_paths() {
        let g = rank2();
        let m = SplitMetric::new(&g, DMatrix::identity(4, 4)).unwrap();
        let x = GroupElement::new(vec![DVector::from_element(1, 3.0), DVector::from_element(1, -1.0)], DVector::from_vec(vec![0.5, 0.5]));
        let p = PiecewisePath::new(vec![x.clone(), x.clone(), x]);
        assert_eq!(m.path_length(&p).unwrap().value, 0.0);
        let v = DVector::from_vec(vec![3.0, 4.0]);
        let p = PiecewisePath::straight(&g.identity(), &g.base_element(v), 7);
        assert!((m.path_length(&p).unwrap().value - 5.0).abs() < 1e-12);
        assert!(matches!(m.path_length(&PiecewisePath::new(vec![])), Err(MetricError::EmptyPath)));
    }

    #[test]
    fn horizontal_segment_at_height_decays() {
        let g = rank2();
        let m = SplitMetric::new(&g, DMatrix::identity(4, 4)).unwrap();
        for t in [0.0, 0.5, 2.0, 7.0] {
            let v = DVector::from_vec(vec![t, 0.0]);
            let a = GroupElement::new(vec![DVector::zeros(1), DVector::zeros(1)], v.clone());
            let b = GroupElement::new(vec![DVector::from_element(1, 1.0), DVector::zeros(1)], v);
            let p = PiecewisePath::new(vec![a, b]);
            assert!((m.path_length(&p).unwrap().value - (-t).exp()).abs() < 1e-14);
        }
    }

    /// Mixed segment against an adaptive Simpson oracle of the same integral.
    #[test]
    fn refined_length_matches_quadrature_oracle() {
        let g = rank2();
        let m = SplitMetric::new(&g, DMatrix::identity(4, 4)).unwrap();
        let b = GroupElement::new(vec![DVector::from_element(1, 4.0), DVector::from_element(1, 1.0)], DVector::from_vec(vec![2.0, -1.0]));
        let p = PiecewisePath::new(vec![g.identity(), b]);
        let f = |t: f64| ((4.0 * (-2.0 * t).exp()).powi(2) + (t.exp()).powi(2) + 5.0).sqrt();
        let n = 20000;
        let h = 1.0 / n as f64;
        let simpson: f64 = (0..n)
            .map(|k| {
                let a = k as f64 * h;
                (f(a) + 4.0 * f(a + h / 2.0) + f(a + h)) * h / 6.0
            })
            .sum();
        let len = m.path_length(&p).unwrap();
        assert!(len.converged);
        assert!((len.value - simpson).abs() < 1e-3 * simpson);
    }

    #[test]
    fn change_of_metric_diagonal_case() {
        let g = rank2();
        let m1 = SplitMetric::new(&g, DMatrix::identity(4, 4)).unwrap();
        let mut g2 = DMatrix::identity(4, 4);
        g2[(2, 2)] = 4.0;
        let m2 = SplitMetric::new(&g, g2).unwrap();
        let same = change_of_metric(&m1, &m1);
        assert_eq!(same.eigenvalues, vec![1.0, 1.0]);
        let c = change_of_metric(&m1, &m2);
        assert!((c.eigenvalues[0] - 4.0).abs() < 1e-14 && (c.eigenvalues[1] - 1.0).abs() < 1e-14);
        assert!((c.stretch_factors[0] - 2.0).abs() < 1e-14);
        assert!((delta_distance(&m1, &m2) - 2.0_f64.ln()).abs() < 1e-12);
        assert_eq!(delta_distance(&m1, &m1), 0.0);
    }

    #[test]
    fn heintze_quotient_of_sol8() {
        let g = sol8();
        let m = SplitMetric::new(&g, DMatrix::identity(6, 6)).unwrap();
        let q = m.heintze_quotient(0);
        assert_eq!(q.derivation, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(q.gram, DMatrix::identity(2, 2));
        assert!((q.lipschitz - 1.0).abs() < 1e-12);
        assert!((m.heintze_quotient(1).derivation[(0, 0)] - 2.0).abs() < 1e-12);
    }

    fn spd(entries: &[f64]) -> DMatrix<f64> {
        let a = DMatrix::from_row_slice(2, 2, entries);
        &a * a.transpose() + DMatrix::identity(2, 2) * 0.1
    }

    fn metric_with_base(g: &SolTypeGroup, base: &DMatrix<f64>) -> SplitMetric {
        let mut gram = DMatrix::identity(4, 4);
        gram.view_mut((2, 2), (2, 2)).copy_from(base);
        SplitMetric::new(g, gram).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn change_of_metric_matches_generalized_eigenproblem(a in proptest::collection::vec(-2.0..2.0f64, 4), b in proptest::collection::vec(-2.0..2.0f64, 4)) {
            let g = rank2();
            let (b1, b2) = (spd(&a), spd(&b));
            let c = change_of_metric(&metric_with_base(&g, &b1), &metric_with_base(&g, &b2));
            let mut ev = generalized_sym_eigenvalues(&b2, &b1).unwrap();
            ev.reverse();
            for (x, y) in c.eigenvalues.iter().zip(&ev) {
                prop_assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
            }
        }

        #[test]
        fn delta_triangle_inequality(a in proptest::collection::vec(-2.0..2.0f64, 4), b in proptest::collection::vec(-2.0..2.0f64, 4), c in proptest::collection::vec(-2.0..2.0f64, 4)) {
            let g = rank2();
            let (m1, m2, m3) = (metric_with_base(&g, &spd(&a)), metric_with_base(&g, &spd(&b)), metric_with_base(&g, &spd(&c)));
            let d12 = delta_distance(&m1, &m2);
            prop_assert!((d12 - delta_distance(&m2, &m1)).abs() < 1e-9);
            prop_assert!(delta_distance(&m1, &m3) <= d12 + delta_distance(&m2, &m3) + 1e-9);
        }

        #[test]
        fn left_invariance_and_projection_bound(xs in proptest::collection::vec(-2.0..2.0f64, 20), t in proptest::collection::vec(-2.0..2.0f64, 7)) {
            let g = SolTypeGroup::from_spec(&heisenberg_spec()).unwrap();
            let u = vec![DVector::from_vec(vec![0.1, 0.2, -0.3]), DVector::from_vec(vec![-0.2, 0.4])];
            let gram = gram_from_splitting(&g, &u, &DMatrix::identity(5, 5), &DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]));
            let m = SplitMetric::new(&g, gram).unwrap();
            let sg = m.group();
            let node = |c: &[f64]| GroupElement::new(
                vec![DVector::from_row_slice(&c[0..3]), DVector::from_row_slice(&c[3..5])],
                DVector::from_row_slice(&c[5..7]),
            );
            let mut coords = xs.clone();
            coords.extend_from_slice(&xs[..1]);
            let nodes = vec![node(&coords[0..7]), node(&coords[7..14]), node(&coords[13..20])];
            let path = PiecewisePath::new(nodes);
            let x = node(&t);
            let l0 = m.path_length(&path).unwrap().value;
            let l1 = m.path_length(&path.translated(sg, &x)).unwrap().value;
            prop_assert!((l0 - l1).abs() <= 1e-9 * l0.max(1.0));
            let raw = m.raw_length(&path).unwrap();
            prop_assert!(m.base_projection_length(&path) <= raw);
        }

        #[test]
        fn splitting_vectors_depend_only_on_root_values(u in proptest::collection::vec(-1.0..1.0f64, 5), x in proptest::collection::vec(-2.0..2.0f64, 2), s in -2.0..2.0f64) {
            // Graph of a subalgebra complement: a'(x) = Ad_y(x); the 𝔫ᵢ-part is
            // −αᵢ(x)(Du + ½[u, Du]), so equal αᵢ-values give equal components.
            let g = SolTypeGroup::from_spec(&heisenberg_spec()).unwrap();
            let uu = vec![DVector::from_row_slice(&u[0..3]), DVector::from_row_slice(&u[3..5])];
            let gram = gram_from_splitting(&g, &uu, &DMatrix::identity(5, 5), &DMatrix::identity(2, 2));
            let m = SplitMetric::new(&g, gram).unwrap();
            let comp = &m.splitting().complement;
            for i in 0..2 {
                let x1 = DVector::from_row_slice(&x);
                // Move along ker αᵢ.
                let root = g.root(i);
                let kernel = DVector::from_vec(vec![-root[1], root[0]]);
                let x2 = &x1 + kernel * s;
                let part = |x: &DVector<f64>| {
                    let o = g.nil_offset(i);
                    DVector::from_fn(g.factor(i).dim(), |a, _| comp[0][o + a] * x[0] + comp[1][o + a] * x[1])
                };
                prop_assert!((part(&x1) - part(&x2)).amax() < 1e-10);
            }
        }
    }
}
