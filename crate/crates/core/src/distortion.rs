//! Eventual exponential distortion constants of the nilpotent factors.
//!
//! For each factor a certificate `(C, T, a)` guarantees
//! `C · a^{αᵢ(v)} · |h| ≤ |e^{αᵢ(v)Dᵢ} h|` whenever `αᵢ(v) ≥ T`, with norms
//! taken in the factor's Gram block.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::group::{absolute_jordan_form, AbsoluteJordanForm, GroupError, NilpotentFactor};
use crate::linalg::{generalized_sym_eigenvalues, gnorm, sqrt_spd};
use crate::metric::SplitMetric;

/// Safety factor reported alongside the raw threshold `T`.
pub const T_MARGIN: f64 = 1.01;

#[derive(Debug, Error)]
pub enum DistortionError {
    #[error("factor {factor}: derivation is not diagonalizable over the reals")]
    NotDiagonalizable { factor: usize },
    #[error("factor {factor}: {source}")]
    Jordan {
        factor: usize,
        #[source]
        source: GroupError,
    },
    #[error("factor {factor}: Gram block is not positive definite")]
    BadGram { factor: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionMethod {
    Diagonalizable,
    Jordan,
}

/// Constants for one factor together with every intermediate quantity.
#[derive(Debug, Clone, Serialize)]
pub struct FactorDistortion {
    pub factor: usize,
    pub method: DistortionMethod,
    pub c: f64,
    pub t: f64,
    pub t_with_margin: f64,
    pub a: f64,
    /// Smallest real part of an eigenvalue, `|δ|`.
    pub min_rate: f64,
    /// Extreme singular values of `G^{1/2} P` for the Jordan basis `P`
    /// (diagonalizable case: extreme stretch factors of the eigenbasis).
    pub basis_stretch_lo: f64,
    pub basis_stretch_hi: f64,
    pub jordan_condition: f64,
    pub largest_block: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistortionCertificate {
    pub factors: Vec<FactorDistortion>,
    /// `|αᵢ|` in the base metric.
    pub root_norms: Vec<f64>,
    pub c: f64,
    pub t: f64,
    pub a: f64,
}

impl DistortionCertificate {
    /// Lower bound `C · a^t` for a displacement at height `t` (in units of
    /// base distance along `∇αᵢ/aᵢ`), valid for `t ≥ T`.
    pub fn bound(&self, t: f64) -> f64 {
        self.c * self.a.powf(t)
    }
}

/// Rescale every Jordan chain so its largest vector has unit `g`-norm.
fn normalized_basis(form: &AbsoluteJordanForm, gram: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = form.basis.clone();
    for b in &form.blocks {
        let cols = b.offset..b.offset + b.width();
        let s = cols
            .clone()
            .map(|c| gnorm(gram, &p.column(c).into_owned()))
            .fold(0.0, f64::max);
        if s > 0.0 {
            for c in cols {
                p.column_mut(c).scale_mut(1.0 / s);
            }
        }
    }
    p
}

fn singular_range(gram: &DMatrix<f64>, p: &DMatrix<f64>) -> (f64, f64) {
    let sv = (sqrt_spd(gram) * p).svd(false, false).singular_values;
    (sv.min(), sv.max())
}

/// `C = s_min/s_max` between `g` and the metric making a `g`-unit eigenbasis
/// orthonormal; `a = e^{min λ}`; `T = 0`.
pub fn diagonalizable_constants(
    index: usize,
    factor: &NilpotentFactor,
    gram: &DMatrix<f64>,
) -> Result<FactorDistortion, DistortionError> {
    let form = absolute_jordan_form(factor.derivation()).map_err(|source| DistortionError::Jordan { factor: index, source })?;
    if !form.is_real_diagonalizable() {
        return Err(DistortionError::NotDiagonalizable { factor: index });
    }
    let mut p = form.basis.clone();
    for mut col in p.column_iter_mut() {
        let n = gnorm(gram, &col.clone_owned());
        col.scale_mut(1.0 / n);
    }
    let pinv = p.clone().try_inverse().ok_or(DistortionError::NotDiagonalizable { factor: index })?;
    let eigen_gram = pinv.transpose() * &pinv;
    let ev = generalized_sym_eigenvalues(gram, &eigen_gram).ok_or(DistortionError::BadGram { factor: index })?;
    let lo = ev[0].max(0.0).sqrt();
    let hi = ev[ev.len() - 1].sqrt();
    let rate = form.min_rate();
    Ok(FactorDistortion {
        factor: index,
        method: DistortionMethod::Diagonalizable,
        c: lo / hi,
        t: 0.0,
        t_with_margin: 0.0,
        a: rate.exp(),
        min_rate: rate,
        basis_stretch_lo: lo,
        basis_stretch_hi: hi,
        jordan_condition: form.condition,
        largest_block: 1,
    })
}

/// `ln Σ_{k<s} t^k/k! − c·t`: log of the row sum of a size-`s` block of
/// `e^{−t|D|}` relative to `e^{−|δ|t/2}`, with `c = a − |δ|/2`.
fn block_excess(s: usize, c: f64, t: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..s {
        term *= t / k as f64;
        sum += term;
    }
    sum.ln() - c * t
}

/// Last `t ≥ 0` at which the largest absolute row sum of `e^{−t|D|}` equals
/// `e^{−|δ|t/2}`; beyond it the row sums stay below.
pub fn jordan_threshold(form: &AbsoluteJordanForm) -> f64 {
    let delta = form.min_rate();
    let mut t_max = 0.0_f64;
    for b in form.blocks.iter().filter(|b| b.size > 1) {
        let c = b.re - delta / 2.0;
        let s = b.size;
        let f = |t: f64| block_excess(s, c, t);
        let mut hi = 1.0_f64.max(2.0 * (s - 1) as f64 / c);
        while f(hi) >= 0.0 {
            hi *= 2.0;
        }
        let n = 4096;
        let mut last_positive = None;
        for k in 1..=n {
            let t = hi * k as f64 / n as f64;
            if f(t) > 0.0 {
                last_positive = Some(t);
            }
        }
        let Some(mut lo) = last_positive else { continue };
        let mut up = (lo + hi / n as f64).min(hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + up);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                up = mid;
            }
            if up - lo <= 1e-14 * up.max(1.0) {
                break;
            }
        }
        t_max = t_max.max(up);
    }
    t_max
}

/// Jordan-case constants: `a = e^{|δ|/2}`, `T` from [`jordan_threshold`] and
/// `C = κ_lo/κ_hi` with `κ` the singular values of `G^{1/2}P`.
pub fn jordan_constants(index: usize, factor: &NilpotentFactor, gram: &DMatrix<f64>) -> Result<FactorDistortion, DistortionError> {
    let form = absolute_jordan_form(factor.derivation()).map_err(|source| DistortionError::Jordan { factor: index, source })?;
    let p = normalized_basis(&form, gram);
    let (lo, hi) = singular_range(gram, &p);
    let rate = form.min_rate();
    let t = jordan_threshold(&form);
    Ok(FactorDistortion {
        factor: index,
        method: DistortionMethod::Jordan,
        c: lo / hi,
        t,
        t_with_margin: t * T_MARGIN,
        a: (rate / 2.0).exp(),
        min_rate: rate,
        basis_stretch_lo: lo,
        basis_stretch_hi: hi,
        jordan_condition: form.condition,
        largest_block: form.blocks.iter().map(|b| b.size).max().unwrap_or(1),
    })
}

/// Diagonalizable constants when available, Jordan constants otherwise.
pub fn factor_constants(index: usize, factor: &NilpotentFactor, gram: &DMatrix<f64>) -> Result<FactorDistortion, DistortionError> {
    match diagonalizable_constants(index, factor, gram) {
        Err(DistortionError::NotDiagonalizable { .. }) => jordan_constants(index, factor, gram),
        other => other,
    }
}

/// Combine per-factor constants: `C = min Cᵢ`, `T = max Tᵢ/|αᵢ|`,
/// `a = min aᵢ^{|αᵢ|}`.
pub fn uniform_certificate(metric: &SplitMetric) -> Result<DistortionCertificate, DistortionError> {
    let group = metric.group();
    let factors = group
        .factors()
        .iter()
        .enumerate()
        .map(|(i, f)| factor_constants(i, f, metric.factor_gram(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let root_norms: Vec<f64> = (0..group.n_factors()).map(|i| metric.magnitude(i)).collect();
    let c = factors.iter().map(|f| f.c).fold(f64::INFINITY, f64::min);
    let t = factors
        .iter()
        .zip(&root_norms)
        .map(|(f, n)| f.t / n)
        .fold(0.0, f64::max);
    let a = factors
        .iter()
        .zip(&root_norms)
        .map(|(f, n)| f.a.powf(*n))
        .fold(f64::INFINITY, f64::min);
    Ok(DistortionCertificate {
        factors,
        root_norms,
        c,
        t,
        a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::tests::abelian_factor;
    use crate::group::{GroupSpec, SolTypeGroup};
    use crate::linalg::op_norm;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(derivation: &[f64], dim: usize) -> SolTypeGroup {
        let spec = GroupSpec {
            name: None,
            rank: 2,
            factors: vec![abelian_factor(derivation, dim, &[1.0, 0.0])],
        };
        SolTypeGroup::from_spec(&spec).unwrap()
    }

    fn check_inequality(f: &FactorDistortion, d: &DMatrix<f64>, gram: &DMatrix<f64>, samples: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = d.nrows();
        for _ in 0..samples {
            let t = f.t + rng.random_range(0.0..10.0);
            let h = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let lhs = f.c * f.a.powf(t) * gnorm(gram, &h);
            let rhs = gnorm(gram, &((d * t).exp() * &h));
            assert!(lhs <= rhs * (1.0 + 1e-9), "t={t}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn orthonormal_eigenbasis_gives_unit_constant() {
        let g = single(&[1.0, 0.0, 0.0, 2.0], 2);
        let f = diagonalizable_constants(0, g.factor(0), &DMatrix::identity(2, 2)).unwrap();
        assert!((f.c - 1.0).abs() < 1e-12);
        assert!((f.a - std::f64::consts::E).abs() < 1e-12);
        assert_eq!(f.t, 0.0);
    }

    #[test]
    fn skewed_gram_constant() {
        let g = single(&[1.0, 0.0, 0.0, 2.0], 2);
        let gram = DMatrix::from_row_slice(2, 2, &[9.0, 0.0, 0.0, 1.0]);
        let f = diagonalizable_constants(0, g.factor(0), &gram).unwrap();
        // The eigenbasis is g-orthogonal, so unit-g eigenvectors make C = 1.
        assert!((f.c - 1.0).abs() < 1e-12);
        check_inequality(&f, g.factor(0).derivation(), &gram, 1000, 1);

        // Non-orthogonal eigenbasis: compare with the brute-force infimum.
        let gram = DMatrix::from_row_slice(2, 2, &[2.0, 0.9, 0.9, 1.0]);
        let f = diagonalizable_constants(0, g.factor(0), &gram).unwrap();
        assert!(f.c < 1.0 && f.c > 0.0);
        check_inequality(&f, g.factor(0).derivation(), &gram, 1000, 2);
    }

    #[test]
    fn jordan_block_threshold_matches_bisection_oracle() {
        let g = single(&[1.0, 1.0, 0.0, 1.0], 2);
        let f = factor_constants(0, g.factor(0), &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(f.method, DistortionMethod::Jordan);
        // Independent bisection on 1 + t = e^{t/2} from a bracket [1, 4].
        let (mut lo, mut hi) = (1.0_f64, 4.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 1.0 + mid > (mid / 2.0).exp() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((f.t - lo).abs() < 1e-8, "{} vs {lo}", f.t);
        assert!((f.a - 0.5_f64.exp()).abs() < 1e-15);
        check_inequality(&f, g.factor(0).derivation(), &DMatrix::identity(2, 2), 1000, 3);
    }

    #[test]
    fn jordan_closed_form_matches_expm() {
        let d = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let form = absolute_jordan_form(&d).unwrap();
        for k in 0..=40 {
            let t = k as f64 * 0.5;
            let a = (&d * t).exp();
            let b = form.exp_closed_form(t);
            assert!((&a - &b).amax() <= 1e-8 * a.amax());
        }
    }

    #[test]
    fn sigma_flow_stays_bounded() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, -3.0, 0.5, 1.0]);
        let form = absolute_jordan_form(&d).unwrap();
        let band = form.condition;
        for k in 0..=200 {
            let t = k as f64 * 0.1;
            let n = op_norm(&form.to_original(&form.exp_sigma(t)));
            assert!(n <= band * (1.0 + 1e-9) && n >= 1.0 / band * (1.0 - 1e-9));
        }
    }

    #[test]
    fn rotation_scaling_factor_is_certified() {
        let g = single(&[1.0, -2.0, 2.0, 1.0], 2);
        let gram = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let f = factor_constants(0, g.factor(0), &gram).unwrap();
        assert_eq!(f.method, DistortionMethod::Jordan);
        assert_eq!(f.t, 0.0);
        check_inequality(&f, g.factor(0).derivation(), &gram, 1000, 4);
    }

    #[test]
    fn single_factor_uniform_certificate() {
        let g = single(&[1.0], 1);
        let m = SplitMetric::new(&g, DMatrix::identity(3, 3)).unwrap();
        let cert = uniform_certificate(&m).unwrap();
        assert_eq!((cert.c, cert.t), (1.0, 0.0));
        assert!((cert.a - std::f64::consts::E).abs() < 1e-15);
    }
}
