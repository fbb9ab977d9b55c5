//! Real Jordan form and its absolute part `|D| = δ + ν`.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use super::GroupError;

/// Eigenvalues closer than this (relative to the matrix scale) are merged.
pub const CLUSTER_TOL: f64 = 1e-8;
/// Distinct clusters closer than this make the Jordan structure ambiguous.
const AMBIGUITY_TOL: f64 = 1e-5;
const MAX_CONDITION: f64 = 1e10;
const RESIDUAL_TOL: f64 = 1e-8;
const RANK_TOL: f64 = 1e-9;

/// One real Jordan block. Complex blocks occupy `2·size` real columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JordanBlock {
    pub re: f64,
    pub im: f64,
    pub size: usize,
    pub offset: usize,
}

impl JordanBlock {
    pub fn is_complex(&self) -> bool {
        self.im != 0.0
    }

    pub fn width(&self) -> usize {
        if self.is_complex() {
            2 * self.size
        } else {
            self.size
        }
    }
}

/// `D = P (δ + ν + σ) P⁻¹` with δ diagonal, ν strictly upper triangular and σ
/// antisymmetric, all in the Jordan basis `P`.
#[derive(Debug, Clone)]
pub struct AbsoluteJordanForm {
    pub basis: DMatrix<f64>,
    pub basis_inverse: DMatrix<f64>,
    pub abs: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub nu: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub blocks: Vec<JordanBlock>,
    pub condition: f64,
    pub residual: f64,
}

impl AbsoluteJordanForm {
    /// Smallest diagonal entry of δ.
    pub fn min_rate(&self) -> f64 {
        self.blocks.iter().map(|b| b.re).fold(f64::INFINITY, f64::min)
    }

    pub fn is_real_diagonalizable(&self) -> bool {
        self.blocks.iter().all(|b| !b.is_complex() && b.size == 1)
    }

    /// Express a Jordan-coordinate matrix in the original basis.
    pub fn to_original(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.basis * m * &self.basis_inverse
    }

    /// `e^{t|D|}` in Jordan coordinates, from the block closed form.
    pub fn exp_abs(&self, t: f64) -> DMatrix<f64> {
        let n = self.abs.nrows();
        let mut out = DMatrix::zeros(n, n);
        for b in &self.blocks {
            let step = if b.is_complex() { 2 } else { 1 };
            let scale = (b.re * t).exp();
            let mut coeff = scale;
            for k in 0..b.size {
                for r in 0..b.size - k {
                    for s in 0..step {
                        let row = b.offset + r * step + s;
                        let col = b.offset + (r + k) * step + s;
                        out[(row, col)] = coeff;
                    }
                }
                coeff *= t / (k + 1) as f64;
            }
        }
        out
    }

    /// `e^{tσ}` in Jordan coordinates (block rotations).
    pub fn exp_sigma(&self, t: f64) -> DMatrix<f64> {
        let n = self.abs.nrows();
        let mut out = DMatrix::identity(n, n);
        for b in self.blocks.iter().filter(|b| b.is_complex()) {
            let (s, c) = (b.im * t).sin_cos();
            for r in 0..b.size {
                let o = b.offset + 2 * r;
                out[(o, o)] = c;
                out[(o, o + 1)] = s;
                out[(o + 1, o)] = -s;
                out[(o + 1, o + 1)] = c;
            }
        }
        out
    }

    /// `e^{tD}` from the Jordan closed form, as an independent route to the
    /// scaling-and-squaring exponential.
    pub fn exp_closed_form(&self, t: f64) -> DMatrix<f64> {
        self.to_original(&(self.exp_abs(t) * self.exp_sigma(t)))
    }
}

/// Real Jordan decomposition of `d` with clustering tolerance [`CLUSTER_TOL`].
pub fn absolute_jordan_form(d: &DMatrix<f64>) -> Result<AbsoluteJordanForm, GroupError> {
    let n = d.nrows();
    if n == 0 || d.ncols() != n {
        return Err(GroupError::Shape("Jordan form needs a nonempty square matrix".into()));
    }
    let scale = 1.0_f64.max(d.amax());
    let eig: Vec<Complex64> = d.complex_eigenvalues().iter().copied().collect();
    let clusters = cluster(&eig, scale)?;

    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut blocks = Vec::new();
    for (center, size) in clusters {
        if center.im < 0.0 {
            continue;
        }
        if center.im == 0.0 {
            let a = d - DMatrix::identity(n, n) * center.re;
            for chain in chains(&a, size)? {
                blocks.push(JordanBlock {
                    re: center.re,
                    im: 0.0,
                    size: chain.len(),
                    offset: columns.len(),
                });
                columns.extend(chain);
            }
        } else {
            let dc = d.map(|x| Complex64::new(x, 0.0));
            let a = dc - DMatrix::identity(n, n) * center;
            for chain in chains(&a, size)? {
                blocks.push(JordanBlock {
                    re: center.re,
                    im: center.im,
                    size: chain.len(),
                    offset: columns.len(),
                });
                for p in chain {
                    columns.push(p.map(|z| z.re));
                    columns.push(p.map(|z| z.im));
                }
            }
        }
    }
    if columns.len() != n {
        return Err(GroupError::IllConditioned(format!(
            "found {} Jordan basis vectors for a {n}×{n} matrix",
            columns.len()
        )));
    }
    let basis = DMatrix::from_columns(&columns);
    let sv = basis.clone().svd(false, false).singular_values;
    let condition = sv.max() / sv.min();
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(GroupError::IllConditioned(format!(
            "Jordan basis condition number {condition:.3e}"
        )));
    }
    let basis_inverse = basis
        .clone()
        .try_inverse()
        .ok_or_else(|| GroupError::IllConditioned("singular Jordan basis".into()))?;

    let mut delta = DMatrix::zeros(n, n);
    let mut nu = DMatrix::zeros(n, n);
    let mut sigma = DMatrix::zeros(n, n);
    for b in &blocks {
        let step = if b.is_complex() { 2 } else { 1 };
        for r in 0..b.size {
            for s in 0..step {
                let i = b.offset + r * step + s;
                delta[(i, i)] = b.re;
                if r + 1 < b.size {
                    nu[(i, i + step)] = 1.0;
                }
            }
            if b.is_complex() {
                let o = b.offset + 2 * r;
                sigma[(o, o + 1)] = b.im;
                sigma[(o + 1, o)] = -b.im;
            }
        }
    }
    let j = &delta + &nu + &sigma;
    let residual = (&basis * &j * &basis_inverse - d).amax() / scale;
    if !(residual <= RESIDUAL_TOL) {
        return Err(GroupError::IllConditioned(format!(
            "Jordan reconstruction residual {residual:.3e}"
        )));
    }
    Ok(AbsoluteJordanForm {
        basis,
        basis_inverse,
        abs: &delta + &nu,
        delta,
        nu,
        sigma,
        blocks,
        condition,
        residual,
    })
}

/// Single-linkage clustering of eigenvalues; returns `(mean, multiplicity)`
/// with real clusters snapped to the real axis.
fn cluster(eig: &[Complex64], scale: f64) -> Result<Vec<(Complex64, usize)>, GroupError> {
    let n = eig.len();
    let tol = CLUSTER_TOL * scale;
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (eig[i] - eig[j]).norm() <= tol {
                let (a, b) = (root(&mut label, i), root(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<(usize, Vec<Complex64>)> = Vec::new();
    for i in 0..n {
        let r = root(&mut label, i);
        match groups.iter_mut().find(|(g, _)| *g == r) {
            Some((_, members)) => members.push(eig[i]),
            None => groups.push((r, vec![eig[i]])),
        }
    }
    let mut out: Vec<(Complex64, usize)> = groups
        .into_iter()
        .map(|(_, members)| {
            let m = members.len();
            let mut c = members.iter().sum::<Complex64>() / m as f64;
            if c.im.abs() <= tol {
                c.im = 0.0;
            }
            (c, m)
        })
        .collect();
    for i in 0..out.len() {
        for j in i + 1..out.len() {
            let gap = (out[i].0 - out[j].0).norm();
            if gap <= AMBIGUITY_TOL * scale {
                return Err(GroupError::IllConditioned(format!(
                    "eigenvalues {} and {} are {gap:.3e} apart",
                    out[i].0, out[j].0
                )));
            }
        }
    }
    out.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));
    for (c, m) in out.iter().filter(|(c, _)| c.im > 0.0) {
        let paired = out.iter().any(|(d, k)| k == m && (d.re - c.re).abs() <= tol && (d.im + c.im).abs() <= tol);
        if !paired {
            return Err(GroupError::IllConditioned(format!("eigenvalue {c} lacks its conjugate")));
        }
    }
    Ok(out)
}

/// Orthonormal basis of the numerical null space of `m`.
fn null_space<T: ComplexField<RealField = f64>>(m: &DMatrix<T>) -> Vec<DVector<T>> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let top = svd.singular_values.max();
    let tol = RANK_TOL * top.max(1.0);
    (0..n)
        .filter(|&i| svd.singular_values[i] <= tol)
        .map(|i| vt.row(i).adjoint().into_owned())
        .collect()
}

/// Orthonormal basis of the column span of `vectors`, plus the smallest
/// retained singular value.
fn orthonormal_span<T: ComplexField<RealField = f64>>(vectors: &[DVector<T>], keep: usize) -> (Vec<DVector<T>>, f64) {
    if vectors.is_empty() || keep == 0 {
        return (Vec::new(), f64::INFINITY);
    }
    let m = DMatrix::from_columns(vectors);
    let svd = m.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let keep = keep.min(svd.singular_values.len());
    let cols = (0..keep).map(|i| u.column(i).into_owned()).collect();
    (cols, svd.singular_values[keep - 1])
}

/// Jordan chains `[p₁, …, p_len]` of `a = D − λ` with `a p₁ = 0`,
/// `a p_k = p_{k−1}`, covering algebraic multiplicity `mult`.
fn chains<T: ComplexField<RealField = f64>>(a: &DMatrix<T>, mult: usize) -> Result<Vec<Vec<DVector<T>>>, GroupError> {
    let n = a.nrows();
    let mut kernels: Vec<Vec<DVector<T>>> = vec![Vec::new()];
    let mut power = DMatrix::<T>::identity(n, n);
    loop {
        power = &power * a;
        let k = null_space(&power);
        let prev = kernels.last().map_or(0, Vec::len);
        if k.len() < prev || k.len() > mult {
            return Err(GroupError::IllConditioned(format!(
                "kernel dimensions {prev} → {} inconsistent with multiplicity {mult}",
                k.len()
            )));
        }
        let done = k.len() == mult;
        let stalled = k.len() == prev;
        kernels.push(k);
        if done {
            break;
        }
        if stalled || kernels.len() > mult + 1 {
            return Err(GroupError::IllConditioned(format!(
                "generalized eigenspace has dimension {prev}, expected {mult}"
            )));
        }
    }
    let top = kernels.len() - 1;
    let at_least = |j: usize| -> usize {
        if j > top {
            0
        } else {
            kernels[j].len() - kernels[j - 1].len()
        }
    };
    let mut result: Vec<Vec<DVector<T>>> = Vec::new();
    for j in (1..=top).rev() {
        let need = at_least(j) - at_least(j + 1);
        if need == 0 {
            continue;
        }
        let mut span: Vec<DVector<T>> = kernels[j - 1].clone();
        span.extend(result.iter().map(|c| c[j - 1].clone()));
        let (q, _) = orthonormal_span(&span, span.len());
        let candidates: Vec<DVector<T>> = kernels[j]
            .iter()
            .map(|x| {
                let mut y = x.clone();
                for b in &q {
                    let c = b.dotc(&y);
                    y -= b * c;
                }
                y
            })
            .collect();
        let (fresh, smallest) = orthonormal_span(&candidates, need);
        if fresh.len() != need || smallest < 1e-6 {
            return Err(GroupError::IllConditioned(format!(
                "could not extend Jordan chains at level {j}"
            )));
        }
        for x in fresh {
            let mut chain = vec![x];
            for _ in 1..j {
                let next = a * chain.last().expect("chain is nonempty");
                chain.push(next);
            }
            chain.reverse();
            result.push(chain);
        }
    }
    result.sort_by_key(|c| std::cmp::Reverse(c.len()));
    Ok(result)
}
