//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

/// Symmetric part `(m + mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Quadratic form `xᵀ G x`.
pub fn quad(g: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let gx = g * x;
    x.dot(&gx)
}

/// Norm of `x` in the inner product given by `g`.
pub fn gnorm(g: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    quad(g, x).max(0.0).sqrt()
}

/// Generalized eigenvalues of the symmetric pencil `(a, b)` with `b` positive
/// definite, sorted ascending.
pub fn generalized_sym_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<Vec<f64>> {
    let chol = symmetrize(b).cholesky()?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let m = symmetrize(&(&linv * a * linv.transpose()));
    let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Some(ev)
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Operator 2-norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// True when all off-diagonal entries vanish.
pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Matrix exponential `exp(t·m)`, with a fast path for diagonal `m`.
pub fn expm_scaled(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    if is_diagonal(m) {
        DMatrix::from_diagonal(&m.diagonal().map(|d| (d * t).exp()))
    } else {
        (m * t).exp()
    }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.len() < 2 {
        return (0.0, y.first().copied().unwrap_or(0.0));
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Double factorial, with `(-1)!! = 0!! = 1`.
pub fn double_factorial(n: i64) -> f64 {
    let mut acc = 1.0;
    let mut k = n;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}
