//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Result, RjmError};

/// Cholesky factorization; on failure retries once with a diagonal jitter
/// proportional to the mean diagonal.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let p = m.nrows().max(1);
    let jitter = 1e-10 * (m.trace().abs() / p as f64).max(f64::MIN_POSITIVE);
    let mut loaded = m.clone();
    for i in 0..m.nrows() {
        loaded[(i, i)] += jitter;
    }
    Cholesky::new(loaded).ok_or_else(|| {
        RjmError::Singular(format!("{}x{} system is not positive definite", m.nrows(), m.ncols()))
    })
}

/// log-determinant from a Cholesky factor.
pub fn chol_log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let c = Cholesky::new(m.clone()).ok_or_else(|| {
        RjmError::Singular(format!("{}x{} matrix is not positive definite", m.nrows(), m.ncols()))
    })?;
    let log_det = chol_log_det(&c);
    let mut inv = c.inverse();
    symmetrize(&mut inv);
    Ok((inv, log_det))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let p = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..p {
        for j in (i + 1)..p {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// `Σ_i w_i x_i / Σ_i w_i` over the rows of `x`.
pub fn weighted_mean(x: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    let total: f64 = w.sum();
    let mut mu = x.tr_mul(w);
    mu /= total;
    mu
}

/// `Σ_i w_i (x_i - mu)(x_i - mu)^T / Σ_i w_i`.
pub fn weighted_covariance(x: &DMatrix<f64>, w: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let total: f64 = w.sum();
    let n = x.nrows();
    let p = x.ncols();
    let mut centered = DMatrix::<f64>::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            centered[(i, j)] = (x[(i, j)] - mu[j]) * w[i].sqrt();
        }
    }
    let mut s = centered.tr_mul(&centered);
    s /= total;
    symmetrize(&mut s);
    s
}

/// `X^T diag(w) X`.
pub fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let mut scaled = DMatrix::<f64>::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            scaled[(i, j)] = x[(i, j)] * w[i].sqrt();
        }
    }
    let mut g = scaled.tr_mul(&scaled);
    symmetrize(&mut g);
    g
}

/// `X^T diag(w) v`.
pub fn weighted_xtv(x: &DMatrix<f64>, w: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let wv = w.component_mul(v);
    x.tr_mul(&wv)
}

/// Column standard deviations (population form); zero-variance columns map to 1.
pub fn column_scales(x: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let mut means = DVector::zeros(p);
    let mut sds = DVector::zeros(p);
    for j in 0..p {
        let col = x.column(j);
        let m = col.sum() / n;
        let v = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        means[j] = m;
        sds[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
    }
    (means, sds)
}

pub fn standardize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (means, sds) = column_scales(x);
    let mut z = x.clone();
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            z[(i, j)] = (x[(i, j)] - means[j]) / sds[j];
        }
    }
    z
}

/// Rows of `x` selected by `idx`.
pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}
