//! Per-group regression updates: weighted lasso in the scaled parametrization,
//! the closed-form `rho`/`chi` steps, the random-penalty update, CV penalties
//! for the fixed-penalty scheme, and the Normal-Jeffreys updates.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RjmError};
use crate::linalg;

/// `β² < NJ_ZERO_THRESHOLD` zeroes a Normal-Jeffreys coefficient for good.
pub const NJ_ZERO_THRESHOLD: f64 = 1e-10;
pub const SIGMA2_FLOOR: f64 = 1e-12;
/// Stand-in for `‖β‖₁` when it is exactly zero in the random-penalty update.
pub const RLASSO_L1_FLOOR: f64 = 1e-8;

fn weight_sum(weights: &DVector<f64>) -> Result<f64> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(RjmError::domain("weights must be finite and non-negative"));
    }
    let total = weights.sum();
    if !(total > 0.0) {
        return Err(RjmError::domain("weights sum to zero"));
    }
    Ok(total)
}

fn check_shapes(x: &DMatrix<f64>, y: &DVector<f64>, weights: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() || weights.len() != y.len() {
        return Err(RjmError::Dimension(format!(
            "X is {}x{}, y has {} entries, weights have {}",
            x.nrows(),
            x.ncols(),
            y.len(),
            weights.len()
        )));
    }
    Ok(())
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Result of coordinate descent on `½ bᵀ G b − cᵀ b + λ‖b‖₁`.
#[derive(Debug, Clone)]
pub struct CdOutcome {
    pub coef: DVector<f64>,
    pub sweeps: usize,
    pub violation: f64,
    pub converged: bool,
}

/// Largest per-coordinate violation of the lasso stationarity conditions for
/// `½ bᵀ G b − cᵀ b + λ‖b‖₁`.
pub fn kkt_violation(g: &DMatrix<f64>, c: &DVector<f64>, coef: &DVector<f64>, lambda: f64) -> f64 {
    let grad = g * coef - c;
    let mut worst = 0.0f64;
    for j in 0..coef.len() {
        let v = if coef[j] == 0.0 {
            (grad[j].abs() - lambda).max(0.0)
        } else {
            (grad[j] + lambda * coef[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Covariance-update coordinate descent on a Gram-form lasso.
pub fn gram_lasso_cd(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    lambda: f64,
    warm: Option<&DVector<f64>>,
    tol: f64,
    max_sweeps: usize,
) -> CdOutcome {
    let p = c.len();
    let diag_scale = (0..p).map(|j| g[(j, j)]).fold(0.0f64, f64::max);
    let dead = |j: usize| g[(j, j)] <= 1e-14 * diag_scale.max(f64::MIN_POSITIVE);
    let mut coef = match warm {
        Some(w) if w.len() == p => w.clone(),
        _ => DVector::zeros(p),
    };
    for j in 0..p {
        if dead(j) {
            coef[j] = 0.0;
        }
    }
    let mut gb = g * &coef;
    let mut violation = kkt_violation(g, c, &coef, lambda);
    if violation <= tol {
        return CdOutcome {
            coef,
            sweeps: 0,
            violation,
            converged: true,
        };
    }
    for sweep in 1..=max_sweeps {
        for j in 0..p {
            if dead(j) {
                continue;
            }
            let gjj = g[(j, j)];
            let old = coef[j];
            let z = c[j] - gb[j] + gjj * old;
            let new = soft_threshold(z, lambda) / gjj;
            let delta = new - old;
            if delta != 0.0 {
                coef[j] = new;
                gb.axpy(delta, &g.column(j), 1.0);
            }
        }
        gb = g * &coef;
        violation = kkt_violation(g, c, &coef, lambda);
        if violation <= tol {
            return CdOutcome {
                coef,
                sweeps: sweep,
                violation,
                converged: true,
            };
        }
    }
    CdOutcome {
        coef,
        sweeps: max_sweeps,
        violation,
        converged: false,
    }
}

/// `min_φ ½‖M^½(ρy − χ1 − Xφ)‖² + λ‖φ‖₁`.
#[derive(Debug, Clone)]
pub struct WeightedLassoProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub weights: &'a DVector<f64>,
    pub chi: f64,
    pub rho: f64,
    pub lambda: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl<'a> WeightedLassoProblem<'a> {
    pub fn new(
        x: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        weights: &'a DVector<f64>,
        chi: f64,
        rho: f64,
        lambda: f64,
    ) -> Self {
        Self {
            x,
            y,
            weights,
            chi,
            rho,
            lambda,
            tol: 1e-7,
            max_sweeps: 1000,
        }
    }

    /// Gram form `(XᵀMX, XᵀM(ρy − χ1))`.
    pub fn gram(&self) -> (DMatrix<f64>, DVector<f64>) {
        let target = self.y * self.rho - DVector::from_element(self.y.len(), self.chi);
        (
            linalg::weighted_gram(self.x, self.weights),
            linalg::weighted_xtv(self.x, self.weights, &target),
        )
    }

    pub fn objective(&self, phi: &DVector<f64>) -> f64 {
        let mut rss = 0.0;
        for i in 0..self.y.len() {
            let fit: f64 = self.x.row(i).iter().zip(phi.iter()).map(|(a, b)| a * b).sum();
            let r = self.rho * self.y[i] - self.chi - fit;
            rss += self.weights[i] * r * r;
        }
        0.5 * rss + self.lambda * phi.abs().sum()
    }
}

pub fn weighted_lasso_cd(prob: &WeightedLassoProblem<'_>, warm: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    check_shapes(prob.x, prob.y, prob.weights)?;
    weight_sum(prob.weights)?;
    if !(prob.rho > 0.0) || !(prob.lambda >= 0.0) {
        return Err(RjmError::domain(format!(
            "lasso needs rho > 0 and lambda >= 0, got rho = {}, lambda = {}",
            prob.rho, prob.lambda
        )));
    }
    let (g, c) = prob.gram();
    let out = gram_lasso_cd(&g, &c, prob.lambda, warm, prob.tol, prob.max_sweeps);
    if out.converged {
        Ok(out.coef)
    } else {
        Err(RjmError::LassoNotConverged {
            sweeps: out.sweeps,
            violation: out.violation,
            phi: Box::new(out.coef),
        })
    }
}

/// Positive root of `a ρ² − b ρ − (n_k + p + 2) = 0` with `a = yᵀMy` and
/// `b = yᵀM(χ1 + Xφ)`: the maximizer of the scaled objective in `ρ`.
pub fn update_rho(
    y: &DVector<f64>,
    weights: &DVector<f64>,
    chi: f64,
    phi: &DVector<f64>,
    x: &DMatrix<f64>,
    p_dim: usize,
) -> Result<f64> {
    check_shapes(x, y, weights)?;
    let n_k = weight_sum(weights)?;
    let fit = x * phi;
    let mut a = 0.0;
    let mut b = 0.0;
    for i in 0..y.len() {
        a += weights[i] * y[i] * y[i];
        b += weights[i] * y[i] * (chi + fit[i]);
    }
    if !(a > 0.0) {
        return Err(RjmError::domain("yᵀMy is zero; rho is unbounded"));
    }
    let e = n_k + p_dim as f64 + 2.0;
    let disc = (b * b + 4.0 * a * e).sqrt();
    // Rationalized form of (b + disc) / 2a when b < 0 avoids cancellation.
    let rho = if b >= 0.0 { (b + disc) / (2.0 * a) } else { 2.0 * e / (disc - b) };
    Ok(rho)
}

/// Weighted mean of `ρy − Xφ`.
pub fn update_chi(y: &DVector<f64>, x: &DMatrix<f64>, weights: &DVector<f64>, rho: f64, phi: &DVector<f64>) -> Result<f64> {
    check_shapes(x, y, weights)?;
    let n_k = weight_sum(weights)?;
    let fit = x * phi;
    let total: f64 = (0..y.len()).map(|i| weights[i] * (rho * y[i] - fit[i])).sum();
    Ok(total / n_k)
}

/// Random-penalty update `λ = c σ √(2 log p / n_k) / ‖β‖₁`, capped when `‖β‖₁ = 0`.
pub fn rlasso_lambda(beta_l1: f64, sigma: f64, p_dim: usize, n_k: f64, c: f64) -> Result<f64> {
    if !(beta_l1 >= 0.0) || !(sigma > 0.0) || !(n_k > 0.0) || !(c > 0.0) || p_dim == 0 {
        return Err(RjmError::domain(format!(
            "invalid penalty inputs: |beta|_1 = {beta_l1}, sigma = {sigma}, n_k = {n_k}, c = {c}, p = {p_dim}"
        )));
    }
    let l1 = if beta_l1 > 0.0 { beta_l1 } else { RLASSO_L1_FLOOR };
    Ok(c * sigma * (2.0 * (p_dim as f64).ln() / n_k).sqrt() / l1)
}

/// Plain lasso with an unpenalized intercept, `RSS/(2n) + λ‖β‖₁`.
#[derive(Debug, Clone)]
pub struct PlainLasso {
    pub intercept: f64,
    pub beta: DVector<f64>,
}

impl PlainLasso {
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.beta + DVector::from_element(x.nrows(), self.intercept)
    }
}

/// Fits the lasso at every penalty in `lambdas` (descending), warm-starting along the path.
pub fn lasso_path(x: &DMatrix<f64>, y: &DVector<f64>, lambdas: &[f64]) -> Result<Vec<PlainLasso>> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(RjmError::Dimension(format!("X has {n} rows, y has {}", y.len())));
    }
    let nf = n as f64;
    let (xc, x_mean) = center_columns(x);
    let y_mean = y.mean();
    let yc = y.map(|v| v - y_mean);
    let mut g = xc.tr_mul(&xc) / nf;
    linalg::symmetrize(&mut g);
    let c = xc.tr_mul(&yc) / nf;
    let tol = 1e-9 * (yc.norm_squared() / nf).max(1e-300).sqrt();
    let mut warm: Option<DVector<f64>> = None;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let fit = gram_lasso_cd(&g, &c, lambda, warm.as_ref(), tol, 1000);
        let beta = fit.coef;
        let intercept = y_mean - x_mean.dot(&beta);
        warm = Some(beta.clone());
        out.push(PlainLasso { intercept, beta });
    }
    Ok(out)
}

pub fn lasso_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<PlainLasso> {
    Ok(lasso_path(x, y, &[lambda])?.remove(0))
}

fn center_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.nrows() as f64;
    let means = DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n);
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - means[j]);
    (centered, means)
}

/// Log-spaced grid from `max_j |x_jᵀ(y − ȳ)| / n` down four decades.
pub fn lambda_grid(x: &DMatrix<f64>, y: &DVector<f64>, grid_size: usize) -> Vec<f64> {
    let n = x.nrows() as f64;
    let y_mean = y.mean();
    let yc = y.map(|v| v - y_mean);
    let (xc, _) = center_columns(x);
    let lmax = xc.tr_mul(&yc).abs().max() / n;
    let lmax = if lmax > 0.0 { lmax } else { 1e-8 };
    let size = grid_size.max(2);
    (0..size)
        .map(|i| lmax * 10f64.powf(-4.0 * i as f64 / (size - 1) as f64))
        .collect()
}

/// K-fold CV of the plain lasso on one data set; returns the selected
/// penalty and the grid with its pooled CV errors. Ties go to the larger penalty.
pub fn lasso_cv(x: &DMatrix<f64>, y: &DVector<f64>, folds: usize, grid_size: usize, seed: u64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = x.nrows();
    if folds < 2 || n < folds {
        return Err(RjmError::domain(format!("{n} samples cannot be split into {folds} folds")));
    }
    let grid = lambda_grid(x, y, grid_size);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let mut sse = vec![0.0; grid.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let xt = linalg::select_rows(x, &train);
        let yt = linalg::select_entries(y, &train);
        let xv = linalg::select_rows(x, &test);
        let yv = linalg::select_entries(y, &test);
        for (slot, fit) in sse.iter_mut().zip(lasso_path(&xt, &yt, &grid)?) {
            let r = &yv - fit.predict(&xv);
            *slot += r.norm_squared();
        }
    }
    let errors: Vec<f64> = sse.iter().map(|s| s / n as f64).collect();
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = i;
        }
    }
    Ok((grid[best], grid, errors))
}

/// Per-group CV penalties (in the `RSS/(2n)` scale) on hard-assigned subsets.
pub fn flasso_cv(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    hard_labels: &[usize],
    k: usize,
    folds: usize,
    grid_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if hard_labels.len() != x.nrows() || y.len() != x.nrows() {
        return Err(RjmError::Dimension("labels, X and y must have the same length".into()));
    }
    (0..k)
        .map(|g| {
            let idx: Vec<usize> = (0..hard_labels.len()).filter(|&i| hard_labels[i] == g).collect();
            if idx.len() < folds.max(2) {
                return Err(RjmError::domain(format!(
                    "group has {} members, fewer than the {folds} CV folds",
                    idx.len()
                ))
                .in_group(g));
            }
            let xg = linalg::select_rows(x, &idx);
            let yg = linalg::select_entries(y, &idx);
            let stream = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(g as u64);
            lasso_cv(&xg, &yg, folds, grid_size, stream)
                .map(|(lambda, _, _)| lambda)
                .map_err(|e| e.in_group(g))
        })
        .collect()
}

/// Converts a CV penalty on one group to the scaled-objective penalty
/// `λ = n_k λ_cv / σ̂`, with `σ̂² = RSS/n_k` of the group refit at `λ_cv`.
pub fn scaled_penalty(x: &DMatrix<f64>, y: &DVector<f64>, lambda_cv: f64) -> Result<f64> {
    let fit = lasso_fit(x, y, lambda_cv)?;
    let n = x.nrows() as f64;
    let rss = (y - fit.predict(x)).norm_squared();
    let sigma = (rss / n).max(SIGMA2_FLOOR).sqrt();
    Ok(n * lambda_cv / sigma)
}

/// Ridge fit on centered data; returns `(alpha, beta, rss / n)`.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<(f64, DVector<f64>, f64)> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(RjmError::Dimension(format!("X has {n} rows, y has {}", y.len())));
    }
    let (xc, x_mean) = center_columns(x);
    let y_mean = y.mean();
    let yc = y.map(|v| v - y_mean);
    let mut a = xc.tr_mul(&xc);
    for j in 0..a.nrows() {
        a[(j, j)] += lambda;
    }
    let chol = linalg::cholesky_jittered(&a)?;
    let beta = chol.solve(&xc.tr_mul(&yc));
    let alpha = y_mean - x_mean.dot(&beta);
    let rss = (yc - xc * &beta).norm_squared();
    Ok((alpha, beta, rss / n as f64))
}

/// Normal-Jeffreys latent state: `u_j = β_j²` from the previous iterate plus
/// the set of coefficients zeroed for good.
#[derive(Debug, Clone, PartialEq)]
pub struct NjState {
    pub u_diag: DVector<f64>,
    pub zero_mask: Vec<bool>,
}

impl NjState {
    pub fn from_beta(beta: &DVector<f64>) -> Self {
        let mut state = Self {
            u_diag: DVector::zeros(beta.len()),
            zero_mask: vec![false; beta.len()],
        };
        state.absorb(beta);
        state
    }

    /// Records `β` as the new `U` diagonal; zeros are absorbing.
    fn absorb(&mut self, beta: &DVector<f64>) {
        for j in 0..beta.len() {
            let b2 = beta[j] * beta[j];
            if self.zero_mask[j] || b2 < NJ_ZERO_THRESHOLD {
                self.zero_mask[j] = true;
                self.u_diag[j] = 0.0;
            } else {
                self.u_diag[j] = b2;
            }
        }
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.zero_mask.len()).filter(|&j| !self.zero_mask[j]).collect()
    }

    /// `βᵀVβ` with `V = U⁻¹` over the active coordinates.
    pub fn penalty(&self, beta: &DVector<f64>) -> f64 {
        self.active()
            .into_iter()
            .map(|j| if self.u_diag[j] > 0.0 { beta[j] * beta[j] / self.u_diag[j] } else { 0.0 })
            .sum()
    }
}

/// Weighted RSS at `(alpha, beta)` divided by `n_k + 2`, floored at [`SIGMA2_FLOOR`].
pub fn nj_sigma_update(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    weights: &DVector<f64>,
    alpha_prev: f64,
    beta_prev: &DVector<f64>,
) -> Result<f64> {
    check_shapes(x, y, weights)?;
    let n_k = weight_sum(weights)?;
    let fit = x * beta_prev;
    let rss: f64 = (0..y.len())
        .map(|i| {
            let r = y[i] - alpha_prev - fit[i];
            weights[i] * r * r
        })
        .sum();
    Ok((rss / (n_k + 2.0)).max(SIGMA2_FLOOR))
}

/// Weighted mean of `y − Xβ`.
pub fn nj_alpha_update(y: &DVector<f64>, x: &DMatrix<f64>, weights: &DVector<f64>, beta_prev: &DVector<f64>) -> Result<f64> {
    check_shapes(x, y, weights)?;
    let n_k = weight_sum(weights)?;
    let fit = x * beta_prev;
    let total: f64 = (0..y.len()).map(|i| weights[i] * (y[i] - fit[i])).sum();
    Ok(total / n_k)
}

/// Which linear system the Normal-Jeffreys coefficient update solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NjForm {
    /// `p × p` when the sample count is at least the active dimension, else `n × n`.
    Auto,
    /// `β = D(σ²I + DGD)⁻¹D r` with `D = U^½`, `G = XᵀMX`, `r = XᵀM(y − α)`.
    Primal,
    /// `β = U Zᵀ(σ²I + Z U Zᵀ)⁻¹ z` with `Z = M^½X`, `z = M^½(y − α)`.
    Dual,
}

pub fn nj_beta_update(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    weights: &DVector<f64>,
    sigma2_new: f64,
    alpha_new: f64,
    state: &NjState,
) -> Result<(DVector<f64>, NjState)> {
    nj_beta_update_with(y, x, weights, sigma2_new, alpha_new, state, NjForm::Auto)
}

pub fn nj_beta_update_with(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    weights: &DVector<f64>,
    sigma2_new: f64,
    alpha_new: f64,
    state: &NjState,
    form: NjForm,
) -> Result<(DVector<f64>, NjState)> {
    check_shapes(x, y, weights)?;
    weight_sum(weights)?;
    let p = x.ncols();
    if state.u_diag.len() != p || state.zero_mask.len() != p {
        return Err(RjmError::Dimension(format!("state has length {}, X has {p} columns", state.u_diag.len())));
    }
    if !(sigma2_new > 0.0) {
        return Err(RjmError::domain(format!("sigma2 must be positive, got {sigma2_new}")));
    }
    let active: Vec<usize> = state.active().into_iter().filter(|&j| state.u_diag[j] > 0.0).collect();
    let mut beta = DVector::zeros(p);
    if !active.is_empty() {
        let n = y.len();
        let use_primal = match form {
            NjForm::Primal => true,
            NjForm::Dual => false,
            NjForm::Auto => n >= active.len(),
        };
        let xa = DMatrix::from_fn(n, active.len(), |i, j| x[(i, active[j])]);
        let d = DVector::from_fn(active.len(), |j, _| state.u_diag[active[j]].sqrt());
        let resid = y.map(|v| v - alpha_new);
        let beta_a = if use_primal {
            let g = linalg::weighted_gram(&xa, weights);
            let r = linalg::weighted_xtv(&xa, weights, &resid);
            let m = active.len();
            let mut a = DMatrix::from_fn(m, m, |i, j| d[i] * g[(i, j)] * d[j]);
            for i in 0..m {
                a[(i, i)] += sigma2_new;
            }
            let chol = linalg::cholesky_jittered(&a)?;
            let dr = d.component_mul(&r);
            d.component_mul(&chol.solve(&dr))
        } else {
            let sw = weights.map(f64::sqrt);
            // Zd = M^½ X_A D
            let zd = DMatrix::from_fn(n, active.len(), |i, j| sw[i] * xa[(i, j)] * d[j]);
            let z = sw.component_mul(&resid);
            let mut a = &zd * zd.transpose();
            linalg::symmetrize(&mut a);
            for i in 0..n {
                a[(i, i)] += sigma2_new;
            }
            let chol = linalg::cholesky_jittered(&a)?;
            d.component_mul(&zd.tr_mul(&chol.solve(&z)))
        };
        for (j, &col) in active.iter().enumerate() {
            beta[col] = beta_a[j];
        }
    }
    let mut next = state.clone();
    next.absorb(&beta);
    for j in 0..p {
        if next.zero_mask[j] {
            beta[j] = 0.0;
        }
    }
    Ok((beta, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - 0.5 * x[(i, 1 % p)] + rng.sample::<f64, _>(StandardNormal));
        let w = DVector::from_fn(n, |_, _| rng.random_range(0.05..1.0));
        (x, y, w)
    }

    #[test]
    fn large_penalty_gives_zero() {
        let (x, y, w) = problem(40, 6, 1);
        let (_, c) = WeightedLassoProblem::new(&x, &y, &w, 0.3, 1.2, 0.0).gram();
        let lmax = c.abs().max();
        let prob = WeightedLassoProblem::new(&x, &y, &w, 0.3, 1.2, lmax);
        let phi = weighted_lasso_cd(&prob, None).unwrap();
        assert!(phi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn orthonormal_design_soft_thresholds() {
        // Columns of a scaled Hadamard-like design are orthonormal.
        let x = DMatrix::from_row_slice(4, 2, &[0.5, 0.5, 0.5, -0.5, 0.5, 0.5, 0.5, -0.5]);
        let y = DVector::from_vec(vec![3.0, -1.0, 2.0, 0.5]);
        let w = DVector::from_element(4, 1.0);
        let (rho, lambda) = (0.7, 0.2);
        let mut prob = WeightedLassoProblem::new(&x, &y, &w, 0.0, rho, lambda);
        prob.tol = 1e-13;
        let phi = weighted_lasso_cd(&prob, None).unwrap();
        for j in 0..2 {
            let z: f64 = (0..4).map(|i| x[(i, j)] * rho * y[i]).sum();
            let expect = z.signum() * (z.abs() - lambda).max(0.0);
            assert!((phi[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_penalty_is_weighted_least_squares() {
        let (x, y, _) = problem(50, 5, 2);
        let w = DVector::from_element(50, 1.0);
        let mut prob = WeightedLassoProblem::new(&x, &y, &w, 0.1, 1.5, 0.0);
        prob.tol = 1e-10;
        let phi = weighted_lasso_cd(&prob, None).unwrap();
        let target = &y * 1.5 - DVector::from_element(50, 0.1);
        let ols = (x.transpose() * &x).lu().solve(&(x.transpose() * target)).unwrap();
        assert!((phi - ols).abs().max() < 1e-6);
    }

    #[test]
    fn rejects_zero_weights() {
        let (x, y, _) = problem(10, 3, 3);
        let w = DVector::zeros(10);
        let prob = WeightedLassoProblem::new(&x, &y, &w, 0.0, 1.0, 0.1);
        assert!(matches!(weighted_lasso_cd(&prob, None), Err(RjmError::Domain(_))));
    }

    #[test]
    fn rho_closed_form_special_case() {
        let n = 8;
        let p = 3;
        let mut y = DVector::from_fn(n, |i, _| (i as f64) - 3.0);
        let target = (n + p + 2) as f64;
        y *= (target / y.norm_squared()).sqrt();
        let x = DMatrix::zeros(n, p);
        let w = DVector::from_element(n, 1.0);
        let rho = update_rho(&y, &w, 0.0, &DVector::zeros(p), &x, p).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        assert!(update_rho(&DVector::zeros(n), &w, 0.0, &DVector::zeros(p), &x, p).is_err());
    }

    #[test]
    fn chi_special_cases() {
        let (x, y, _) = problem(10, 3, 4);
        let ones = DVector::from_element(10, 1.0);
        let chi = update_chi(&y, &x, &ones, 2.0, &DVector::zeros(3)).unwrap();
        assert!((chi - 2.0 * y.mean()).abs() < 1e-12);
        let mut hot = DVector::zeros(10);
        hot[4] = 1.0;
        let phi = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let chi = update_chi(&y, &x, &hot, 2.0, &phi).unwrap();
        let expect = 2.0 * y[4] - x.row(4).transpose().dot(&phi);
        assert!((chi - expect).abs() < 1e-12);
    }

    #[test]
    fn rlasso_penalty_formula() {
        // p = 2 and n_k = 2 log 2 make the root factor exactly one.
        let lam = rlasso_lambda(1.0, 1.0, 2, 2.0 * 2f64.ln(), 0.25).unwrap();
        assert!((lam - 0.25).abs() < 1e-15);
        let a = rlasso_lambda(1.5, 0.7, 10, 40.0, 0.25).unwrap();
        let b = rlasso_lambda(3.0, 0.7, 10, 40.0, 0.25).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-15);
        let capped = rlasso_lambda(0.0, 1.0, 10, 40.0, 0.25).unwrap();
        assert!((capped - 0.25 * (2.0 * 10f64.ln() / 40.0).sqrt() / 1e-8).abs() < 1e-6);
    }

    #[test]
    fn nj_sigma_alpha_basic() {
        let (x, y, _) = problem(12, 3, 5);
        let ones = DVector::from_element(12, 1.0);
        let zero = DVector::zeros(3);
        let s2 = nj_sigma_update(&y, &x, &ones, 0.0, &zero).unwrap();
        assert!((s2 - y.norm_squared() / 14.0).abs() < 1e-12);
        let a = nj_alpha_update(&y, &x, &ones, &zero).unwrap();
        assert!((a - y.mean()).abs() < 1e-12);
        let exact = DVector::from_fn(12, |i, _| 1.0 + 2.0 * x[(i, 0)]);
        let beta = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        assert_eq!(nj_sigma_update(&exact, &x, &ones, 1.0, &beta).unwrap(), SIGMA2_FLOOR);
    }

    #[test]
    fn nj_beta_zero_state_and_ols_limit() {
        let (x, y, _) = problem(100, 5, 6);
        let ones = DVector::from_element(100, 1.0);
        let zero_state = NjState::from_beta(&DVector::zeros(5));
        let (b, _) = nj_beta_update(&y, &x, &ones, 1.0, 0.0, &zero_state).unwrap();
        assert!(b.iter().all(|v| *v == 0.0));

        let state = NjState {
            u_diag: DVector::from_element(5, 1e6),
            zero_mask: vec![false; 5],
        };
        let alpha = 0.3;
        let (b, _) = nj_beta_update(&y, &x, &ones, 1e-6, alpha, &state).unwrap();
        let r = y.map(|v| v - alpha);
        let ols = (x.transpose() * &x).lu().solve(&(x.transpose() * r)).unwrap();
        assert!((b - ols).abs().max() < 1e-4);
    }

    #[test]
    fn nj_forms_agree() {
        for seed in 0..10 {
            let (x, y, w) = problem(20, 30, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = DVector::from_fn(30, |_, _| rng.random_range(0.01..2.0));
            let state = NjState {
                u_diag: u,
                zero_mask: vec![false; 30],
            };
            let (a, _) = nj_beta_update_with(&y, &x, &w, 0.8, 0.1, &state, NjForm::Primal).unwrap();
            let (b, _) = nj_beta_update_with(&y, &x, &w, 0.8, 0.1, &state, NjForm::Dual).unwrap();
            assert!((a - b).abs().max() < 1e-8);
        }
    }

    #[test]
    fn nj_zeros_are_absorbing() {
        let (x, y, _) = problem(30, 4, 7);
        let ones = DVector::from_element(30, 1.0);
        let mut state = NjState::from_beta(&DVector::from_vec(vec![1.0, 0.0, 0.5, 1e-6]));
        assert_eq!(state.zero_mask, vec![false, true, false, true]);
        for _ in 0..5 {
            let (b, next) = nj_beta_update(&y, &x, &ones, 1.0, 0.0, &state).unwrap();
            for j in 0..4 {
                assert!(next.zero_mask[j] >= state.zero_mask[j]);
                if next.zero_mask[j] {
                    assert_eq!(b[j], 0.0);
                    assert_eq!(next.u_diag[j], 0.0);
                }
            }
            state = next;
        }
    }

    #[test]
    fn cv_prefers_sparse_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = DMatrix::from_fn(200, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(200, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (lambda, grid, _) = lasso_cv(&x, &y, 5, 50, 9).unwrap();
        let pos = grid.iter().position(|g| *g == lambda).unwrap();
        assert!(pos < grid.len() / 4, "selected grid index {pos}");
    }

    #[test]
    fn cv_recovers_strong_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let x = DMatrix::from_fn(100, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(100, |i, _| 5.0 * x[(i, 0)] + 0.1 * rng.sample::<f64, _>(StandardNormal));
        let labels = vec![0; 100];
        let lam = flasso_cv(&x, &y, &labels, 1, 5, 50, 3).unwrap();
        let fit = lasso_fit(&x, &y, lam[0]).unwrap();
        assert!(fit.beta[0] > 0.0);
        // The large coefficient dominates every spurious one.
        assert!(fit.beta.iter().skip(1).all(|b| b.abs() < 0.05 * fit.beta[0]));
    }

    #[test]
    fn cv_symmetric_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let x1 = DMatrix::from_fn(60, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y1 = DVector::from_fn(60, |i, _| x1[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        let x = DMatrix::from_fn(120, 5, |i, j| x1[(i % 60, j)]);
        let y = DVector::from_fn(120, |i, _| y1[i % 60]);
        let labels: Vec<usize> = (0..120).map(|i| i / 60).collect();
        let lam = flasso_cv(&x, &y, &labels, 2, 5, 50, 1).unwrap();
        let step = 10f64.powf(4.0 / 49.0);
        assert!((lam[0] / lam[1]).max(lam[1] / lam[0]) <= step * (1.0 + 1e-9));
    }

    #[test]
    fn cv_small_group_names_group() {
        let x = DMatrix::from_element(12, 2, 1.0);
        let y = DVector::from_element(12, 1.0);
        let mut labels = vec![0; 12];
        labels[0] = 1;
        match flasso_cv(&x, &y, &labels, 2, 5, 10, 0) {
            Err(RjmError::Group { group, .. }) => assert_eq!(group, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
