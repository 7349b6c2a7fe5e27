//! Shared data model: datasets, per-group parameter blocks, responsibilities,
//! fit configuration and results.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, RjmError};
use crate::linalg;
use crate::par::Exec;

/// Paired data `(y, X)`: `n` responses and an `n x p` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(RjmError::Dimension(format!(
                "X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % x.nrows(), pos / x.nrows());
            return Err(RjmError::domain(format!("non-finite feature at row {row}, column {col}")));
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(RjmError::domain(format!("non-finite response at row {row}")));
        }
        Ok(Self {
            x,
            y,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(RjmError::Dimension(format!(
                "{} feature names for {} columns",
                names.len(),
                self.p()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: linalg::select_rows(&self.x, idx),
            y: linalg::select_entries(&self.y, idx),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// One group's parameter block `(tau, mu, Omega, alpha, beta, sigma2)` plus the
/// regression penalty for the lasso schemes.
///
/// `Omega` is the stored precision; `Sigma = Omega^-1`, its Cholesky factor and
/// log-determinant are cached and refreshed by [`ClusterParams::set_omega`].
#[derive(Debug, Clone)]
pub struct ClusterParams {
    pub tau: f64,
    pub mu: DVector<f64>,
    omega: DMatrix<f64>,
    sigma_x: DMatrix<f64>,
    omega_chol: DMatrix<f64>,
    omega_log_det: f64,
    pub alpha: f64,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub lambda: Option<f64>,
}

impl ClusterParams {
    pub fn new(
        tau: f64,
        mu: DVector<f64>,
        omega: DMatrix<f64>,
        alpha: f64,
        beta: DVector<f64>,
        sigma2: f64,
        lambda: Option<f64>,
    ) -> Result<Self> {
        let p = mu.len();
        if omega.nrows() != p || omega.ncols() != p || beta.len() != p {
            return Err(RjmError::Dimension(format!(
                "mu has length {p}, omega is {}x{}, beta has length {}",
                omega.nrows(),
                omega.ncols(),
                beta.len()
            )));
        }
        let mut params = Self {
            tau,
            mu,
            omega: DMatrix::zeros(0, 0),
            sigma_x: DMatrix::zeros(0, 0),
            omega_chol: DMatrix::zeros(0, 0),
            omega_log_det: 0.0,
            alpha,
            beta,
            sigma2,
            lambda,
        };
        params.set_omega(omega)?;
        Ok(params)
    }

    /// Build from a covariance instead of a precision.
    pub fn from_covariance(
        tau: f64,
        mu: DVector<f64>,
        sigma: &DMatrix<f64>,
        alpha: f64,
        beta: DVector<f64>,
        sigma2: f64,
        lambda: Option<f64>,
    ) -> Result<Self> {
        let (omega, _) = linalg::spd_inverse(sigma)?;
        Self::new(tau, mu, omega, alpha, beta, sigma2, lambda)
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    /// Cached covariance `Sigma = Omega^-1`.
    pub fn sigma_x(&self) -> &DMatrix<f64> {
        &self.sigma_x
    }

    pub fn omega_log_det(&self) -> f64 {
        self.omega_log_det
    }

    pub fn set_omega(&mut self, mut omega: DMatrix<f64>) -> Result<()> {
        linalg::symmetrize(&mut omega);
        let chol = nalgebra::Cholesky::new(omega.clone())
            .ok_or_else(|| RjmError::Singular("precision matrix is not positive definite".into()))?;
        self.omega_log_det = linalg::chol_log_det(&chol);
        let mut sigma = chol.inverse();
        linalg::symmetrize(&mut sigma);
        self.omega_chol = chol.unpack();
        self.sigma_x = sigma;
        self.omega = omega;
        Ok(())
    }

    /// `(x - mu)^T Omega (x - mu)` through the cached Cholesky factor.
    pub fn mahalanobis_sq<'a>(&self, x: impl Iterator<Item = &'a f64>) -> f64 {
        let d: Vec<f64> = x.zip(self.mu.iter()).map(|(a, b)| a - b).collect();
        let l = &self.omega_chol;
        let p = d.len();
        let mut total = 0.0;
        for i in 0..p {
            // (L^T d)_i = sum_{j >= i} L[j, i] d_j
            let col = l.column(i);
            let mut acc = 0.0;
            for j in i..p {
                acc += col[j] * d[j];
            }
            total += acc * acc;
        }
        total
    }

    /// `log phi_p(x | mu, Sigma)`.
    pub fn log_density_x<'a>(&self, x: impl Iterator<Item = &'a f64>) -> f64 {
        let p = self.p() as f64;
        -0.5 * p * (2.0 * PI).ln() + 0.5 * self.omega_log_det - 0.5 * self.mahalanobis_sq(x)
    }

    pub fn predict_mean<'a>(&self, x: impl Iterator<Item = &'a f64>) -> f64 {
        self.alpha + x.zip(self.beta.iter()).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `log phi_1(y | alpha + x^T beta, sigma2)`.
    pub fn log_density_y<'a>(&self, y: f64, x: impl Iterator<Item = &'a f64>) -> f64 {
        let r = y - self.predict_mean(x);
        -0.5 * (2.0 * PI * self.sigma2).ln() - 0.5 * r * r / self.sigma2
    }

    pub fn scaled(&self) -> Result<ScaledRegression> {
        to_scaled(self.alpha, &self.beta, self.sigma2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(RjmError::domain(format!("tau = {} outside (0, 1]", self.tau)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(RjmError::domain(format!("sigma2 = {} is not positive", self.sigma2)));
        }
        let asym = linalg::max_asymmetry(&self.omega);
        if asym > 1e-10 {
            return Err(RjmError::domain(format!("omega asymmetry {asym:.3e}")));
        }
        if linalg::min_eigenvalue(&self.omega) <= 0.0 {
            return Err(RjmError::domain("omega is not positive definite"));
        }
        let p = self.p();
        let prod = &self.sigma_x * &self.omega;
        let err = (prod - DMatrix::<f64>::identity(p, p)).abs().max();
        if err > 1e-8 {
            return Err(RjmError::domain(format!("sigma_x * omega deviates from I by {err:.3e}")));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ClusterParamsRepr {
    tau: f64,
    mu: Vec<f64>,
    omega: Vec<Vec<f64>>,
    alpha: f64,
    beta: Vec<f64>,
    sigma2: f64,
    lambda: Option<f64>,
}

impl Serialize for ClusterParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let p = self.p();
        ClusterParamsRepr {
            tau: self.tau,
            mu: self.mu.iter().cloned().collect(),
            omega: (0..p).map(|i| self.omega.row(i).iter().cloned().collect()).collect(),
            alpha: self.alpha,
            beta: self.beta.iter().cloned().collect(),
            sigma2: self.sigma2,
            lambda: self.lambda,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ClusterParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = ClusterParamsRepr::deserialize(deserializer)?;
        let p = repr.mu.len();
        if repr.omega.len() != p || repr.omega.iter().any(|r| r.len() != p) {
            return Err(serde::de::Error::custom(format!("omega must be {p}x{p}")));
        }
        let omega = DMatrix::from_fn(p, p, |i, j| repr.omega[i][j]);
        ClusterParams::new(
            repr.tau,
            DVector::from_vec(repr.mu),
            omega,
            repr.alpha,
            DVector::from_vec(repr.beta),
            repr.sigma2,
            repr.lambda,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Regression in the scaled parametrization `(alpha, beta, sigma) -> (alpha/sigma, beta/sigma, 1/sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledRegression {
    pub chi: f64,
    pub phi: DVector<f64>,
    pub rho: f64,
}

pub fn to_scaled(alpha: f64, beta: &DVector<f64>, sigma2: f64) -> Result<ScaledRegression> {
    if !(sigma2 > 0.0) {
        return Err(RjmError::domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    let sigma = sigma2.sqrt();
    Ok(ScaledRegression {
        chi: alpha / sigma,
        phi: beta / sigma,
        rho: 1.0 / sigma,
    })
}

/// Returns `(alpha, beta, sigma2)`.
pub fn from_scaled(s: &ScaledRegression) -> Result<(f64, DVector<f64>, f64)> {
    if !(s.rho > 0.0) {
        return Err(RjmError::domain(format!("rho must be positive, got {}", s.rho)));
    }
    Ok((s.chi / s.rho, &s.phi / s.rho, 1.0 / (s.rho * s.rho)))
}

/// Posterior membership probabilities `m[i, k]` and their column sums `n_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    m: DMatrix<f64>,
    n_k: Vec<f64>,
}

impl Responsibilities {
    /// Row-normalizes a matrix of log-weights with per-row max subtraction.
    pub fn from_log_weights(log_w: &DMatrix<f64>) -> Result<Self> {
        let (n, k) = log_w.shape();
        let mut m = DMatrix::<f64>::zeros(n, k);
        for i in 0..n {
            let row = log_w.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY || max.is_nan() {
                return Err(RjmError::DegenerateRow { row: i });
            }
            let mut total = 0.0;
            for j in 0..k {
                let v = (row[j] - max).exp();
                m[(i, j)] = v;
                total += v;
            }
            for j in 0..k {
                m[(i, j)] /= total;
            }
        }
        Ok(Self::from_matrix_unchecked(m))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        for i in 0..m.nrows() {
            let row = m.row(i);
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(RjmError::domain(format!("row {i} has entries outside [0, 1]")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(RjmError::domain(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self::from_matrix_unchecked(m))
    }

    /// Hard (one-hot) responsibilities from zero-based labels.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        let mut m = DMatrix::<f64>::zeros(labels.len(), k);
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(RjmError::domain(format!("label {l} out of range for K = {k}")));
            }
            m[(i, l)] = 1.0;
        }
        Ok(Self::from_matrix_unchecked(m))
    }

    fn from_matrix_unchecked(m: DMatrix<f64>) -> Self {
        let n_k = (0..m.ncols()).map(|j| m.column(j).sum()).collect();
        Self { m, n_k }
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn n_k(&self) -> &[f64] {
        &self.n_k
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn k(&self) -> usize {
        self.m.ncols()
    }

    pub fn weights(&self, k: usize) -> DVector<f64> {
        self.m.column(k).into_owned()
    }

    /// Zero-based row-wise argmax; ties go to the lowest index.
    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| {
                let row = self.m.row(i);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn min_n_k(&self) -> f64 {
        self.n_k.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Regularization scheme for the regression part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Fixed-penalty lasso: CV penalties, re-estimated once when labels stabilize.
    FLasso,
    /// Random-penalty lasso with a truncated Pareto prior on the penalty.
    RLasso,
    /// Normal-Jeffreys prior.
    NJ,
}

impl Scheme {
    pub fn is_lasso(self) -> bool {
        matches!(self, Scheme::FLasso | Scheme::RLasso)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::FLasso => "flasso",
            Scheme::RLasso => "rlasso",
            Scheme::NJ => "nj",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = RjmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flasso" => Ok(Scheme::FLasso),
            "rlasso" => Ok(Scheme::RLasso),
            "nj" => Ok(Scheme::NJ),
            other => Err(RjmError::domain(format!("unknown scheme '{other}' (expected nj, flasso or rlasso)"))),
        }
    }
}

/// Graphical-lasso penalty: the universal threshold `sqrt(2 n log p) / 2` or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Psi {
    #[default]
    Universal,
    Fixed(f64),
}

impl Psi {
    pub fn value(self, n: usize, p: usize) -> f64 {
        match self {
            Psi::Universal => universal_threshold(n, p),
            Psi::Fixed(v) => v,
        }
    }
}

pub fn universal_threshold(n: usize, p: usize) -> f64 {
    (2.0 * n as f64 * (p as f64).ln()).sqrt() / 2.0
}

impl FromStr for Psi {
    type Err = RjmError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("universal") {
            return Ok(Psi::Universal);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| RjmError::domain(format!("psi must be 'universal' or a number, got '{s}'")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(RjmError::domain(format!("psi must be non-negative, got {v}")));
        }
        Ok(Psi::Fixed(v))
    }
}

impl Serialize for Psi {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psi::Universal => serializer.serialize_str("universal"),
            Psi::Fixed(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Psi {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Ok(Psi::Fixed(v)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub scheme: Scheme,
    /// RLasso prior scale.
    pub c: f64,
    pub psi: Psi,
    pub n_starts: usize,
    pub max_iter: usize,
    /// Relative-change stopping tolerance on the objective.
    pub tol: f64,
    /// Runs are discarded once `min_k n_k <= n / (divisor * K)`.
    pub min_group_frac_divisor: f64,
    pub seed: u64,
    pub cv_folds: usize,
    pub cv_grid_size: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 2,
            scheme: Scheme::NJ,
            c: 0.25,
            psi: Psi::Universal,
            n_starts: 10,
            max_iter: 20,
            tol: 1e-6,
            min_group_frac_divisor: 10.0,
            seed: 0,
            cv_folds: 5,
            cv_grid_size: 50,
            exec: Exec::default(),
        }
    }
}

impl FitConfig {
    pub fn new(k: usize, scheme: Scheme) -> Self {
        Self {
            k,
            scheme,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(RjmError::domain("K must be at least 1"));
        }
        if self.n_starts < 1 {
            return Err(RjmError::domain("n_starts must be at least 1"));
        }
        if self.max_iter < 1 {
            return Err(RjmError::domain("max_iter must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(RjmError::domain("tol must be positive"));
        }
        if !(self.c > 0.0) {
            return Err(RjmError::domain("c must be positive"));
        }
        if !(self.min_group_frac_divisor > 0.0) {
            return Err(RjmError::domain("min_group_frac_divisor must be positive"));
        }
        if self.scheme == Scheme::FLasso && self.cv_folds < 2 {
            return Err(RjmError::domain("cv_folds must be at least 2"));
        }
        Ok(())
    }

    /// Collapse-guard threshold `n / (divisor * K)`.
    pub fn collapse_threshold(&self, n: usize) -> f64 {
        n as f64 / (self.min_group_frac_divisor * self.k as f64)
    }
}

/// Outcome of one EM run (or the selected best run of a multi-start fit).
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<ClusterParams>,
    pub resp: Responsibilities,
    /// Zero-based hard labels (row argmax of `resp`).
    pub labels: Vec<usize>,
    /// Observed-data log posterior after each iteration.
    pub objective_trace: Vec<f64>,
    /// Expected complete-data objective `Q(θ⁽ᵗ⁺¹⁾ | θ⁽ᵗ⁾)` after each iteration; drives the stopping rule.
    pub q_trace: Vec<f64>,
    pub converged: bool,
    pub discarded: bool,
    pub start_index: usize,
    pub iterations: usize,
    /// FLasso only: index into the traces of the first value computed with re-estimated CV penalties.
    pub refit_iteration: Option<usize>,
}

impl FitResult {
    pub fn k(&self) -> usize {
        self.params.len()
    }

    pub fn objective(&self) -> f64 {
        self.objective_trace.last().cloned().unwrap_or(f64::NEG_INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_identity_case() {
        let s = to_scaled(0.0, &DVector::zeros(3), 1.0).unwrap();
        assert_eq!(s.chi, 0.0);
        assert_eq!(s.rho, 1.0);
        assert!(s.phi.iter().all(|v| *v == 0.0));
        let (a, b, s2) = from_scaled(&s).unwrap();
        assert_eq!((a, s2), (0.0, 1.0));
        assert!(b.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scaled_divides_by_sigma() {
        let s = to_scaled(2.0, &DVector::from_vec(vec![1.0]), 4.0).unwrap();
        assert_eq!(s.chi, 1.0);
        assert_eq!(s.phi[0], 0.5);
        assert_eq!(s.rho, 0.5);
        let (a, b, s2) = from_scaled(&ScaledRegression {
            chi: 1.0,
            phi: DVector::from_vec(vec![0.5]),
            rho: 0.5,
        })
        .unwrap();
        assert_eq!((a, b[0], s2), (2.0, 1.0, 4.0));
    }

    #[test]
    fn scaled_rejects_bad_scale() {
        assert!(to_scaled(0.0, &DVector::zeros(1), 0.0).is_err());
        assert!(to_scaled(0.0, &DVector::zeros(1), -1.0).is_err());
        let bad = ScaledRegression {
            chi: 0.0,
            phi: DVector::zeros(1),
            rho: 0.0,
        };
        assert!(from_scaled(&bad).is_err());
    }

    #[test]
    fn dataset_rejects_mismatch_and_nan() {
        assert!(Dataset::new(DMatrix::zeros(3, 2), DVector::zeros(2)).is_err());
        let mut x = DMatrix::zeros(2, 2);
        x[(1, 1)] = f64::NAN;
        assert!(Dataset::new(x, DVector::zeros(2)).is_err());
    }

    #[test]
    fn responsibilities_from_log_weights_are_stochastic() {
        let lw = DMatrix::from_row_slice(2, 3, &[-1000.0, -1001.0, -2000.0, 0.0, 0.0, 0.0]);
        let r = Responsibilities::from_log_weights(&lw).unwrap();
        for i in 0..2 {
            assert!((r.m().row(i).sum() - 1.0).abs() < 1e-12);
        }
        assert!((r.n_k().iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert_eq!(r.hard_labels(), vec![0, 0]);
        let dead = DMatrix::from_row_slice(1, 2, &[f64::NEG_INFINITY, f64::NEG_INFINITY]);
        assert!(matches!(
            Responsibilities::from_log_weights(&dead),
            Err(RjmError::DegenerateRow { row: 0 })
        ));
    }

    #[test]
    fn params_cache_sigma() {
        let omega = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = ClusterParams::new(1.0, DVector::zeros(2), omega, 0.0, DVector::zeros(2), 1.0, None).unwrap();
        p.validate().unwrap();
        let x = [1.0, -1.0];
        let quad = p.mahalanobis_sq(x.iter());
        // 2 - 2*0.5 + 1
        assert!((quad - 2.0).abs() < 1e-12);
    }

    #[test]
    fn psi_parsing() {
        assert_eq!("universal".parse::<Psi>().unwrap(), Psi::Universal);
        assert_eq!("0.5".parse::<Psi>().unwrap(), Psi::Fixed(0.5));
        assert!("-1".parse::<Psi>().is_err());
        assert!("abc".parse::<Psi>().is_err());
    }
}
