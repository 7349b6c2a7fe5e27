//! Data-generating mechanisms for the simulation studies: the two-group
//! motivation toy, the small-scale cases A/B/C (uncorrelated and correlated
//! designs) and the sparse semi-synthetic mechanisms with truncated-normal
//! coefficients and signal-to-noise calibration.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, RjmError};
use crate::linalg;
use crate::regression;
use crate::types::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "appendixA")]
    AppendixA,
    #[serde(rename = "toy51")]
    Toy51,
    #[serde(rename = "semisynth")]
    Semisynth,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::AppendixA => "appendixA",
            Scenario::Toy51 => "toy51",
            Scenario::Semisynth => "semisynth",
        })
    }
}

impl FromStr for Scenario {
    type Err = RjmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "appendixa" => Ok(Scenario::AppendixA),
            "toy51" => Ok(Scenario::Toy51),
            "semisynth" => Ok(Scenario::Semisynth),
            _ => Err(RjmError::domain(format!("unknown scenario {s:?} (expected appendixA, toy51 or semisynth)"))),
        }
    }
}

/// Regression case: A opposite slopes, B shifted intercepts, C identical regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    A,
    B,
    C,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::A => "A",
            Case::B => "B",
            Case::C => "C",
        })
    }
}

impl FromStr for Case {
    type Err = RjmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Case::A),
            "B" | "b" => Ok(Case::B),
            "C" | "c" => Ok(Case::C),
            _ => Err(RjmError::domain(format!("unknown case {s:?} (expected A, B or C)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub scenario: Scenario,
    pub case: Case,
    pub correlated: bool,
    pub n_per_group: Vec<usize>,
    pub p: usize,
    /// Mean-shift magnitude. For the motivation toy this is the fixed shift of
    /// the second mean; elsewhere a random sign is attached.
    pub d: f64,
    pub snr_target: f64,
    pub sparsity: f64,
    pub seed: u64,
    #[serde(skip)]
    pub base_covariances: Option<Vec<DMatrix<f64>>>,
}

impl SimSpec {
    /// Defaults for each scenario: 2 x 100 samples and p = 10 for the toy,
    /// 2 x 50 and p = 10 with unit shift for the small-scale study, and
    /// 2 x 125 with p = 100 for the semi-synthetic mechanisms.
    pub fn new(scenario: Scenario, case: Case, seed: u64) -> Self {
        let (n_per_group, p, d) = match scenario {
            Scenario::AppendixA => (vec![100, 100], 10, 0.0),
            Scenario::Toy51 => (vec![50, 50], 10, 1.0),
            Scenario::Semisynth => (vec![125, 125], 100, 0.5),
        };
        Self {
            scenario,
            case,
            correlated: false,
            n_per_group,
            p,
            d,
            snr_target: 3.0,
            sparsity: 0.04,
            seed,
            base_covariances: None,
        }
    }

    pub fn k(&self) -> usize {
        self.n_per_group.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d >= 0.0) || !self.d.is_finite() {
            return Err(RjmError::domain(format!("d must be finite and non-negative, got {}", self.d)));
        }
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return Err(RjmError::domain(format!("sparsity must lie in (0, 1), got {}", self.sparsity)));
        }
        if self.n_per_group.iter().any(|&n| n < 2) {
            return Err(RjmError::domain("every group needs at least two samples"));
        }
        match self.scenario {
            Scenario::AppendixA | Scenario::Toy51 => {
                if self.n_per_group.len() != 2 {
                    return Err(RjmError::domain(format!("scenario {} has exactly two groups", self.scenario)));
                }
                if self.p < 7 {
                    return Err(RjmError::domain(format!("scenario {} needs p >= 7, got {}", self.scenario, self.p)));
                }
            }
            Scenario::Semisynth => {
                if self.n_per_group.len() < 2 {
                    return Err(RjmError::domain("semi-synthetic data needs at least two groups"));
                }
                if !(self.snr_target > 0.0) {
                    return Err(RjmError::domain("snr_target must be positive"));
                }
                let active = (self.sparsity * self.p as f64).round() as usize;
                if active < 2 {
                    return Err(RjmError::domain(format!(
                        "sparsity {} at p = {} gives {active} active coefficients; need at least 2",
                        self.sparsity, self.p
                    )));
                }
                let (common, disjoint) = split_active(active);
                if common + self.k() * disjoint > self.p {
                    return Err(RjmError::domain(format!(
                        "p = {} is too small for {common} common and {} disjoint active coefficients",
                        self.p,
                        self.k() * disjoint
                    )));
                }
                if let Some(covs) = &self.base_covariances {
                    if covs.len() != self.k() {
                        return Err(RjmError::domain(format!("{} base covariances for {} groups", covs.len(), self.k())));
                    }
                    if covs.iter().any(|c| c.nrows() != self.p || c.ncols() != self.p) {
                        return Err(RjmError::Dimension(format!("base covariances must be {0} x {0}", self.p)));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Half the active coefficients (rounded down) sit at common locations.
fn split_active(active: usize) -> (usize, usize) {
    let common = active / 2;
    (common, active - common)
}

/// Generating parameters, recorded alongside each simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub scenario: Scenario,
    pub case: Case,
    pub correlated: bool,
    pub group_sizes: Vec<usize>,
    pub d: f64,
    /// Sign attached to the mean shift (always +1 for the motivation toy).
    pub shift_sign: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    /// Zero-based active coordinates per group.
    pub support: Vec<Vec<usize>>,
    pub covariance_source: String,
    /// Semi-synthetic only: coefficient scale and achieved `Var(m)/σ²_y`.
    pub sigma_tilde: Option<f64>,
    pub snr: Option<f64>,
    /// True when every group is generated by the same distribution.
    pub identical_groups: bool,
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub data: Dataset,
    /// Zero-based true group of each row.
    pub labels: Vec<usize>,
    pub truth: SimTruth,
}

/// A uniform draw strictly inside (0, 1).
fn open_unit(rng: &mut impl Rng) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Quantile `q` of `N(mu, sigma2)` restricted to `(lower, upper)`. Upper-tail
/// intervals are inverted through the survival function so far tails keep
/// their precision.
pub fn truncated_normal_quantile(mu: f64, sigma2: f64, lower: f64, upper: f64, q: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !(lower < upper) || mu.is_nan() {
        return Err(RjmError::domain(format!(
            "truncated normal needs sigma2 > 0 and lower < upper (got {sigma2}, {lower}, {upper})"
        )));
    }
    let sigma = sigma2.sqrt();
    let a = (lower - mu) / sigma;
    let b = (upper - mu) / sigma;
    let n = std_normal();
    let z = if a >= 0.0 {
        let (sa, sb) = (n.sf(a), n.sf(b));
        let mass = sa - sb;
        if !(mass >= 1e-300) {
            return Err(RjmError::domain(format!("truncation interval ({lower}, {upper}) has no probability mass")));
        }
        -n.inverse_cdf(sa - q * mass)
    } else {
        let (fa, fb) = (n.cdf(a), n.cdf(b));
        let mass = fb - fa;
        if !(mass >= 1e-300) {
            return Err(RjmError::domain(format!("truncation interval ({lower}, {upper}) has no probability mass")));
        }
        n.inverse_cdf(fa + q * mass)
    };
    Ok(mu + sigma * z.clamp(a, b))
}

/// One draw from `N(mu, sigma2)` conditioned on `(lower, upper)`.
pub fn truncated_normal(mu: f64, sigma2: f64, lower: f64, upper: f64, rng: &mut impl Rng) -> Result<f64> {
    truncated_normal_quantile(mu, sigma2, lower, upper, open_unit(rng))
}

fn mixture_quantile(mu: f64, sigma2: f64, a: f64, b: f64, coin: f64, q: f64) -> Result<f64> {
    if !(a < b) {
        return Err(RjmError::domain(format!("excluded interval needs a < b (got {a}, {b})")));
    }
    if coin < 0.5 {
        truncated_normal_quantile(mu, sigma2, f64::NEG_INFINITY, a, q)
    } else {
        truncated_normal_quantile(mu, sigma2, b, f64::INFINITY, q)
    }
}

/// Equal mixture of the normal truncated to `(-∞, a)` and to `(b, ∞)`.
pub fn mixture_truncated_normal(mu: f64, sigma2: f64, a: f64, b: f64, rng: &mut impl Rng) -> Result<f64> {
    let coin = rng.random::<f64>();
    let q = open_unit(rng);
    mixture_quantile(mu, sigma2, a, b, coin, q)
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn normal_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn random_sign(rng: &mut impl Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Unbiased sample variance.
fn sample_var(v: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    let m = v.mean();
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

/// Pearson correlation; 0 when either side is constant.
pub fn correlation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (ma, mb) = (a.mean(), b.mean());
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Standard-normal features for the small-scale study. In the correlated
/// design the first column is `1.5 x3 + 0.5 x5 - 0.7 x7 + N(0, 0.5)`.
pub fn toy51_features(n: usize, p: usize, correlated: bool, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut x = normal_matrix(n, p, rng);
    if correlated {
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            x[(i, 0)] = 1.5 * x[(i, 2)] + 0.5 * x[(i, 4)] - 0.7 * x[(i, 6)] + 0.5f64.sqrt() * e;
        }
    }
    x
}

/// Train size, test size and inner replicates of the noise calibration.
const CALIBRATION_TRAIN: usize = 50;
const CALIBRATION_TEST: usize = 250;
const CALIBRATION_REPS: usize = 5;
const CALIBRATION_TARGET: f64 = 0.8;
const CALIBRATION_BAND: f64 = 0.02;

/// Features generator used by the calibration: `(rows, rng) -> X`.
pub type FeatureSampler<'a> = &'a dyn Fn(usize, &mut ChaCha8Rng) -> DMatrix<f64>;

/// Mean test correlation between `y` and the predictions of a CV-tuned
/// lasso trained on a single group with known labels.
pub fn oracle_lasso_correlation(
    sample_x: FeatureSampler<'_>,
    alpha: f64,
    beta: &DVector<f64>,
    sigma2: f64,
    seed: u64,
    reps: usize,
) -> Result<f64> {
    let draws = calibration_draws(sample_x, alpha, beta, seed, reps);
    mean_correlation(&draws, sigma2.sqrt(), seed)
}

struct CalibrationDraw {
    x_train: DMatrix<f64>,
    x_test: DMatrix<f64>,
    signal_train: DVector<f64>,
    signal_test: DVector<f64>,
    eps_train: DVector<f64>,
    eps_test: DVector<f64>,
}

fn calibration_draws(
    sample_x: FeatureSampler<'_>,
    alpha: f64,
    beta: &DVector<f64>,
    seed: u64,
    reps: usize,
) -> Vec<CalibrationDraw> {
    (0..reps)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let x_train = sample_x(CALIBRATION_TRAIN, &mut rng);
            let x_test = sample_x(CALIBRATION_TEST, &mut rng);
            let signal_train = (&x_train * beta).add_scalar(alpha);
            let signal_test = (&x_test * beta).add_scalar(alpha);
            let eps_train = normal_vector(CALIBRATION_TRAIN, &mut rng);
            let eps_test = normal_vector(CALIBRATION_TEST, &mut rng);
            CalibrationDraw {
                x_train,
                x_test,
                signal_train,
                signal_test,
                eps_train,
                eps_test,
            }
        })
        .collect()
}

fn mean_correlation(draws: &[CalibrationDraw], sigma: f64, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (r, d) in draws.iter().enumerate() {
        let y_train = &d.signal_train + &d.eps_train * sigma;
        let y_test = &d.signal_test + &d.eps_test * sigma;
        let (lambda, _, _) = regression::lasso_cv(&d.x_train, &y_train, 5, 50, seed.wrapping_add(r as u64))?;
        let fit = regression::lasso_fit(&d.x_train, &y_train, lambda)?;
        total += correlation(&fit.predict(&d.x_test), &y_test);
    }
    Ok(total / draws.len() as f64)
}

/// Noise variance at which a label-oracle lasso reaches a test correlation of
/// about 0.8, found by bisection on `log σ²` over `[1e-6, 1e3]·Var(signal)`
/// with common random numbers across the bracket.
pub fn calibrate_noise(sample_x: FeatureSampler<'_>, alpha: f64, beta: &DVector<f64>, seed: u64) -> Result<f64> {
    let draws = calibration_draws(sample_x, alpha, beta, seed, CALIBRATION_REPS);
    let pooled: Vec<f64> = draws.iter().flat_map(|d| d.signal_test.iter().cloned()).collect();
    let var_signal = sample_var(&DVector::from_vec(pooled));
    if !(var_signal > 1e-12) {
        return Err(RjmError::Calibration("the linear predictor has no variance to calibrate against".into()));
    }
    let corr_at = |log_s2: f64| mean_correlation(&draws, (0.5 * log_s2).exp(), seed);
    let mut lo = (1e-6 * var_signal).ln();
    let mut hi = (1e3 * var_signal).ln();
    let (c_lo, c_hi) = (corr_at(lo)?, corr_at(hi)?);
    if !(c_lo > CALIBRATION_TARGET && c_hi < CALIBRATION_TARGET) {
        return Err(RjmError::Calibration(format!(
            "correlation {c_lo:.3} to {c_hi:.3} over the noise bracket does not straddle {CALIBRATION_TARGET}"
        )));
    }
    let mut best = (f64::INFINITY, hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let c = corr_at(mid)?;
        let gap = (c - CALIBRATION_TARGET).abs();
        if gap < best.0 {
            best = (gap, mid);
        }
        if gap < 1e-3 || hi - lo < 1e-6 {
            break;
        }
        if c > CALIBRATION_TARGET {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > CALIBRATION_BAND {
        return Err(RjmError::Calibration(format!(
            "closest correlation {:.3} is outside {CALIBRATION_TARGET} ± {CALIBRATION_BAND}",
            CALIBRATION_TARGET + best.0
        )));
    }
    Ok(best.1.exp())
}

/// Fixed seed of the calibration replicates, so the noise level is a
/// property of the design rather than of an individual data set.
const CALIBRATION_SEED: u64 = 0x5eed_0051;

type CalibrationKey = (bool, usize, u64, u64);

fn calibration_cache() -> &'static Mutex<HashMap<CalibrationKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<CalibrationKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Calibrated noise for the small-scale design with a single signal
/// coefficient `beta1` on the first feature. Results are memoized.
pub fn calibrate_noise_51(correlated: bool, p: usize, alpha: f64, beta1: f64) -> Result<f64> {
    let key = (correlated, p, alpha.to_bits(), beta1.to_bits());
    if let Some(v) = calibration_cache().lock().expect("calibration cache poisoned").get(&key) {
        return Ok(*v);
    }
    let mut beta = DVector::zeros(p);
    beta[0] = beta1;
    let sampler = move |n: usize, rng: &mut ChaCha8Rng| toy51_features(n, p, correlated, rng);
    let s2 = calibrate_noise(&sampler, alpha, &beta, CALIBRATION_SEED)?;
    calibration_cache().lock().expect("calibration cache poisoned").insert(key, s2);
    Ok(s2)
}

fn stack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let p = blocks[0].ncols();
    let mut out = DMatrix::zeros(n, p);
    let mut row = 0;
    for b in blocks {
        out.rows_mut(row, b.nrows()).copy_from(b);
        row += b.nrows();
    }
    out
}

fn group_labels(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k, n)).collect()
}

pub fn generate(spec: &SimSpec) -> Result<SimData> {
    spec.validate()?;
    match spec.scenario {
        Scenario::AppendixA => {
            let pair = match spec.case {
                Case::A => (0.5, 0.5),
                Case::B => (0.5, 1.0),
                Case::C => (0.5, 1.5),
            };
            gen_appendix_a_sized(spec.d, pair, spec.seed, &spec.n_per_group, spec.p)
        }
        Scenario::Toy51 => gen_toy51(spec),
        Scenario::Semisynth => gen_semisynth(spec),
    }
}

/// Small-scale two-group design: one signal feature, slopes and intercepts by case.
pub fn gen_toy51(spec: &SimSpec) -> Result<SimData> {
    if spec.scenario != Scenario::Toy51 {
        return Err(RjmError::domain(format!("expected the toy51 scenario, got {}", spec.scenario)));
    }
    spec.validate()?;
    let p = spec.p;
    let (alpha, slope) = match spec.case {
        Case::A => ([0.0, 0.0], [1.0, -1.0]),
        Case::B => ([0.0, 1.0], [1.0, 1.0]),
        Case::C => ([0.0, 0.0], [1.0, 1.0]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sign = random_sign(&mut rng);
    let shift = spec.d * sign;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sigma2 = Vec::new();
    let mut mus = Vec::new();
    let mut betas = Vec::new();
    for k in 0..2 {
        let n = spec.n_per_group[k];
        let mu = if k == 0 { 0.0 } else { shift };
        let x = toy51_features(n, p, spec.correlated, &mut rng).add_scalar(mu);
        let s2 = calibrate_noise_51(spec.correlated, p, alpha[k], slope[k])?;
        let mut beta = DVector::zeros(p);
        beta[0] = slope[k];
        let eps = normal_vector(n, &mut rng);
        let y = (&x * &beta).add_scalar(alpha[k]) + eps * s2.sqrt();
        xs.push(x);
        ys.push(y);
        sigma2.push(s2);
        // In the correlated design the first column is built from centered features, then shifted with the rest.
        mus.push(vec![mu; p]);
        betas.push(beta.as_slice().to_vec());
    }
    let x = stack(&xs);
    let y = DVector::from_iterator(x.nrows(), ys.iter().flat_map(|v| v.iter().cloned()));
    let identical = spec.case == Case::C && spec.d == 0.0;
    Ok(SimData {
        data: Dataset::new(x, y)?,
        labels: group_labels(&spec.n_per_group),
        truth: SimTruth {
            scenario: Scenario::Toy51,
            case: spec.case,
            correlated: spec.correlated,
            group_sizes: spec.n_per_group.clone(),
            d: spec.d,
            shift_sign: sign,
            alpha: alpha.to_vec(),
            beta: betas,
            sigma2,
            mu: mus,
            support: vec![vec![0], vec![0]],
            covariance_source: if spec.correlated { "correlated" } else { "identity" }.into(),
            sigma_tilde: None,
            snr: None,
            identical_groups: identical,
        },
    })
}

/// Motivation toy: two groups of 100, `X ~ N(μ_k, 0.5 I)` with `p = 10`, one
/// shared randomly chosen active feature and `σ²_k = Var(x β_k)/5`.
pub fn gen_appendix_a(delta_mu: f64, beta_pair: (f64, f64), seed: u64) -> Result<SimData> {
    gen_appendix_a_sized(delta_mu, beta_pair, seed, &[100, 100], 10)
}

fn gen_appendix_a_sized(delta_mu: f64, beta_pair: (f64, f64), seed: u64, sizes: &[usize], p: usize) -> Result<SimData> {
    if !delta_mu.is_finite() || !beta_pair.0.is_finite() || !beta_pair.1.is_finite() {
        return Err(RjmError::domain("mean shift and slopes must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let active = rng.random_range(0..p);
    let slopes = [beta_pair.0, beta_pair.1];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sigma2 = Vec::new();
    let mut betas = Vec::new();
    let mut mus = Vec::new();
    for k in 0..2 {
        let mu = if k == 0 { 0.0 } else { delta_mu };
        let x = (normal_matrix(sizes[k], p, &mut rng) * 0.5f64.sqrt()).add_scalar(mu);
        let signal = x.column(active) * slopes[k];
        let s2 = sample_var(&signal) / 5.0;
        if !(s2 > 0.0) {
            return Err(RjmError::domain("a zero slope leaves no signal to set the noise level from"));
        }
        let y = &signal + normal_vector(sizes[k], &mut rng) * s2.sqrt();
        let mut beta = vec![0.0; p];
        beta[active] = slopes[k];
        xs.push(x);
        ys.push(y);
        sigma2.push(s2);
        betas.push(beta);
        mus.push(vec![mu; p]);
    }
    let x = stack(&xs);
    let y = DVector::from_iterator(x.nrows(), ys.iter().flat_map(|v| v.iter().cloned()));
    Ok(SimData {
        data: Dataset::new(x, y)?,
        labels: group_labels(sizes),
        truth: SimTruth {
            scenario: Scenario::AppendixA,
            case: Case::A,
            correlated: false,
            group_sizes: sizes.to_vec(),
            d: delta_mu,
            shift_sign: 1.0,
            alpha: vec![0.0, 0.0],
            beta: betas,
            sigma2,
            mu: mus,
            support: vec![vec![active], vec![active]],
            covariance_source: "0.5 identity".into(),
            sigma_tilde: None,
            snr: None,
            // Noise levels are empirical, so the groups only share a design when the slopes agree.
            identical_groups: delta_mu == 0.0 && beta_pair.0 == beta_pair.1,
        },
    })
}

/// Sparse precision with Erdős–Rényi support (edge probability 0.05),
/// made diagonally dominant, inverted and rescaled to unit variances.
pub fn synthetic_covariance(p: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let mut theta = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            if rng.random::<f64>() < 0.05 {
                let v = random_sign(rng) * rng.random_range(0.2..0.5);
                theta[(i, j)] = v;
                theta[(j, i)] = v;
            }
        }
    }
    for i in 0..p {
        let off: f64 = (0..p).filter(|&j| j != i).map(|j| theta[(i, j)].abs()).sum();
        theta[(i, i)] = off + 0.5;
    }
    let (sigma, _) = linalg::spd_inverse(&theta)?;
    Ok(to_correlation(&sigma))
}

fn to_correlation(s: &DMatrix<f64>) -> DMatrix<f64> {
    let d: Vec<f64> = (0..s.nrows()).map(|i| s[(i, i)].sqrt()).collect();
    let mut c = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)] / (d[i] * d[j]));
    linalg::symmetrize(&mut c);
    c
}

/// Fixed uniforms behind one coefficient draw, so the draw can be re-evaluated at any scale.
#[derive(Debug, Clone, Copy)]
struct CoefDraw {
    coin: f64,
    q: f64,
}

impl CoefDraw {
    fn new(rng: &mut impl Rng) -> Self {
        Self {
            coin: rng.random::<f64>(),
            q: open_unit(rng),
        }
    }
}

/// Smallest non-zero coefficient magnitude.
const TRUNCATION: f64 = 0.1;

struct SemisynthLayout {
    common: Vec<usize>,
    disjoint: Vec<Vec<usize>>,
    common_draws: Vec<Vec<CoefDraw>>,
    disjoint_draws: Vec<Vec<CoefDraw>>,
    case: Case,
}

impl SemisynthLayout {
    fn betas(&self, p: usize, sigma_tilde: f64) -> Result<Vec<DVector<f64>>> {
        let s2 = sigma_tilde * sigma_tilde;
        let k = self.disjoint.len();
        (0..k)
            .map(|g| {
                let mut beta = DVector::zeros(p);
                for (slot, &j) in self.common.iter().enumerate() {
                    beta[j] = match self.case {
                        // Odd groups negative, even groups positive.
                        Case::A => {
                            let q = self.common_draws[g][slot].q;
                            if g % 2 == 0 {
                                truncated_normal_quantile(0.0, s2, f64::NEG_INFINITY, -TRUNCATION, q)?
                            } else {
                                truncated_normal_quantile(0.0, s2, TRUNCATION, f64::INFINITY, q)?
                            }
                        }
                        // Shared draw across groups.
                        Case::B | Case::C => {
                            let d = self.common_draws[0][slot];
                            mixture_quantile(0.0, s2, -TRUNCATION, TRUNCATION, d.coin, d.q)?
                        }
                    };
                }
                for (slot, &j) in self.disjoint[g].iter().enumerate() {
                    let d = self.disjoint_draws[g][slot];
                    beta[j] = mixture_quantile(0.0, s2, -TRUNCATION, TRUNCATION, d.coin, d.q)?;
                }
                Ok(beta)
            })
            .collect()
    }
}

fn semisynth_alpha(case: Case, k: usize) -> Vec<f64> {
    (0..k).map(|g| if case == Case::B { g as f64 } else { 0.0 }).collect()
}

/// Loads `cov_1.csv .. cov_K.csv` (headerless `p x p`) from a directory.
pub fn load_covariances(dir: &Path, k: usize) -> Result<Vec<DMatrix<f64>>> {
    (1..=k)
        .map(|g| crate::io::read_matrix_file(&dir.join(format!("cov_{g}.csv"))))
        .collect()
}

/// Sparse semi-synthetic mechanism. Features are drawn group-wise from
/// unit-variance base covariances and shifted by `g·d·u` for group `g`
/// (zero-based) with a single random sign `u`. Coefficients follow the
/// truncated-normal mechanisms of the requested case; the common scale `σ̃`
/// is tuned by bisection on fixed uniforms so `Var(m)/σ²_y` hits the target.
pub fn gen_semisynth(spec: &SimSpec) -> Result<SimData> {
    if spec.scenario != Scenario::Semisynth {
        return Err(RjmError::domain(format!("expected the semisynth scenario, got {}", spec.scenario)));
    }
    spec.validate()?;
    let p = spec.p;
    let k = spec.k();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (covs, source) = match &spec.base_covariances {
        Some(c) => {
            for (g, m) in c.iter().enumerate() {
                linalg::cholesky_jittered(m).map_err(|e| e.in_group(g))?;
                if (0..p).any(|i| !(m[(i, i)] > 0.0)) {
                    return Err(RjmError::domain(format!("base covariance {} has a non-positive variance", g + 1)));
                }
            }
            (c.iter().map(to_correlation).collect::<Vec<_>>(), "user")
        }
        None => (
            (0..k).map(|_| synthetic_covariance(p, &mut rng)).collect::<Result<Vec<_>>>()?,
            "synthetic",
        ),
    };
    let sign = random_sign(&mut rng);
    let active = (spec.sparsity * p as f64).round() as usize;
    let (n_common, n_disjoint) = split_active(active);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    let common: Vec<usize> = order[..n_common].to_vec();
    let disjoint: Vec<Vec<usize>> = (0..k)
        .map(|g| order[n_common + g * n_disjoint..n_common + (g + 1) * n_disjoint].to_vec())
        .collect();
    let layout = SemisynthLayout {
        common_draws: (0..k).map(|_| (0..n_common).map(|_| CoefDraw::new(&mut rng)).collect()).collect(),
        disjoint_draws: (0..k).map(|_| (0..n_disjoint).map(|_| CoefDraw::new(&mut rng)).collect()).collect(),
        common,
        disjoint,
        case: spec.case,
    };
    let alpha = semisynth_alpha(spec.case, k);
    let mut xs = Vec::with_capacity(k);
    let mut mus = Vec::with_capacity(k);
    for (g, cov) in covs.iter().enumerate() {
        let l = linalg::cholesky_jittered(cov)?.l();
        let mu = g as f64 * spec.d * sign;
        let z = normal_matrix(spec.n_per_group[g], p, &mut rng);
        xs.push((z * l.transpose()).add_scalar(mu));
        mus.push(vec![mu; p]);
    }
    let eps: Vec<DVector<f64>> = spec.n_per_group.iter().map(|&n| normal_vector(n, &mut rng)).collect();

    let mean_at = |betas: &[DVector<f64>]| -> DVector<f64> {
        let n: usize = spec.n_per_group.iter().sum();
        DVector::from_iterator(
            n,
            (0..k).flat_map(|g| (&xs[g] * &betas[g]).add_scalar(alpha[g]).iter().cloned().collect::<Vec<_>>()),
        )
    };
    let snr_at = |log_s: f64| -> Result<f64> {
        let betas = layout.betas(p, log_s.exp())?;
        Ok(sample_var(&mean_at(&betas)))
    };
    let target = spec.snr_target;
    let band = target / 30.0;
    let (mut lo, mut hi) = ((1e-2f64).ln(), (1e3f64).ln());
    let (s_lo, s_hi) = (snr_at(lo)?, snr_at(hi)?);
    if !(s_lo < target && s_hi > target) {
        return Err(RjmError::Calibration(format!(
            "signal-to-noise {s_lo:.3} to {s_hi:.3} over the coefficient-scale bracket does not straddle {target}"
        )));
    }
    let mut log_s = 0.5 * (lo + hi);
    for _ in 0..200 {
        log_s = 0.5 * (lo + hi);
        let s = snr_at(log_s)?;
        if (s - target).abs() < band * 1e-3 {
            break;
        }
        if s < target {
            lo = log_s;
        } else {
            hi = log_s;
        }
    }
    let sigma_tilde = log_s.exp();
    let betas = layout.betas(p, sigma_tilde)?;
    let m = mean_at(&betas);
    let snr = sample_var(&m);
    if (snr - target).abs() > band {
        return Err(RjmError::Calibration(format!("achieved signal-to-noise {snr:.3}, target {target}")));
    }
    let noise: Vec<f64> = eps.iter().flat_map(|e| e.iter().cloned()).collect();
    let y = m + DVector::from_vec(noise);
    let support = (0..k)
        .map(|g| {
            let mut s: Vec<usize> = layout.common.iter().chain(&layout.disjoint[g]).cloned().collect();
            s.sort_unstable();
            s
        })
        .collect();
    Ok(SimData {
        data: Dataset::new(stack(&xs), y)?,
        labels: group_labels(&spec.n_per_group),
        truth: SimTruth {
            scenario: Scenario::Semisynth,
            case: spec.case,
            correlated: true,
            group_sizes: spec.n_per_group.clone(),
            d: spec.d,
            shift_sign: sign,
            alpha,
            beta: betas.iter().map(|b| b.as_slice().to_vec()).collect(),
            sigma2: vec![1.0; k],
            mu: mus,
            support,
            covariance_source: source.into(),
            sigma_tilde: Some(sigma_tilde),
            snr: Some(snr),
            // Disjoint coefficients always differ between groups.
            identical_groups: false,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_sd(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn unconstrained_truncated_normal_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| truncated_normal(0.7, 2.0, f64::NEG_INFINITY, f64::INFINITY, &mut rng).unwrap())
            .collect();
        let (m, se) = mean_sd(&draws);
        assert!((m - 0.7).abs() < 3.0 * se, "{m} vs 0.7 (se {se})");
    }

    #[test]
    fn truncated_normal_matches_analytic_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| truncated_normal(0.0, 1.0, 0.1, f64::INFINITY, &mut rng).unwrap())
            .collect();
        assert!(draws.iter().all(|&v| v >= 0.1));
        let n = std_normal();
        // Oracle: φ(a) / (1 - Φ(a)), with φ written out directly.
        let phi = (-0.005f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let analytic = phi / n.sf(0.1);
        let (m, se) = mean_sd(&draws);
        assert!((m - analytic).abs() < 3.0 * se, "{m} vs {analytic} (se {se})");
    }

    #[test]
    fn far_tail_stays_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let v = truncated_normal(0.0, 1.0, 12.0, f64::INFINITY, &mut rng).unwrap();
            assert!(v >= 12.0 && v < 14.0, "{v}");
            let w = truncated_normal(0.0, 1.0, f64::NEG_INFINITY, -9.0, &mut rng).unwrap();
            assert!(w <= -9.0);
        }
        assert!(truncated_normal(0.0, 1.0, 60.0, f64::INFINITY, &mut rng).is_err());
        assert!(truncated_normal(0.0, 1.0, 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn mixture_excludes_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| mixture_truncated_normal(0.0, 1.0, -0.1, 0.1, &mut rng).unwrap())
            .collect();
        assert!(draws.iter().all(|v| v.abs() >= 0.1));
        let (m, se) = mean_sd(&draws);
        assert!(m.abs() < 3.0 * se);
        let below: Vec<f64> = draws.iter().map(|&v| f64::from(u8::from(v < -0.1))).collect();
        let (frac, se) = mean_sd(&below);
        assert!((frac - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn calibration_rejects_zero_signal() {
        let sampler = |n: usize, rng: &mut ChaCha8Rng| normal_matrix(n, 3, rng);
        assert!(matches!(
            calibrate_noise(&sampler, 0.0, &DVector::zeros(3), 1),
            Err(RjmError::Calibration(_))
        ));
    }

    #[test]
    fn calibration_hits_target_on_fresh_seeds() {
        let s2 = calibrate_noise_51(false, 10, 0.0, 1.0).unwrap();
        let sampler = |n: usize, rng: &mut ChaCha8Rng| toy51_features(n, 10, false, rng);
        let mut beta = DVector::zeros(10);
        beta[0] = 1.0;
        let fresh = oracle_lasso_correlation(&sampler, 0.0, &beta, s2, 991, 5).unwrap();
        assert!((0.75..=0.85).contains(&fresh), "{fresh} at sigma2 {s2}");
        let sharp = oracle_lasso_correlation(&sampler, 0.0, &beta, 1e-6, 992, 1).unwrap();
        assert!(sharp > 0.95);
    }

    #[test]
    fn toy51_case_a_slopes_oppose() {
        let sim = gen_toy51(&SimSpec::new(Scenario::Toy51, Case::A, 5)).unwrap();
        assert_eq!(sim.labels.iter().filter(|&&l| l == 0).count(), 50);
        let cov = |g: usize| {
            let idx: Vec<usize> = (0..100).filter(|&i| sim.labels[i] == g).collect();
            let x = DVector::from_iterator(50, idx.iter().map(|&i| sim.data.x()[(i, 0)]));
            let y = DVector::from_iterator(50, idx.iter().map(|&i| sim.data.y()[i]));
            correlation(&x, &y)
        };
        assert!(cov(0) > 0.0 && cov(1) < 0.0);
    }

    #[test]
    fn correlated_design_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = toy51_features(5000, 10, true, &mut rng);
        let design = DMatrix::from_fn(5000, 3, |i, j| x[(i, [2, 4, 6][j])]);
        let coef = (design.transpose() * &design)
            .lu()
            .solve(&(design.transpose() * x.column(0)))
            .unwrap();
        for (c, t) in coef.iter().zip([1.5, 0.5, -0.7]) {
            assert!((c - t).abs() < 0.1, "{c} vs {t}");
        }
    }

    #[test]
    fn appendix_a_noise_rule() {
        let sim = gen_appendix_a(1.0, (0.5, 1.5), 3).unwrap();
        let j = sim.truth.support[0][0];
        for g in 0..2 {
            let idx: Vec<usize> = (0..200).filter(|&i| sim.labels[i] == g).collect();
            let s = DVector::from_iterator(100, idx.iter().map(|&i| sim.data.x()[(i, j)] * sim.truth.beta[g][j]));
            assert!((sample_var(&s) / 5.0 - sim.truth.sigma2[g]).abs() < 1e-12);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        for scenario in [Scenario::AppendixA, Scenario::Toy51, Scenario::Semisynth] {
            let mut spec = SimSpec::new(scenario, Case::B, 11);
            spec.p = 30;
            spec.sparsity = 0.1;
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a.data, b.data);
            assert_eq!(a.truth, b.truth);
        }
    }

    #[test]
    fn semisynth_contract() {
        for case in [Case::A, Case::B, Case::C] {
            let mut spec = SimSpec::new(Scenario::Semisynth, case, 8);
            spec.p = 50;
            spec.sparsity = 0.08;
            spec.d = 0.4;
            let sim = gen_semisynth(&spec).unwrap();
            let t = &sim.truth;
            let snr = t.snr.unwrap();
            assert!((2.9..=3.1).contains(&snr), "{snr}");
            let mean: Vec<f64> = (0..250)
                .map(|i| {
                    let g = sim.labels[i];
                    t.alpha[g] + (0..50).map(|j| sim.data.x()[(i, j)] * t.beta[g][j]).sum::<f64>()
                })
                .collect();
            assert!((sample_var(&DVector::from_vec(mean)) - snr).abs() < 1e-9);
            for b in t.beta.iter().flatten() {
                assert!(*b == 0.0 || b.abs() >= 0.1);
            }
            let common: Vec<usize> = t.support[0].iter().filter(|j| t.support[1].contains(j)).cloned().collect();
            assert_eq!(common.len(), 2);
            assert_eq!(t.support[0].len(), 4);
            if case == Case::A {
                assert!(common.iter().all(|&j| t.beta[0][j] <= -0.1 && t.beta[1][j] >= 0.1));
            } else {
                assert!(common.iter().all(|&j| t.beta[0][j] == t.beta[1][j]));
            }
        }
    }

    #[test]
    fn semisynth_rejects_too_sparse() {
        let mut spec = SimSpec::new(Scenario::Semisynth, Case::A, 1);
        spec.p = 20;
        assert!(gen_semisynth(&spec).is_err());
    }

    #[test]
    fn synthetic_covariance_is_a_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = synthetic_covariance(40, &mut rng).unwrap();
        assert!((0..40).all(|i| (c[(i, i)] - 1.0).abs() < 1e-12));
        assert!(linalg::min_eigenvalue(&c) > 0.0);
    }
}
