//! Independent reference computations shared by the integration suites.
//! Nothing here calls into the solvers it is used to check.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Maximum-likelihood covariance (divisor n).
pub fn mle_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    c.tr_mul(&c) / n
}

/// Glasso objective `log det Ω − tr(SΩ) − ρ Σ_ij |Ω_ij|`, or −∞ outside the PD cone.
pub fn glasso_objective(s: &DMatrix<f64>, rho: f64, omega: &DMatrix<f64>) -> f64 {
    match omega.clone().cholesky() {
        Some(c) => {
            let log_det = 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            log_det - (s * omega).trace() - rho * omega.iter().map(|v| v.abs()).sum::<f64>()
        }
        None => f64::NEG_INFINITY,
    }
}

/// Largest violation of `W − S − ρ Γ = 0`, `Γ ∈ ∂‖Ω‖₁`, with `W = Ω⁻¹` by LU.
pub fn glasso_kkt(s: &DMatrix<f64>, rho: f64, omega: &DMatrix<f64>) -> f64 {
    let w = omega.clone().lu().try_inverse().expect("invertible precision");
    let p = s.nrows();
    let mut worst = 0.0f64;
    for i in 0..p {
        for j in 0..p {
            let g = w[(i, j)] - s[(i, j)];
            let v = if omega[(i, j)] == 0.0 {
                (g.abs() - rho).max(0.0)
            } else {
                (g - rho * omega[(i, j)].signum()).abs()
            };
            worst = worst.max(v);
        }
    }
    worst
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// 2x2 glasso by cyclic golden-section coordinate ascent on `(Ω11, Ω12, Ω22)`.
/// The objective is concave and its non-smooth part separable, so cyclic
/// exact coordinate maximization reaches the global optimum.
pub fn glasso_2x2_oracle(s: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let mut a = 1.0 / (s[(0, 0)] + rho);
    let mut b = 0.0;
    let mut c = 1.0 / (s[(1, 1)] + rho);
    let f = |a: f64, b: f64, c: f64| {
        let det = a * c - b * b;
        if a <= 0.0 || c <= 0.0 || det <= 0.0 {
            return f64::NEG_INFINITY;
        }
        det.ln() - (s[(0, 0)] * a + 2.0 * s[(0, 1)] * b + s[(1, 1)] * c) - rho * (a.abs() + c.abs() + 2.0 * b.abs())
    };
    for _ in 0..200 {
        let lim = (a * c).sqrt();
        // Check the kink at zero explicitly; golden section can stall next to it.
        let nb = golden_max(|v| f(a, v, c), -lim, lim, 200);
        b = if f(a, 0.0, c) >= f(a, nb, c) { 0.0 } else { nb };
        let a_lo = b * b / c;
        a = golden_max(|v| f(v, b, c), a_lo, a_lo + 10.0 * (1.0 + 1.0 / (s[(0, 0)] + rho)), 200);
        let c_lo = b * b / a;
        c = golden_max(|v| f(a, b, v), c_lo, c_lo + 10.0 * (1.0 + 1.0 / (s[(1, 1)] + rho)), 200);
    }
    DMatrix::from_row_slice(2, 2, &[a, b, b, c])
}

/// Per-coordinate KKT violation of `½ Σ w_i (ρ y_i − χ − x_iᵀφ)² + λ‖φ‖₁`, from the raw data.
pub fn weighted_lasso_kkt(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    chi: f64,
    rho: f64,
    lambda: f64,
    phi: &DVector<f64>,
) -> f64 {
    let n = y.len();
    let mut worst = 0.0f64;
    for j in 0..x.ncols() {
        // Gradient of the smooth part in coordinate j.
        let mut g = 0.0;
        for i in 0..n {
            let fit: f64 = (0..x.ncols()).map(|l| x[(i, l)] * phi[l]).sum();
            g -= w[i] * x[(i, j)] * (rho * y[i] - chi - fit);
        }
        let v = if phi[j] == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g + lambda * phi[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Normal-Jeffreys coefficient update in the direct form
/// `(XᵀMX + σ²U⁻¹)⁻¹ XᵀM(y − α)`, over coordinates with `u_j > 0`.
pub fn nj_direct(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, sigma2: f64, alpha: f64, u: &DVector<f64>) -> DVector<f64> {
    let act: Vec<usize> = (0..u.len()).filter(|&j| u[j] > 0.0).collect();
    let xa = DMatrix::from_fn(x.nrows(), act.len(), |i, j| x[(i, act[j])]);
    let m = DMatrix::from_diagonal(w);
    let mut a = xa.transpose() * &m * &xa;
    for (j, &col) in act.iter().enumerate() {
        a[(j, j)] += sigma2 / u[col];
    }
    let r = xa.transpose() * &m * y.map(|v| v - alpha);
    let b = a.lu().solve(&r).expect("solvable");
    let mut out = DVector::zeros(u.len());
    for (j, &col) in act.iter().enumerate() {
        out[col] = b[j];
    }
    out
}

/// The `n × n` Woodbury form
/// `σ⁻² U [I − Xᵀ(σ² M⁻¹ + X U Xᵀ)⁻¹ X U] XᵀM(y − α)`, with dense inverses.
pub fn nj_woodbury(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, sigma2: f64, alpha: f64, u: &DVector<f64>) -> DVector<f64> {
    let p = x.ncols();
    let uu = DMatrix::from_diagonal(u);
    let m = DMatrix::from_diagonal(w);
    let m_inv = DMatrix::from_diagonal(&w.map(|v| 1.0 / v));
    let inner = (m_inv * sigma2 + x * &uu * x.transpose()).try_inverse().expect("invertible");
    let bracket = DMatrix::identity(p, p) - x.transpose() * inner * x * &uu;
    &uu * bracket * x.transpose() * m * y.map(|v| v - alpha) / sigma2
}

/// Brute-force AUC by counting (positive, negative) pairs.
pub fn pair_count_auc(support: &[bool], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for i in 0..support.len() {
        for j in 0..support.len() {
            if support[i] && !support[j] {
                total += 1.0;
                let (a, b) = (scores[i].abs(), scores[j].abs());
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / total
}

/// Adjusted Rand index from the pair-counting definition over all item pairs.
pub fn pair_count_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let total = both + only_a + only_b + neither;
    let same_a = both + only_a;
    let same_b = both + only_b;
    let expected = same_a * same_b / total;
    let max = 0.5 * (same_a + same_b);
    (both - expected) / (max - expected)
}
