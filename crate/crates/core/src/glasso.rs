//! Graphical lasso: `max log|Ω| − tr(ΩS) − ρ‖Ω‖₁` with every entry penalized,
//! the diagonal included.
//!
//! Block coordinate descent on the covariance `W = Ω⁻¹`: each sweep visits
//! every column, solves the column lasso
//! `min ½ βᵀ W₁₁ β − βᵀ s₁₂ + ρ‖β‖₁` by coordinate descent, and writes back
//! `w₁₂ = W₁₁ β`. The diagonal of `W` is pinned at `S_jj + ρ`.

use nalgebra::DMatrix;

use crate::error::{Result, RjmError};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct GlassoProblem<'a> {
    pub s: &'a DMatrix<f64>,
    pub rho: f64,
    pub max_sweeps: usize,
    pub tol: f64,
}

impl<'a> GlassoProblem<'a> {
    pub fn new(s: &'a DMatrix<f64>, rho: f64) -> Self {
        Self {
            s,
            rho,
            max_sweeps: 200,
            tol: 1e-5,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_sweeps(mut self, max_sweeps: usize) -> Self {
        self.max_sweeps = max_sweeps;
        self
    }
}

#[derive(Debug, Clone)]
pub struct GlassoSolution {
    pub omega: DMatrix<f64>,
    pub sweeps: usize,
    pub residual: f64,
}

/// Solves from a cold start and returns the precision matrix.
pub fn solve(prob: &GlassoProblem<'_>) -> Result<DMatrix<f64>> {
    solve_warm(prob, None).map(|sol| sol.omega)
}

/// Solves, optionally warm-starting from a previous precision estimate.
pub fn solve_warm(prob: &GlassoProblem<'_>, warm: Option<&DMatrix<f64>>) -> Result<GlassoSolution> {
    let s = prepare(prob)?;
    let s = &s;
    let p = s.nrows();
    let rho = prob.rho;

    let (mut w, mut b) = match warm.and_then(|o| warm_state(s, rho, o)) {
        Some(state) => state,
        None => cold_state(s, rho),
    };

    let off_scale = {
        let mut total = 0.0;
        for j in 0..p {
            for i in 0..p {
                if i != j {
                    total += s[(i, j)].abs();
                }
            }
        }
        let mean = if p > 1 { total / (p * (p - 1)) as f64 } else { 0.0 };
        let diag_mean = s.trace() / p as f64;
        mean.max(1e-3 * diag_mean).max(f64::MIN_POSITIVE)
    };
    let inner_tol = 1e-4 * prob.tol;

    let mut residual = f64::INFINITY;
    let mut omega = precision_from(&w, &b);
    for sweep in 1..=prob.max_sweeps {
        let mut change = 0.0;
        for j in 0..p {
            change += column_update(s, rho, &mut w, &mut b, j, inner_tol);
        }
        omega = precision_from(&w, &b);
        let mean_change = if p > 1 { change / (p * (p - 1)) as f64 } else { 0.0 };
        if mean_change <= prob.tol * off_scale {
            residual = kkt_residual(s, rho, &omega).unwrap_or(f64::INFINITY);
            if residual <= prob.tol {
                return Ok(GlassoSolution {
                    omega,
                    sweeps: sweep,
                    residual,
                });
            }
        }
    }
    if !residual.is_finite() {
        residual = kkt_residual(s, rho, &omega).unwrap_or(f64::INFINITY);
    }
    if residual <= prob.tol {
        return Ok(GlassoSolution {
            omega,
            sweeps: prob.max_sweeps,
            residual,
        });
    }
    Err(RjmError::GlassoNotConverged {
        sweeps: prob.max_sweeps,
        residual,
        omega: Box::new(omega),
    })
}

/// Validates the problem and applies the degenerate-input jitter.
fn prepare(prob: &GlassoProblem<'_>) -> Result<DMatrix<f64>> {
    let s = prob.s;
    let p = s.nrows();
    if p == 0 || s.ncols() != p {
        return Err(RjmError::Dimension(format!("S must be square and non-empty, got {}x{}", p, s.ncols())));
    }
    if !(prob.rho >= 0.0 && prob.rho.is_finite()) {
        return Err(RjmError::domain(format!("glasso penalty must be non-negative, got {}", prob.rho)));
    }
    if !(prob.tol > 0.0) || prob.max_sweeps == 0 {
        return Err(RjmError::domain("glasso needs tol > 0 and max_sweeps >= 1"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(RjmError::domain("S has non-finite entries"));
    }
    let scale = s.abs().max().max(1.0);
    if linalg::max_asymmetry(s) > 1e-10 * scale {
        return Err(RjmError::domain("S is not symmetric"));
    }
    let mut s = s.clone();
    linalg::symmetrize(&mut s);
    if linalg::min_eigenvalue(&s) < -1e-8 * scale {
        return Err(RjmError::domain("S is not positive semi-definite"));
    }
    let min_diag = (0..p).map(|j| s[(j, j)]).fold(f64::INFINITY, f64::min);
    if min_diag + prob.rho <= 0.0 || (prob.rho == 0.0 && linalg::min_eigenvalue(&s) <= 0.0) {
        let jitter = 1e-8 * (s.trace() / p as f64).max(1.0);
        for j in 0..p {
            s[(j, j)] += jitter;
        }
    }
    Ok(s)
}

fn cold_state(s: &DMatrix<f64>, rho: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = s.nrows();
    let mut w = DMatrix::zeros(p, p);
    for j in 0..p {
        w[(j, j)] = s[(j, j)] + rho;
    }
    // Diagonal start: every column lasso begins at zero.
    (w, DMatrix::zeros(p, p))
}

fn warm_state(s: &DMatrix<f64>, rho: f64, omega0: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let p = s.nrows();
    if omega0.nrows() != p || omega0.ncols() != p {
        return None;
    }
    let (mut w, _) = linalg::spd_inverse(omega0).ok()?;
    for j in 0..p {
        w[(j, j)] = s[(j, j)] + rho;
    }
    nalgebra::Cholesky::new(w.clone())?;
    let mut b = DMatrix::zeros(p, p);
    for j in 0..p {
        let d = omega0[(j, j)];
        for l in 0..p {
            if l != j {
                b[(l, j)] = -omega0[(l, j)] / d;
            }
        }
    }
    Some((w, b))
}

/// One column of the sweep. Returns the summed absolute change in `w₁₂`.
fn column_update(
    s: &DMatrix<f64>,
    rho: f64,
    w: &mut DMatrix<f64>,
    b: &mut DMatrix<f64>,
    j: usize,
    inner_tol: f64,
) -> f64 {
    let p = s.nrows();
    if p == 1 {
        return 0.0;
    }
    // wb_l = sum_{m != j} W[l, m] b_m
    let mut wb = vec![0.0; p];
    for m in 0..p {
        let bm = b[(m, j)];
        if m != j && bm != 0.0 {
            for l in 0..p {
                wb[l] += w[(l, m)] * bm;
            }
        }
    }
    for _ in 0..1000 {
        let mut max_delta = 0.0f64;
        for l in 0..p {
            if l == j {
                continue;
            }
            let wll = w[(l, l)];
            let bl = b[(l, j)];
            let z = s[(l, j)] - (wb[l] - wll * bl);
            let new = soft(z, rho) / wll;
            let delta = new - bl;
            if delta != 0.0 {
                b[(l, j)] = new;
                for m in 0..p {
                    wb[m] += delta * w[(m, l)];
                }
                max_delta = max_delta.max(delta.abs() * wll);
            }
        }
        if max_delta <= inner_tol {
            break;
        }
    }
    let mut change = 0.0;
    for l in 0..p {
        if l != j {
            change += (w[(l, j)] - wb[l]).abs();
            w[(l, j)] = wb[l];
            w[(j, l)] = wb[l];
        }
    }
    change
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Recovers `Ω` from the covariance iterate and the column regressions.
fn precision_from(w: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let p = w.nrows();
    let mut omega = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut dot = 0.0;
        for l in 0..p {
            if l != j {
                dot += w[(l, j)] * b[(l, j)];
            }
        }
        let d = 1.0 / (w[(j, j)] - dot);
        omega[(j, j)] = d;
        for l in 0..p {
            if l != j {
                omega[(l, j)] = -b[(l, j)] * d;
            }
        }
    }
    // Keep exact zeros exact: a pair is zeroed if either column fit zeroes it.
    for i in 0..p {
        for j in (i + 1)..p {
            let (a, c) = (omega[(i, j)], omega[(j, i)]);
            let v = if a == 0.0 || c == 0.0 { 0.0 } else { 0.5 * (a + c) };
            omega[(i, j)] = v;
            omega[(j, i)] = v;
        }
    }
    omega
}

/// Largest violation of the stationarity conditions `W − S − ρΓ = 0`,
/// `Γ ∈ ∂‖Ω‖₁`, with `W = Ω⁻¹`.
pub fn kkt_residual(s: &DMatrix<f64>, rho: f64, omega: &DMatrix<f64>) -> Result<f64> {
    let p = s.nrows();
    if omega.nrows() != p || omega.ncols() != p || s.ncols() != p {
        return Err(RjmError::Dimension("S and omega must be square and the same size".into()));
    }
    let (w, _) = linalg::spd_inverse(omega).map_err(|_| RjmError::domain("omega is singular or not positive definite"))?;
    let mut worst = 0.0f64;
    for j in 0..p {
        for i in 0..p {
            let g = w[(i, j)] - s[(i, j)];
            let o = omega[(i, j)];
            let v = if i == j {
                (g - rho).abs()
            } else if o == 0.0 {
                (g.abs() - rho).max(0.0)
            } else {
                (g - rho * o.signum()).abs()
            };
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

/// `log|Ω| − tr(ΩS) − ρ‖Ω‖₁`.
pub fn objective(s: &DMatrix<f64>, rho: f64, omega: &DMatrix<f64>) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(omega.clone())
        .ok_or_else(|| RjmError::domain("omega is not positive definite"))?;
    let log_det = linalg::chol_log_det(&chol);
    let trace = omega.component_mul(s).sum();
    let l1: f64 = omega.iter().map(|v| v.abs()).sum();
    Ok(log_det - trace - rho * l1)
}
