//! The ECM algorithm: initialization, E-step, conditional M-steps in block
//! order `τ → μ → Ω → λ → ρ → χ → φ` (or `σ² → α → β` for Normal-Jeffreys),
//! objective evaluation, termination, the collapse guard and multi-start
//! selection.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::baselines;
use crate::error::{Result, RjmError};
use crate::glasso::{self, GlassoProblem};
use crate::linalg;
use crate::par::{self, mix_seed};
use crate::regression::{self, NjState, WeightedLassoProblem};
use crate::types::{to_scaled, ClusterParams, Dataset, FitConfig, FitResult, Responsibilities, Scheme};

/// Smallest k-means cluster accepted at initialization.
pub const MIN_INIT_CLUSTER: usize = 5;
const INIT_ATTEMPTS: u64 = 20;
const KMEANS_RESTARTS: usize = 10;

/// One line of progress reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub start_index: usize,
    pub iteration: usize,
    pub objective: f64,
    pub n_k: Vec<f64>,
    pub label_changes: usize,
}

pub type Progress<'a> = &'a (dyn Fn(&IterationRecord) + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlassoPhase {
    /// Penalties from CV on the initial clustering.
    Initial,
    /// Penalties re-estimated this iteration.
    Refit,
    /// Penalties frozen.
    Fixed,
}

#[derive(Debug, Clone)]
pub enum SchemeState {
    FLasso { phase: FlassoPhase, lambda_cv: Vec<f64> },
    RLasso,
    NJ(Vec<NjState>),
}

#[derive(Debug, Clone)]
pub struct EmState {
    pub params: Vec<ClusterParams>,
    pub resp: Responsibilities,
    pub iteration: usize,
    pub objective: f64,
    pub scheme_state: SchemeState,
    pub prev_labels: Vec<usize>,
}

/// `m_ki ∝ τ_k φ(y_i | α_k + x_iᵀβ_k, σ²_k) φ_p(x_i | μ_k, Σ_k)`, normalized in log space.
pub fn e_step(data: &Dataset, params: &[ClusterParams]) -> Result<Responsibilities> {
    let x = data.x();
    let y = data.y();
    let log_w = DMatrix::from_fn(data.n(), params.len(), |i, k| {
        let c = &params[k];
        c.tau.ln() + c.log_density_x(x.row(i).iter()) + c.log_density_y(y[i], x.row(i).iter())
    });
    Responsibilities::from_log_weights(&log_w)
}

/// New feature-block parameters of one group.
#[derive(Debug, Clone)]
pub struct XUpdate {
    pub tau: f64,
    pub mu: DVector<f64>,
    pub omega: DMatrix<f64>,
}

/// Glasso tolerance used inside the EM, relative to the scale of `S`.
pub fn glasso_tol(s: &DMatrix<f64>) -> f64 {
    let p = s.nrows().max(1) as f64;
    1e-7 * (s.trace() / p).max(1.0)
}

/// Runs the EM's graphical-lasso step for one group: `Ω = glasso(S, ψ̃/n_k)`.
pub fn group_glasso(s: &DMatrix<f64>, zeta: f64, warm: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    let prob = GlassoProblem::new(s, zeta).with_tol(glasso_tol(s)).with_max_sweeps(500);
    match glasso::solve_warm(&prob, warm) {
        Ok(sol) => Ok(sol.omega),
        Err(RjmError::GlassoNotConverged { sweeps, residual, omega }) if linalg::min_eigenvalue(&omega) > 0.0 => {
            warn!("graphical lasso stopped after {sweeps} sweeps with KKT residual {residual:.3e}; using last iterate");
            Ok(*omega)
        }
        Err(e) => Err(e),
    }
}

/// `τ_k = n_k/n`, weighted means, and graphical-lasso precisions with penalty `ψ̃/n_k`.
///
/// With `prev` given, each glasso is warm-started from the previous precision,
/// which is kept whenever the new solution scores lower on the glasso objective.
pub fn m_step_x(
    data: &Dataset,
    resp: &Responsibilities,
    psi_tilde: f64,
    prev: Option<&[ClusterParams]>,
) -> Result<Vec<XUpdate>> {
    let n = data.n() as f64;
    (0..resp.k())
        .map(|k| {
            let n_k = resp.n_k()[k];
            if !(n_k > 0.0) {
                return Err(RjmError::domain("empty group").in_group(k));
            }
            let w = resp.weights(k);
            let mu = linalg::weighted_mean(data.x(), &w);
            let s = linalg::weighted_covariance(data.x(), &w, &mu);
            let zeta = psi_tilde / n_k;
            let warm = prev.map(|p| p[k].omega());
            let mut omega = group_glasso(&s, zeta, warm).map_err(|e| e.in_group(k))?;
            if let Some(old) = warm {
                let new_obj = glasso::objective(&s, zeta, &omega).unwrap_or(f64::NEG_INFINITY);
                let old_obj = glasso::objective(&s, zeta, old).unwrap_or(f64::NEG_INFINITY);
                if old_obj > new_obj {
                    omega = old.clone();
                }
            }
            Ok(XUpdate {
                tau: n_k / n,
                mu,
                omega,
            })
        })
        .collect()
}

/// Regression-block update for every group, in place.
///
/// Lasso schemes: `λ` (random-penalty only), then `ρ` from the previous `(χ, φ)`,
/// `χ` from the new `ρ` and previous `φ`, and `φ` from the new `(ρ, χ)`.
/// Normal-Jeffreys: `σ²` from the previous `(α, β)`, `α` from the previous `β`,
/// then `β` from the new `(σ², α)`.
pub fn m_step_y(
    data: &Dataset,
    resp: &Responsibilities,
    params: &mut [ClusterParams],
    scheme_state: &mut SchemeState,
    config: &FitConfig,
) -> Result<()> {
    let x = data.x();
    let y = data.y();
    let p = data.p();
    for k in 0..params.len() {
        let w = resp.weights(k);
        let n_k = resp.n_k()[k];
        let group = &mut params[k];
        match scheme_state {
            SchemeState::NJ(states) => {
                let sigma2 = regression::nj_sigma_update(y, x, &w, group.alpha, &group.beta).map_err(|e| e.in_group(k))?;
                let alpha = regression::nj_alpha_update(y, x, &w, &group.beta).map_err(|e| e.in_group(k))?;
                let (beta, next) =
                    regression::nj_beta_update(y, x, &w, sigma2, alpha, &states[k]).map_err(|e| e.in_group(k))?;
                group.sigma2 = sigma2;
                group.alpha = alpha;
                group.beta = beta;
                states[k] = next;
            }
            SchemeState::FLasso { .. } | SchemeState::RLasso => {
                if matches!(scheme_state, SchemeState::RLasso) {
                    let sigma = group.sigma2.sqrt();
                    group.lambda = Some(
                        regression::rlasso_lambda(group.beta.abs().sum(), sigma, p, n_k, config.c)
                            .map_err(|e| e.in_group(k))?,
                    );
                }
                let lambda = group
                    .lambda
                    .ok_or_else(|| RjmError::domain("lasso scheme without a penalty").in_group(k))?;
                let prev = group.scaled().map_err(|e| e.in_group(k))?;
                let rho = regression::update_rho(y, &w, prev.chi, &prev.phi, x, p).map_err(|e| e.in_group(k))?;
                let chi = regression::update_chi(y, x, &w, rho, &prev.phi).map_err(|e| e.in_group(k))?;
                let prob = WeightedLassoProblem::new(x, y, &w, chi, rho, lambda);
                let phi = match regression::weighted_lasso_cd(&prob, Some(&prev.phi)) {
                    Ok(phi) => phi,
                    Err(RjmError::LassoNotConverged { sweeps, violation, phi }) => {
                        warn!("group {k}: lasso stopped after {sweeps} sweeps (KKT violation {violation:.3e})");
                        *phi
                    }
                    Err(e) => return Err(e.in_group(k)),
                };
                group.alpha = chi / rho;
                group.beta = phi / rho;
                group.sigma2 = 1.0 / (rho * rho);
            }
        }
    }
    Ok(())
}

/// The three additive parts of the EM objective `Q = Q^Z + Q^X + Q^Y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub z: f64,
    pub x: f64,
    pub y: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.z + self.x + self.y
    }
}

/// Everything besides parameters and responsibilities that the objective depends on.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveContext<'a> {
    pub scheme: Scheme,
    pub psi_tilde: f64,
    /// Random-penalty prior scale.
    pub c: f64,
    /// Normal-Jeffreys latent state `V = U⁻¹` the regression step conditioned on.
    pub nj: Option<&'a [NjState]>,
}

pub fn objective_parts(
    data: &Dataset,
    params: &[ClusterParams],
    resp: &Responsibilities,
    ctx: &ObjectiveContext<'_>,
) -> Result<ObjectiveParts> {
    let k_count = params.len();
    if resp.k() != k_count || resp.n() != data.n() {
        return Err(RjmError::Dimension(format!(
            "responsibilities are {}x{}, expected {}x{}",
            resp.n(),
            resp.k(),
            data.n(),
            k_count
        )));
    }
    if let Some(nj) = ctx.nj {
        if nj.len() != k_count {
            return Err(RjmError::Dimension("one NJ state per group is required".into()));
        }
    }
    let x = data.x();
    let y = data.y();
    let p = data.p() as f64;
    let m = resp.m();
    let mut parts = ObjectiveParts { z: 0.0, x: 0.0, y: 0.0 };
    for (k, c) in params.iter().enumerate() {
        let n_k = resp.n_k()[k];
        parts.z += n_k * c.tau.ln();

        let mut quad = 0.0;
        let mut rss = 0.0;
        for i in 0..data.n() {
            let mki = m[(i, k)];
            if mki == 0.0 {
                continue;
            }
            quad += mki * c.mahalanobis_sq(x.row(i).iter());
            let r = y[i] - c.predict_mean(x.row(i).iter());
            rss += mki * r * r;
        }
        let l1_omega: f64 = c.omega().iter().map(|v| v.abs()).sum();
        parts.x += 0.5 * (n_k * c.omega_log_det() - quad - ctx.psi_tilde * l1_omega);

        match ctx.scheme {
            Scheme::NJ => {
                let penalty = ctx.nj.map(|s| s[k].penalty(&c.beta)).unwrap_or(0.0);
                parts.y += -0.5 * (rss / c.sigma2 + penalty + (n_k + 2.0) * c.sigma2.ln());
            }
            Scheme::FLasso | Scheme::RLasso => {
                let s = to_scaled(c.alpha, &c.beta, c.sigma2)?;
                let lambda = c
                    .lambda
                    .ok_or_else(|| RjmError::domain("lasso scheme without a penalty").in_group(k))?;
                // ½‖M^½(ρy − χ1 − Xφ)‖² = ρ² RSS(α, β) / 2
                let mut qy = -0.5 * s.rho * s.rho * rss - lambda * s.phi.abs().sum() + (n_k + p + 2.0) * s.rho.ln();
                if ctx.scheme == Scheme::RLasso {
                    qy += ctx.c * (2.0 * p.ln() / n_k).sqrt() * lambda.ln();
                }
                parts.y += qy;
            }
        }
    }
    Ok(parts)
}

pub fn objective(
    data: &Dataset,
    params: &[ClusterParams],
    resp: &Responsibilities,
    ctx: &ObjectiveContext<'_>,
) -> Result<f64> {
    objective_parts(data, params, resp, ctx).map(|q| q.total())
}

/// Observed-data log posterior (up to constants): the mixture log-likelihood
/// plus the log prior of every parameter block.
///
/// The Normal-Jeffreys marginal prior `−Σ log|β_j|` is evaluated with `|β_j|`
/// floored at the absorption threshold, so structurally zeroed coefficients
/// contribute a constant.
pub fn log_posterior(data: &Dataset, params: &[ClusterParams], scheme: Scheme, psi_tilde: f64, c: f64, n_k: &[f64]) -> Result<f64> {
    if n_k.len() != params.len() {
        return Err(RjmError::Dimension("one n_k per group is required".into()));
    }
    let x = data.x();
    let y = data.y();
    let p = data.p() as f64;
    let mut total = 0.0;
    let mut row = vec![0.0; params.len()];
    for i in 0..data.n() {
        for (slot, cp) in row.iter_mut().zip(params) {
            *slot = cp.tau.ln() + cp.log_density_x(x.row(i).iter()) + cp.log_density_y(y[i], x.row(i).iter());
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    }
    let floor = regression::NJ_ZERO_THRESHOLD.sqrt();
    for (k, cp) in params.iter().enumerate() {
        total -= 0.5 * psi_tilde * cp.omega().iter().map(|v| v.abs()).sum::<f64>();
        match scheme {
            Scheme::NJ => {
                total -= cp.sigma2.ln();
                total -= cp.beta.iter().map(|b| b.abs().max(floor).ln()).sum::<f64>();
            }
            Scheme::FLasso | Scheme::RLasso => {
                let s = to_scaled(cp.alpha, &cp.beta, cp.sigma2)?;
                let lambda = cp
                    .lambda
                    .ok_or_else(|| RjmError::domain("lasso scheme without a penalty").in_group(k))?;
                total += -lambda * s.phi.abs().sum() + (p + 2.0) * s.rho.ln();
                if scheme == Scheme::RLasso {
                    total += c * (2.0 * p.ln() / n_k[k]).sqrt() * lambda.ln();
                }
            }
        }
    }
    Ok(total)
}

/// Hard labels from k-means++ on standardized features; reshuffles the seed
/// until every cluster has at least [`MIN_INIT_CLUSTER`] members.
pub fn initial_labels(data: &Dataset, config: &FitConfig) -> Result<Vec<usize>> {
    let k = config.k;
    if k == 1 {
        return Ok(vec![0; data.n()]);
    }
    let min_size = if config.scheme == Scheme::FLasso {
        MIN_INIT_CLUSTER.max(config.cv_folds)
    } else {
        MIN_INIT_CLUSTER
    };
    let z = linalg::standardize(data.x());
    for attempt in 0..INIT_ATTEMPTS {
        let fit = baselines::kmeans(&z, k, KMEANS_RESTARTS, mix_seed(config.seed, attempt))?;
        let smallest = fit.sizes().into_iter().min().unwrap_or(0);
        if smallest >= min_size {
            return Ok(fit.labels);
        }
        debug!("k-means attempt {attempt}: smallest cluster has {smallest} rows; reshuffling");
    }
    Err(RjmError::Init(format!(
        "k-means could not produce {k} clusters of at least {min_size} rows in {INIT_ATTEMPTS} attempts"
    )))
}

fn column_sd(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    if var > 0.0 {
        var.sqrt()
    } else {
        1.0
    }
}

/// Builds `θ⁽⁰⁾` from hard labels. Start 0 is unperturbed; later starts add
/// Gaussian noise to `μ`, `β` and `log σ²` and inflate the diagonal of `Σ`.
pub fn initialize_from_labels(data: &Dataset, config: &FitConfig, labels: &[usize], start_index: usize) -> Result<EmState> {
    let n = data.n();
    let p = data.p();
    let k_count = config.k;
    if labels.len() != n {
        return Err(RjmError::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    let x = data.x();
    let y = data.y();
    let x_sd: Vec<f64> = (0..p).map(|j| column_sd(x.column(j).iter().cloned())).collect();
    let y_sd = column_sd(y.iter().cloned());

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x1417));
    rng.set_stream(start_index as u64);
    let perturb = start_index > 0;
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };

    let lambda_cv = if config.scheme == Scheme::FLasso {
        Some(regression::flasso_cv(
            x,
            y,
            labels,
            k_count,
            config.cv_folds,
            config.cv_grid_size,
            mix_seed(config.seed, 0xC5),
        )?)
    } else {
        None
    };

    let mut params = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
        if idx.len() < 2 {
            return Err(RjmError::Init(format!("initial group {k} has {} rows", idx.len())));
        }
        let xk = linalg::select_rows(x, &idx);
        let yk = linalg::select_entries(y, &idx);
        let ones = DVector::from_element(idx.len(), 1.0);
        let mut mu = linalg::weighted_mean(&xk, &ones);
        let mut sigma = linalg::weighted_covariance(&xk, &ones, &mu);
        let load = 0.1 * (sigma.trace() / p as f64).max(1e-8);
        for j in 0..p {
            sigma[(j, j)] += load;
        }
        let (mut alpha, mut beta, rss_n) = regression::ridge_fit(&xk, &yk, 1.0)?;
        let mut sigma2 = rss_n.max(regression::SIGMA2_FLOOR);
        let tau = idx.len() as f64 / n as f64;

        if perturb {
            for j in 0..p {
                mu[j] += 0.1 * x_sd[j] * normal();
            }
            for j in 0..p {
                beta[j] += 0.1 * (y_sd / x_sd[j]) * normal();
            }
            sigma2 *= (0.1 * normal()).exp();
            for j in 0..p {
                sigma[(j, j)] *= 1.0 + (0.1 * normal()).abs();
            }
            // Refit the intercept so the perturbed slope stays centered on the group.
            let x_mean = linalg::weighted_mean(&xk, &ones);
            alpha = yk.mean() - x_mean.dot(&beta);
        }

        let lambda = match config.scheme {
            Scheme::NJ => None,
            Scheme::FLasso => {
                let lam = lambda_cv.as_ref().expect("CV penalties computed above")[k];
                Some(regression::scaled_penalty(&xk, &yk, lam).map_err(|e| e.in_group(k))?)
            }
            Scheme::RLasso => Some(
                regression::rlasso_lambda(beta.abs().sum(), sigma2.sqrt(), p, idx.len() as f64, config.c)
                    .map_err(|e| e.in_group(k))?,
            ),
        };
        params.push(ClusterParams::from_covariance(tau, mu, &sigma, alpha, beta, sigma2, lambda).map_err(|e| e.in_group(k))?);
    }

    let scheme_state = match config.scheme {
        Scheme::NJ => SchemeState::NJ(params.iter().map(|c| NjState::from_beta(&c.beta)).collect()),
        Scheme::RLasso => SchemeState::RLasso,
        Scheme::FLasso => SchemeState::FLasso {
            phase: FlassoPhase::Initial,
            lambda_cv: lambda_cv.unwrap_or_default(),
        },
    };
    Ok(EmState {
        params,
        resp: Responsibilities::from_labels(labels, k_count)?,
        iteration: 0,
        objective: f64::NEG_INFINITY,
        scheme_state,
        prev_labels: labels.to_vec(),
    })
}

pub fn initialize(data: &Dataset, config: &FitConfig, start_index: usize) -> Result<EmState> {
    config.validate()?;
    let labels = initial_labels(data, config)?;
    initialize_from_labels(data, config, &labels, start_index)
}

fn relative_change(new: f64, old: f64) -> f64 {
    if old.abs() < 1e-12 {
        (new - old).abs()
    } else {
        (new / old - 1.0).abs()
    }
}

/// Re-estimates the fixed-penalty scheme's CV penalties on the current labels.
fn refit_flasso(data: &Dataset, config: &FitConfig, labels: &[usize], params: &mut [ClusterParams]) -> Result<Vec<f64>> {
    let lambda_cv = regression::flasso_cv(
        data.x(),
        data.y(),
        labels,
        config.k,
        config.cv_folds,
        config.cv_grid_size,
        mix_seed(config.seed, 0xC6),
    )?;
    let mut scaled = Vec::with_capacity(config.k);
    for (k, lam) in lambda_cv.iter().enumerate() {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        let xk = linalg::select_rows(data.x(), &idx);
        let yk = linalg::select_entries(data.y(), &idx);
        scaled.push(regression::scaled_penalty(&xk, &yk, *lam).map_err(|e| e.in_group(k))?);
    }
    for (c, lam) in params.iter_mut().zip(scaled) {
        c.lambda = Some(lam);
    }
    Ok(lambda_cv)
}

/// Runs one EM from `state` until the relative objective change drops below
/// `tol`, `max_iter` is reached, or a group collapses (the run is then
/// returned with `discarded = true`).
pub fn run(
    data: &Dataset,
    config: &FitConfig,
    mut state: EmState,
    start_index: usize,
    progress: Option<Progress<'_>>,
) -> Result<FitResult> {
    let psi_tilde = config.psi.value(data.n(), data.p());
    let threshold = config.collapse_threshold(data.n());
    let fallback_iter = (config.max_iter / 2).max(1);
    let mut trace: Vec<f64> = Vec::with_capacity(config.max_iter);
    let mut q_trace: Vec<f64> = Vec::with_capacity(config.max_iter);
    let mut converged = false;
    let mut refit_iteration = None;

    for t in 1..=config.max_iter {
        let resp = e_step(data, &state.params)?;
        if resp.min_n_k() <= threshold {
            debug!("start {start_index}: group collapsed at iteration {t} (min n_k = {:.3})", resp.min_n_k());
            let labels = resp.hard_labels();
            return Ok(FitResult {
                params: state.params,
                resp,
                labels,
                objective_trace: trace,
                q_trace,
                converged: false,
                discarded: true,
                start_index,
                iterations: t,
                refit_iteration,
            });
        }
        let labels = resp.hard_labels();
        let label_changes = labels.iter().zip(&state.prev_labels).filter(|(a, b)| a != b).count();

        if let SchemeState::FLasso { phase, lambda_cv } = &mut state.scheme_state {
            if *phase == FlassoPhase::Refit {
                *phase = FlassoPhase::Fixed;
            }
            if *phase == FlassoPhase::Initial && (label_changes == 0 || t >= fallback_iter) {
                match refit_flasso(data, config, &labels, &mut state.params) {
                    Ok(lam) => *lambda_cv = lam,
                    Err(e) => warn!("start {start_index}: penalty re-estimation failed ({e}); keeping initial penalties"),
                }
                *phase = FlassoPhase::Refit;
                refit_iteration = Some(trace.len());
            }
        }

        let updates = m_step_x(data, &resp, psi_tilde, Some(&state.params))?;
        for (c, upd) in state.params.iter_mut().zip(updates) {
            c.tau = upd.tau;
            c.mu = upd.mu;
            c.set_omega(upd.omega)?;
        }
        let nj_before = match &state.scheme_state {
            SchemeState::NJ(s) => Some(s.clone()),
            _ => None,
        };
        m_step_y(data, &resp, &mut state.params, &mut state.scheme_state, config)?;

        let ctx = ObjectiveContext {
            scheme: config.scheme,
            psi_tilde,
            c: config.c,
            nj: nj_before.as_deref(),
        };
        let q = objective(data, &state.params, &resp, &ctx)?;
        let post = log_posterior(data, &state.params, config.scheme, psi_tilde, config.c, resp.n_k())?;
        if !q.is_finite() || !post.is_finite() {
            return Err(RjmError::domain(format!("objective became non-finite at iteration {t}")));
        }
        q_trace.push(q);
        trace.push(post);
        if let Some(cb) = progress {
            cb(&IterationRecord {
                start_index,
                iteration: t,
                objective: post,
                n_k: resp.n_k().to_vec(),
                label_changes,
            });
        }
        state.resp = resp;
        state.prev_labels = labels;
        state.iteration = t;
        state.objective = post;
        if q_trace.len() >= 2 && relative_change(q, q_trace[q_trace.len() - 2]) <= config.tol {
            converged = true;
            break;
        }
    }

    // Report responsibilities and labels under the final parameters.
    let resp = e_step(data, &state.params)?;
    let labels = resp.hard_labels();
    Ok(FitResult {
        params: state.params,
        resp,
        labels,
        objective_trace: trace,
        q_trace,
        converged,
        discarded: false,
        start_index,
        iterations: state.iteration,
        refit_iteration,
    })
}

/// Outcome of every start, in start order.
pub fn fit_all_starts(data: &Dataset, config: &FitConfig, progress: Option<Progress<'_>>) -> Result<Vec<Result<FitResult>>> {
    config.validate()?;
    if data.n() < config.k * MIN_INIT_CLUSTER {
        return Err(RjmError::domain(format!(
            "{} rows are too few for K = {} (need at least {} per group)",
            data.n(),
            config.k,
            MIN_INIT_CLUSTER
        )));
    }
    let labels = initial_labels(data, config)?;
    Ok(par::map_indexed(config.exec, config.n_starts, |s| {
        let state = initialize_from_labels(data, config, &labels, s)?;
        run(data, config, state, s, progress)
    }))
}

/// Picks the non-discarded run with the highest final objective; ties go to the lower start index.
pub fn select_best(runs: Vec<Result<FitResult>>) -> Result<FitResult> {
    let starts = runs.len();
    let mut best: Option<FitResult> = None;
    for (s, run) in runs.into_iter().enumerate() {
        match run {
            Ok(r) if !r.discarded => {
                if best.as_ref().is_none_or(|b| r.objective() > b.objective()) {
                    best = Some(r);
                }
            }
            Ok(_) => debug!("start {s} discarded by the collapse guard"),
            Err(e) => warn!("start {s} failed: {e}"),
        }
    }
    best.ok_or(RjmError::AllRunsDiscarded { starts })
}

pub fn fit_with_progress(data: &Dataset, config: &FitConfig, progress: Option<Progress<'_>>) -> Result<FitResult> {
    select_best(fit_all_starts(data, config, progress)?)
}

/// Multi-start ECM fit.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    fit_with_progress(data, config, None)
}
