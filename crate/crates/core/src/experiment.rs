//! Simulation sweeps over mean-shift grid x replicate x method, producing
//! long-format metric rows (ARI, selection-AUC loss and coefficient RMSE
//! increase relative to a label-oracle lasso).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::em;
use crate::error::{Result, RjmError};
use crate::linalg;
use crate::metrics;
use crate::par::{self, mix_seed, Exec};
use crate::regression;
use crate::simgen::{self, SimData, SimSpec};
use crate::types::{FitConfig, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Rjm(Scheme),
    KMeans,
    Gmm,
}

impl Method {
    pub fn name(self) -> String {
        match self {
            Method::Rjm(s) => format!("rjm-{}", s.name()),
            Method::KMeans => "kmeans".into(),
            Method::Gmm => "gmm".into(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = RjmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" => Ok(Method::KMeans),
            "gmm" => Ok(Method::Gmm),
            other => other
                .strip_prefix("rjm-")
                .unwrap_or(other)
                .parse::<Scheme>()
                .map(Method::Rjm)
                .map_err(|_| RjmError::domain(format!("unknown method {s:?}"))),
        }
    }
}

/// Parses `start:end:step` (inclusive of `end` up to rounding) or a comma list.
pub fn parse_d_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || RjmError::domain(format!("invalid d grid {s:?} (expected start:end:step or a comma list)"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let grid: Vec<f64> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(bad());
        }
        let count = ((b - a) / step + 1e-9).floor() as usize + 1;
        // Rounded so 0.1 + 3*0.05 prints as 0.25.
        (0..count).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if grid.is_empty() || grid.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Scenario, case and design; `d` and `seed` are overwritten per cell.
    pub spec: SimSpec,
    pub d_grid: Vec<f64>,
    pub reps: usize,
    pub methods: Vec<Method>,
    /// Template for RJM fits; `k`, `scheme` and `seed` are set per cell.
    pub fit: FitConfig,
    pub seed: u64,
    pub exec: Exec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub method: String,
    pub metric: String,
    pub case: String,
    pub d: f64,
    pub rep: usize,
    pub value: Option<f64>,
    pub status: String,
}

impl ExperimentRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Seed of the data set in cell `(d_index, rep)`.
pub fn cell_seed(seed: u64, d_index: usize, rep: usize) -> u64 {
    mix_seed(seed, ((d_index as u64) << 32) | rep as u64)
}

/// Fitted labels and per-cluster coefficients of one method.
struct MethodFit {
    labels: Vec<usize>,
    betas: Vec<DVector<f64>>,
}

fn fit_method(method: Method, sim: &SimData, k: usize, template: &FitConfig, seed: u64) -> Result<MethodFit> {
    let data = &sim.data;
    match method {
        Method::Rjm(scheme) => {
            let cfg = FitConfig {
                k,
                scheme,
                seed,
                exec: Exec::Sequential,
                ..template.clone()
            };
            let fit = em::fit(data, &cfg)?;
            Ok(MethodFit {
                betas: fit.params.iter().map(|c| c.beta.clone()).collect(),
                labels: fit.labels,
            })
        }
        Method::KMeans | Method::Gmm => {
            let labels = if method == Method::KMeans {
                baselines::kmeans(data.x(), k, 10, seed)?.labels
            } else {
                baselines::gmm_labels(data.x(), k, seed, 200)?
            };
            let betas = cluster_lasso(data.x(), data.y(), &labels, k, seed)?;
            Ok(MethodFit { labels, betas })
        }
    }
}

/// Separate CV-tuned lassos on each cluster; clusters too small for CV get zero coefficients.
fn cluster_lasso(x: &DMatrix<f64>, y: &DVector<f64>, labels: &[usize], k: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    (0..k)
        .map(|g| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == g).collect();
            if idx.len() < 10 {
                return Ok(DVector::zeros(x.ncols()));
            }
            let xg = linalg::select_rows(x, &idx);
            let yg = linalg::select_entries(y, &idx);
            let (lambda, _, _) = regression::lasso_cv(&xg, &yg, 5, 50, mix_seed(seed, g as u64))?;
            Ok(regression::lasso_fit(&xg, &yg, lambda)?.beta)
        })
        .collect()
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for perm in permutations(k - 1) {
        for pos in 0..=perm.len() {
            let mut p = perm.clone();
            p.insert(pos, k - 1);
            out.push(p);
        }
    }
    out
}

/// `matching[true_group] = fitted_cluster`, maximizing the number of agreeing rows.
pub fn match_clusters(truth: &[usize], fitted: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![vec![0usize; k]; k];
    for (&t, &f) in truth.iter().zip(fitted) {
        if t < k && f < k {
            counts[t][f] += 1;
        }
    }
    if k <= 6 {
        permutations(k)
            .into_iter()
            .max_by_key(|perm| (0..k).map(|g| counts[g][perm[g]]).sum::<usize>())
            .unwrap_or_default()
    } else {
        let mut used = vec![false; k];
        (0..k)
            .map(|g| {
                let best = (0..k).filter(|&c| !used[c]).max_by_key(|&c| counts[g][c]).unwrap_or(0);
                used[best] = true;
                best
            })
            .collect()
    }
}

struct CellTruth {
    oracle: Vec<DVector<f64>>,
    sds: Vec<DVector<f64>>,
}

fn cell_truth(sim: &SimData, k: usize, seed: u64) -> Result<CellTruth> {
    let x = sim.data.x();
    let oracle = cluster_lasso(x, sim.data.y(), &sim.labels, k, mix_seed(seed, 0x0AC1E))?;
    let sds = (0..k)
        .map(|g| {
            let idx: Vec<usize> = (0..sim.labels.len()).filter(|&i| sim.labels[i] == g).collect();
            linalg::column_scales(&linalg::select_rows(x, &idx)).1
        })
        .collect();
    Ok(CellTruth { oracle, sds })
}

fn method_metrics(sim: &SimData, truth: &CellTruth, fit: &MethodFit, k: usize) -> Result<Vec<(String, f64)>> {
    let mut out = vec![("ari".to_string(), metrics::adjusted_rand(&sim.labels, &fit.labels)?)];
    let matching = match_clusters(&sim.labels, &fit.labels, k);
    let p = sim.data.p();
    for g in 0..k {
        let beta_true = DVector::from_vec(sim.truth.beta[g].clone());
        let support: Vec<bool> = (0..p).map(|j| sim.truth.support[g].contains(&j)).collect();
        let est = &fit.betas[matching[g]];
        let oracle = &truth.oracle[g];
        if support.iter().any(|s| *s) && support.iter().any(|s| !*s) {
            let auc = |b: &DVector<f64>| metrics::selection_auc(&support, b.as_slice());
            out.push((format!("auc_loss_{}", g + 1), auc(oracle)? - auc(est)?));
        }
        let rmse = |b: &DVector<f64>| metrics::coef_rmse_standardized(b, &beta_true, &truth.sds[g]);
        out.push((format!("rmse_increase_{}", g + 1), rmse(est)? - rmse(oracle)?));
    }
    Ok(out)
}

fn run_cell(cfg: &ExperimentConfig, d_index: usize, rep: usize) -> Vec<ExperimentRow> {
    let d = cfg.d_grid[d_index];
    let case = cfg.spec.case.to_string();
    let row = |method: &str, metric: &str, value: Option<f64>, status: String| ExperimentRow {
        method: method.to_string(),
        metric: metric.to_string(),
        case: case.clone(),
        d,
        rep,
        value,
        status,
    };
    let seed = cell_seed(cfg.seed, d_index, rep);
    let spec = SimSpec {
        d,
        seed,
        ..cfg.spec.clone()
    };
    let k = spec.k();
    let sim = match simgen::generate(&spec) {
        Ok(s) => s,
        Err(e) => {
            warn!("d = {d}, rep {rep}: data generation failed: {e}");
            return cfg
                .methods
                .iter()
                .map(|m| row(&m.name(), "ari", None, format!("failed: {e}")))
                .collect();
        }
    };
    let truth = cell_truth(&sim, k, seed);
    let mut rows = Vec::new();
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let name = method.name();
        let result = truth.as_ref().map_err(|e| RjmError::domain(e.to_string())).and_then(|t| {
            let fit = fit_method(method, &sim, k, &cfg.fit, mix_seed(seed, mi as u64 + 1))?;
            method_metrics(&sim, t, &fit, k)
        });
        match result {
            Ok(values) => rows.extend(values.into_iter().map(|(m, v)| row(&name, &m, Some(v), "ok".into()))),
            Err(e) => {
                warn!("{name}, d = {d}, rep {rep}: {e}");
                rows.push(row(&name, "ari", None, format!("failed: {e}")));
            }
        }
    }
    rows
}

/// Runs every `(d, rep)` cell; cells run in parallel, rows come back in grid order.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    if cfg.reps == 0 || cfg.d_grid.is_empty() || cfg.methods.is_empty() {
        return Err(RjmError::domain("experiment needs at least one d value, replicate and method"));
    }
    cfg.spec.validate()?;
    let reps = cfg.reps;
    let cells = cfg.d_grid.len() * reps;
    let rows: Vec<ExperimentRow> = par::map_indexed(cfg.exec, cells, |c| run_cell(cfg, c / reps, c % reps))
        .into_iter()
        .flatten()
        .collect();
    Ok(rows)
}

/// Writes `method,metric,case,d,rep,value,status`.
pub fn write_csv<W: Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| RjmError::Io(e.into());
    w.write_record(["method", "metric", "case", "d", "rep", "value", "status"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.metric.clone(),
            r.case.clone(),
            crate::io::fmt_f64(r.d),
            r.rep.to_string(),
            r.value.map(crate::io::fmt_f64).unwrap_or_default(),
            r.status.clone(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
