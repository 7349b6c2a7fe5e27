//! Allocation of new feature vectors, group-wise response prediction and
//! predictive-loss selection of the number of groups.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::em;
use crate::error::{Result, RjmError};
use crate::par;
use crate::types::{ClusterParams, Dataset, FitConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Posterior group probabilities given the features alone.
    pub probs: DVector<f64>,
    /// Zero-based argmax of `probs`.
    pub hard: usize,
}

/// `π_k ∝ τ_k φ_p(x* | μ_k, Σ_k)`, normalized in log space.
pub fn allocate<'a>(x_star: impl Iterator<Item = &'a f64> + Clone, params: &[ClusterParams]) -> Result<Allocation> {
    if params.is_empty() {
        return Err(RjmError::domain("no groups to allocate to"));
    }
    let log_w: Vec<f64> = params
        .iter()
        .map(|c| c.tau.ln() + c.log_density_x(x_star.clone()))
        .collect();
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(RjmError::domain("every group density underflows for this point"));
    }
    let w: Vec<f64> = log_w.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let probs = DVector::from_iterator(w.len(), w.iter().map(|v| v / total));
    let mut hard = 0;
    for k in 1..probs.len() {
        if probs[k] > probs[hard] {
            hard = k;
        }
    }
    Ok(Allocation { probs, hard })
}

/// `ŷ = α_k + x*ᵀβ_k` for the hard-allocated group `k`.
pub fn predict_y<'a>(x_star: impl Iterator<Item = &'a f64> + Clone, params: &[ClusterParams]) -> Result<f64> {
    let alloc = allocate(x_star.clone(), params)?;
    Ok(params[alloc.hard].predict_mean(x_star))
}

/// Allocation and prediction for every row of `x`.
pub fn predict_rows(x: &DMatrix<f64>, params: &[ClusterParams]) -> Result<Vec<(Allocation, f64)>> {
    let p = params.first().map(|c| c.p()).unwrap_or(0);
    if x.ncols() != p {
        return Err(RjmError::Dimension(format!("data has {} columns, model expects {p}", x.ncols())));
    }
    (0..x.nrows())
        .map(|i| {
            let alloc = allocate(x.row(i).iter(), params).map_err(|e| match e {
                RjmError::Domain(m) => RjmError::domain(format!("row {i}: {m}")),
                other => other,
            })?;
            let y_hat = params[alloc.hard].predict_mean(x.row(i).iter());
            Ok((alloc, y_hat))
        })
        .collect()
}

/// Seeded random split with `⌈frac·n⌉` training rows.
pub fn train_test_split(n: usize, frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(RjmError::domain(format!("split fraction must lie in (0, 1), got {frac}")));
    }
    let n_train = (frac * n as f64).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(RjmError::domain(format!("split {frac} of {n} rows leaves an empty side")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupLoss {
    /// Zero-based group index.
    pub group: usize,
    pub n_test: usize,
    /// `None` when no test point was allocated to this group.
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateLoss {
    pub k: usize,
    pub groups: Vec<GroupLoss>,
    /// Mean of group MSEs over non-empty test groups; `None` if the candidate was excluded.
    pub mean_mse: Option<f64>,
    /// Why the candidate was excluded, if it was.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub best_k: usize,
    pub losses: Vec<CandidateLoss>,
}

/// Group-wise predictive loss of a fitted model on test data.
pub fn group_losses(params: &[ClusterParams], test: &Dataset) -> Result<Vec<GroupLoss>> {
    let preds = predict_rows(test.x(), params)?;
    let k = params.len();
    let mut sse = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (i, (alloc, y_hat)) in preds.iter().enumerate() {
        let r = test.y()[i] - y_hat;
        sse[alloc.hard] += r * r;
        count[alloc.hard] += 1;
    }
    Ok((0..k)
        .map(|g| GroupLoss {
            group: g,
            n_test: count[g],
            mse: (count[g] > 0).then(|| sse[g] / count[g] as f64),
        })
        .collect())
}

fn candidate_loss(train: &Dataset, test: &Dataset, k: usize, config: &FitConfig) -> CandidateLoss {
    let cfg = FitConfig { k, ..config.clone() };
    let excluded = |note: String| CandidateLoss {
        k,
        groups: Vec::new(),
        mean_mse: None,
        note: Some(note),
    };
    let fit = match em::fit(train, &cfg) {
        Ok(f) => f,
        Err(e) => return excluded(format!("fit failed: {e}")),
    };
    let groups = match group_losses(&fit.params, test) {
        Ok(g) => g,
        Err(e) => return excluded(format!("prediction failed: {e}")),
    };
    let filled: Vec<f64> = groups.iter().filter_map(|g| g.mse).collect();
    if filled.is_empty() {
        return CandidateLoss {
            k,
            groups,
            mean_mse: None,
            note: Some("every test group is empty".into()),
        };
    }
    let note = (filled.len() < k).then(|| format!("{} of {k} test groups empty", k - filled.len()));
    CandidateLoss {
        k,
        groups,
        mean_mse: Some(filled.iter().sum::<f64>() / filled.len() as f64),
        note,
    }
}

/// Fits each candidate `K` on `train` and picks the one with the smallest
/// mean group-wise test MSE. Ties go to the smaller `K`.
pub fn select_k(train: &Dataset, test: &Dataset, candidate_ks: &[usize], config: &FitConfig) -> Result<Selection> {
    if candidate_ks.is_empty() {
        return Err(RjmError::domain("no candidate K given"));
    }
    if let Some(bad) = candidate_ks.iter().find(|k| **k == 0) {
        return Err(RjmError::domain(format!("invalid candidate K = {bad}")));
    }
    if test.n() == 0 {
        return Err(RjmError::domain("test set is empty"));
    }
    let losses = par::map_indexed(config.exec, candidate_ks.len(), |i| candidate_loss(train, test, candidate_ks[i], config));
    let mut best: Option<(usize, f64)> = None;
    for c in &losses {
        match c.mean_mse {
            Some(m) => {
                if best.is_none_or(|(bk, bm)| m < bm || (m == bm && c.k < bk)) {
                    best = Some((c.k, m));
                }
            }
            None => warn!("candidate K = {} excluded: {}", c.k, c.note.as_deref().unwrap_or("unknown reason")),
        }
    }
    let (best_k, _) = best.ok_or_else(|| RjmError::domain("every candidate K was excluded"))?;
    Ok(Selection { best_k, losses })
}

/// Writes `k,group,n_test,mse,mean_mse` with 1-based groups; empty groups leave `mse` blank.
pub fn write_loss_csv<W: Write>(selection: &Selection, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| RjmError::Io(e.into());
    w.write_record(["k", "group", "n_test", "mse", "mean_mse"]).map_err(io)?;
    for c in &selection.losses {
        let mean = c.mean_mse.map(crate::io::fmt_f64).unwrap_or_default();
        for g in &c.groups {
            w.write_record([
                c.k.to_string(),
                (g.group + 1).to_string(),
                g.n_test.to_string(),
                g.mse.map(crate::io::fmt_f64).unwrap_or_default(),
                mean.clone(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
