//! Built-in comparison methods: k-means with k-means++ seeding and an
//! unregularized Gaussian mixture on the features alone.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RjmError};
use crate::linalg;
use crate::types::{ClusterParams, Responsibilities};

#[derive(Debug, Clone)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// `k x p` cluster centers.
    pub centers: DMatrix<f64>,
    pub inertia: f64,
}

impl KMeans {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centers.nrows()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, k: usize) -> f64 {
    (0..x.ncols()).map(|j| (x[(i, j)] - c[(k, j)]).powi(2)).sum()
}

/// Best of `restarts` Lloyd runs by inertia; ties go to the earliest restart.
pub fn kmeans(x: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    let n = x.nrows();
    if k == 0 || n < k {
        return Err(RjmError::domain(format!("cannot form {k} clusters from {n} rows")));
    }
    let mut best: Option<KMeans> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let fit = lloyd(x, k, &mut rng);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_seed(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let mut centers = DMatrix::zeros(k, p);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &centers, c));
        }
    }
    centers
}

fn lloyd(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> KMeans {
    let n = x.nrows();
    let p = x.ncols();
    let mut centers = plus_plus_seed(x, k, rng);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(x, i, &centers, c);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        let mut sums = DMatrix::<f64>::zeros(k, p);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..p {
                sums[(labels[i], j)] += x[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(x, a, &centers, labels[a]).total_cmp(&sq_dist(x, b, &centers, labels[b]))
                    })
                    .unwrap_or(0);
                centers.row_mut(c).copy_from(&x.row(far));
                labels[far] = c;
                changed = true;
            } else {
                for j in 0..p {
                    centers[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|i| sq_dist(x, i, &centers, labels[i])).sum();
    KMeans {
        labels,
        centers,
        inertia,
    }
}

/// Unregularized full-covariance Gaussian mixture on `x`, initialized from
/// k-means; returns hard labels. A ridge of `1e-6 · tr(S)/p` keeps each
/// covariance invertible.
pub fn gmm_labels(x: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> Result<Vec<usize>> {
    let n = x.nrows();
    let p = x.ncols();
    let init = kmeans(&linalg::standardize(x), k, 10, seed)?;
    let mut resp = Responsibilities::from_labels(&init.labels, k)?;
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..max_iter.max(1) {
        let mut comps = Vec::with_capacity(k);
        for c in 0..k {
            let w = resp.weights(c);
            let nk = resp.n_k()[c];
            if nk <= p as f64 * 1e-8 {
                return Err(RjmError::domain("a mixture component became empty"));
            }
            let mu = linalg::weighted_mean(x, &w);
            let mut s = linalg::weighted_covariance(x, &w, &mu);
            let ridge = 1e-6 * (s.trace() / p as f64).max(1e-12);
            for j in 0..p {
                s[(j, j)] += ridge;
            }
            comps.push(ClusterParams::from_covariance(
                nk / n as f64,
                mu,
                &s,
                0.0,
                DVector::zeros(p),
                1.0,
                None,
            )?);
        }
        let log_w = DMatrix::from_fn(n, k, |i, c| comps[c].tau.ln() + comps[c].log_density_x(x.row(i).iter()));
        let ll: f64 = (0..n)
            .map(|i| {
                let row = log_w.row(i);
                let m = row.max();
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
            .sum();
        resp = Responsibilities::from_log_weights(&log_w)?;
        if (ll - prev_ll).abs() <= 1e-8 * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    Ok(resp.hard_labels())
}
