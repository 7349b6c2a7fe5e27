//! Evaluation measures: adjusted Rand index, variable-selection AUC,
//! standardized coefficient RMSE and inclusion frequencies.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Result, RjmError};

/// Cross-tabulation of two partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub counts: DMatrix<u64>,
}

impl ContingencyTable {
    /// Rows follow the sorted distinct values of `a`, columns those of `b`.
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(RjmError::Dimension(format!("partitions have {} and {} entries", a.len(), b.len())));
        }
        let index = |v: &[usize]| {
            let distinct: BTreeSet<usize> = v.iter().cloned().collect();
            distinct.into_iter().enumerate().map(|(i, l)| (l, i)).collect::<BTreeMap<_, _>>()
        };
        let ra = index(a);
        let rb = index(b);
        let mut counts = DMatrix::zeros(ra.len(), rb.len());
        for (x, y) in a.iter().zip(b) {
            counts[(ra[x], rb[y])] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn pairs(m: u64) -> f64 {
    let m = m as f64;
    m * (m - 1.0) / 2.0
}

/// Hubert–Arabie adjusted Rand index. When both partitions are trivial the
/// index is undefined; it is 1 for identical partitions and 0 otherwise.
pub fn adjusted_rand(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(labels_a, labels_b)?;
    let n = table.total();
    if n < 2 {
        return Err(RjmError::domain("adjusted Rand index needs at least two items"));
    }
    let c = &table.counts;
    let index: f64 = c.iter().map(|&v| pairs(v)).sum();
    let rows: f64 = c.row_iter().map(|r| pairs(r.sum())).sum();
    let cols: f64 = c.column_iter().map(|col| pairs(col.sum())).sum();
    let expected = rows * cols / pairs(n);
    let max_index = 0.5 * (rows + cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        let identical = c.nrows() == c.ncols() && c.iter().filter(|&&v| v > 0).count() == c.nrows();
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

/// Rank-based AUC of `|scores|` for support against non-support coordinates; ties count one half.
pub fn selection_auc(true_support: &[bool], scores: &[f64]) -> Result<f64> {
    if true_support.len() != scores.len() {
        return Err(RjmError::Dimension(format!(
            "support has {} entries, scores {}",
            true_support.len(),
            scores.len()
        )));
    }
    let n_pos = true_support.iter().filter(|&&s| s).count();
    let n_neg = true_support.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(RjmError::domain("support must contain both true and false entries"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(RjmError::domain("scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].abs().total_cmp(&scores[j].abs()));
    // Mid-ranks over tie blocks.
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]].abs() == scores[order[start]].abs() {
            end += 1;
        }
        let mid = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = mid;
        }
        start = end + 1;
    }
    let rank_sum: f64 = (0..scores.len()).filter(|&i| true_support[i]).map(|i| ranks[i]).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// RMSE between `β̂_j·sd_j` and `β_j·sd_j`.
pub fn coef_rmse_standardized(beta_hat: &DVector<f64>, beta_true: &DVector<f64>, x_sd: &DVector<f64>) -> Result<f64> {
    if beta_hat.len() != beta_true.len() || beta_hat.len() != x_sd.len() {
        return Err(RjmError::Dimension(format!(
            "lengths {}, {} and {} differ",
            beta_hat.len(),
            beta_true.len(),
            x_sd.len()
        )));
    }
    if beta_hat.is_empty() {
        return Err(RjmError::domain("empty coefficient vector"));
    }
    if x_sd.iter().any(|s| !(*s > 0.0)) {
        return Err(RjmError::domain("feature standard deviations must be positive"));
    }
    let sse: f64 = (0..beta_hat.len())
        .map(|j| ((beta_hat[j] - beta_true[j]) * x_sd[j]).powi(2))
        .sum();
    Ok((sse / beta_hat.len() as f64).sqrt())
}

/// Threshold below which a fitted coefficient counts as excluded.
pub const INCLUSION_THRESHOLD: f64 = 1e-8;

/// Fraction of runs with `|β_j| > threshold`, per coordinate.
pub fn inclusion_frequencies(results: &[DVector<f64>], threshold: f64) -> Result<DVector<f64>> {
    let first = results.first().ok_or_else(|| RjmError::domain("no fitted coefficient vectors"))?;
    let p = first.len();
    let mut freq = DVector::zeros(p);
    for beta in results {
        if beta.len() != p {
            return Err(RjmError::Dimension(format!("coefficient vectors of length {p} and {}", beta.len())));
        }
        for j in 0..p {
            if beta[j].abs() > threshold {
                freq[j] += 1.0;
            }
        }
    }
    Ok(freq / results.len() as f64)
}

/// One row of a long-format metric table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub case: String,
    pub d: f64,
    pub rep: usize,
    pub value: f64,
}

/// Writes `metric,case,d,rep,value`.
pub fn write_metric_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| RjmError::Io(e.into());
    w.write_record(["metric", "case", "d", "rep", "value"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.metric.clone(),
            r.case.clone(),
            crate::io::fmt_f64(r.d),
            r.rep.to_string(),
            crate::io::fmt_f64(r.value),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_perfect_and_relabelled() {
        let a = [0, 0, 1, 1, 2, 2];
        let b = [5, 5, 3, 3, 9, 9];
        assert_eq!(adjusted_rand(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn ari_hand_computed() {
        // Table [[1,1],[1,1]]: index 0, rows 2, cols 2, expected 2*2/6.
        let expected = (0.0 - 4.0 / 6.0) / (2.0 - 4.0 / 6.0);
        let v = adjusted_rand(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap();
        assert!((v - expected).abs() < 1e-15);
        assert!((v + 0.5).abs() < 1e-15);
    }

    #[test]
    fn ari_degenerate_cases() {
        assert_eq!(adjusted_rand(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.0);
        assert_eq!(adjusted_rand(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(adjusted_rand(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(adjusted_rand(&[0, 1, 2], &[0, 0, 0]).unwrap(), 0.0);
        assert!(adjusted_rand(&[0], &[0]).is_err());
        assert!(adjusted_rand(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn auc_edges() {
        assert_eq!(selection_auc(&[true, false, false], &[3.0, 1.0, -2.0]).unwrap(), 1.0);
        assert_eq!(selection_auc(&[true, false, true], &[1.0, 1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(selection_auc(&[false, true], &[5.0, 0.0]).unwrap(), 0.0);
        assert!(selection_auc(&[true, true], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_cases() {
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let ones = DVector::from_element(2, 1.0);
        assert_eq!(coef_rmse_standardized(&b, &b, &ones).unwrap(), 0.0);
        let z = DVector::zeros(2);
        assert!((coef_rmse_standardized(&b, &z, &ones).unwrap() - (2.5f64).sqrt()).abs() < 1e-15);
        let sd = DVector::from_vec(vec![2.0, 0.5]);
        assert!((coef_rmse_standardized(&b, &z, &sd).unwrap() - (2.5f64).sqrt()).abs() < 1e-15);
        assert!(coef_rmse_standardized(&b, &z, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn inclusion_counts() {
        let runs = vec![
            DVector::from_vec(vec![1.0, 0.0, 1e-9]),
            DVector::from_vec(vec![0.5, -0.2, 0.0]),
            DVector::from_vec(vec![0.0, 0.0, 0.0]),
        ];
        let f = inclusion_frequencies(&runs, INCLUSION_THRESHOLD).unwrap();
        assert_eq!(f.as_slice(), &[2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert!(inclusion_frequencies(&[], 1e-8).is_err());
    }
}
