//! Forecast evaluation: Brier score, accuracy, AUC, expected calibration
//! error, reliability tables, mean KL against human histograms, and the
//! ranked-uncertainty error curve.
//!
//! Calibration bins follow the partition `[0, 1/M], (1/M, 2/M], ...`: the
//! first bin is closed on the left, every later bin is half-open on the
//! left and closed on the right. AUC uses the Mann-Whitney rank statistic
//! with average ranks for ties, which agrees exactly with the pairwise
//! wins-plus-half-ties count.

use serde::{Deserialize, Serialize};

use crate::beta::{BetaMixture, Histogram};
use crate::error::{Error, Result};
use crate::losses::human_loss;

fn validate_pairs(preds: &[f64], outcomes: &[u8]) -> Result<()> {
    if preds.len() != outcomes.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: outcomes.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("metrics need at least one item"));
    }
    for &p in preds {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "predictions must lie in [0, 1], got {p}"
            )));
        }
    }
    for &y in outcomes {
        if y > 1 {
            return Err(Error::InvalidParameter(format!(
                "outcomes must be 0 or 1, got {y}"
            )));
        }
    }
    Ok(())
}

/// Index of the calibration bin containing `p` among `m` equal-width bins:
/// bin 0 is `[0, 1/m]`, bin `j > 0` is `(j/m, (j+1)/m]`.
pub(crate) fn bin_index(p: f64, m: usize) -> usize {
    let scaled = p * m as f64;
    if scaled <= 1.0 {
        0
    } else {
        (scaled.ceil() as usize - 1).min(m - 1)
    }
}

/// Mean squared error between predictions and binary outcomes.
pub fn brier(preds: &[f64], outcomes: &[u8]) -> Result<f64> {
    validate_pairs(preds, outcomes)?;
    let n = preds.len() as f64;
    let total: f64 = preds
        .iter()
        .zip(outcomes)
        .map(|(&p, &y)| {
            let d = p - y as f64;
            d * d
        })
        .sum();
    Ok(total / n)
}

/// Fraction of items where thresholding at 0.5 reproduces the outcome.
/// A prediction of exactly 0.5 counts as a positive call.
pub fn accuracy(preds: &[f64], outcomes: &[u8]) -> Result<f64> {
    validate_pairs(preds, outcomes)?;
    let correct = preds
        .iter()
        .zip(outcomes)
        .filter(|&(&p, &y)| (p >= 0.5) as u8 == y)
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Area under the ROC curve via the Mann-Whitney statistic with average
/// ranks for tied predictions. Requires at least one item of each class.
pub fn auc(preds: &[f64], outcomes: &[u8]) -> Result<f64> {
    validate_pairs(preds, outcomes)?;
    let n = preds.len();
    let n_pos = outcomes.iter().filter(|&&y| y == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| preds[a].partial_cmp(&preds[b]).expect("finite predictions"));
    // Walk runs of equal predictions; every item in a run gets the average
    // of the 1-based ranks the run spans.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && preds[idx[j]] == preds[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        let pos_in_run = idx[i..j].iter().filter(|&&t| outcomes[t] == 1).count();
        rank_sum_pos += pos_in_run as f64 * avg_rank;
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Expected calibration error over `m` equal-width bins: the bin-count
/// weighted mean absolute gap between mean prediction and empirical
/// accuracy. Empty bins contribute nothing.
pub fn ece(preds: &[f64], outcomes: &[u8], m: usize) -> Result<f64> {
    let table = reliability_table(preds, outcomes, m)?;
    let n = preds.len() as f64;
    Ok(table
        .iter()
        .map(|bin| bin.count as f64 / n * (bin.accuracy - bin.mean_pred).abs())
        .sum())
}

/// One non-empty calibration bin: mean prediction, empirical accuracy, and
/// item count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub mean_pred: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Per-bin reliability rows (non-empty bins only, in bin order) under the
/// same partition as [`ece`].
pub fn reliability_table(preds: &[f64], outcomes: &[u8], m: usize) -> Result<Vec<ReliabilityBin>> {
    validate_pairs(preds, outcomes)?;
    if m < 1 {
        return Err(Error::InvalidParameter("need at least 1 bin".into()));
    }
    let mut sum_pred = vec![0.0; m];
    let mut sum_pos = vec![0usize; m];
    let mut counts = vec![0usize; m];
    for (&p, &y) in preds.iter().zip(outcomes) {
        let b = bin_index(p, m);
        sum_pred[b] += p;
        sum_pos[b] += y as usize;
        counts[b] += 1;
    }
    Ok((0..m)
        .filter(|&b| counts[b] > 0)
        .map(|b| ReliabilityBin {
            mean_pred: sum_pred[b] / counts[b] as f64,
            accuracy: sum_pos[b] as f64 / counts[b] as f64,
            count: counts[b],
        })
        .collect())
}

/// Mean KL divergence between human histograms and the matching predicted
/// mixtures.
pub fn eval_kl(mixtures: &[BetaMixture], histograms: &[Histogram]) -> Result<f64> {
    if mixtures.len() != histograms.len() {
        return Err(Error::LengthMismatch {
            left: mixtures.len(),
            right: histograms.len(),
        });
    }
    if mixtures.is_empty() {
        return Err(Error::EmptyInput("eval_kl needs at least one pair"));
    }
    let mut total = 0.0;
    for (m, h) in mixtures.iter().zip(histograms) {
        total += human_loss(m, h)?;
    }
    Ok(total / mixtures.len() as f64)
}

/// Rolling-mean Brier score after sorting items by uncertainty ascending
/// (ties keep their input order). Entry `i` covers sorted items
/// `[i, i + window)`; the result has length `n - window + 1`.
pub fn uncertainty_curve(
    uncertainties: &[f64],
    preds: &[f64],
    outcomes: &[u8],
    window: usize,
) -> Result<Vec<(usize, f64)>> {
    validate_pairs(preds, outcomes)?;
    if uncertainties.len() != preds.len() {
        return Err(Error::LengthMismatch {
            left: uncertainties.len(),
            right: preds.len(),
        });
    }
    for &u in uncertainties {
        if !u.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "uncertainties must be finite, got {u}"
            )));
        }
    }
    let n = preds.len();
    if window == 0 {
        return Err(Error::InvalidParameter("window must be at least 1".into()));
    }
    if window > n {
        return Err(Error::WindowTooLarge { window, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    // Stable sort: equal uncertainties keep their original order.
    idx.sort_by(|&a, &b| {
        uncertainties[a]
            .partial_cmp(&uncertainties[b])
            .expect("finite uncertainties")
    });
    let sq_err: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let d = preds[i] - outcomes[i] as f64;
            d * d
        })
        .collect();
    let mut curve = Vec::with_capacity(n - window + 1);
    let mut acc: f64 = sq_err[..window].iter().sum();
    curve.push((0, acc / window as f64));
    for i in 1..=n - window {
        acc += sq_err[i + window - 1] - sq_err[i - 1];
        curve.push((i, acc / window as f64));
    }
    Ok(curve)
}

/// Headline metrics for one evaluation run. `kl_mean` is present only when
/// histogram supervision was available.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub brier: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub ece: f64,
    pub kl_mean: Option<f64>,
}

/// Compute the headline metrics in one call. `kl_mean` is passed through
/// from the caller, which owns the mixture/histogram pairing.
pub fn evaluate(
    preds: &[f64],
    outcomes: &[u8],
    bins: usize,
    kl_mean: Option<f64>,
) -> Result<EvalReport> {
    Ok(EvalReport {
        n: preds.len(),
        brier: brier(preds, outcomes)?,
        accuracy: accuracy(preds, outcomes)?,
        auc: auc(preds, outcomes)?,
        ece: ece(preds, outcomes, bins)?,
        kl_mean,
    })
}
