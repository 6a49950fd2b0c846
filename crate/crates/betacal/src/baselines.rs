//! Classical post-hoc calibration baselines: Platt scaling, isotonic
//! regression, and histogram binning.
//!
//! Platt scaling fits `sigma(slope * p + intercept)` on raw probabilities
//! (not log-odds) by Newton's method on the mean negative log-likelihood.
//! Isotonic regression is pool-adjacent-violators with ties grouped by
//! predictor value and a right-continuous step function for prediction.
//! Binning averages outcomes per calibration bin, falling back to the
//! global rate for empty bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::bin_index;

fn validate_fit_input(preds: &[f64], outcomes: &[u8]) -> Result<()> {
    if preds.len() != outcomes.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: outcomes.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("baseline fits need at least one item"));
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

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Parameters of the Platt map `p -> sigma(slope * p + intercept)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub slope: f64,
    pub intercept: f64,
}

impl PlattParams {
    pub fn apply(&self, p: f64) -> f64 {
        sigmoid(self.slope * p + self.intercept)
    }
}

/// Fit Platt parameters by Newton's method with backtracking on the mean
/// negative log-likelihood. Needs both outcome classes; separable data (no
/// finite optimum) surfaces as a convergence failure.
pub fn fit_platt(preds: &[f64], outcomes: &[u8]) -> Result<PlattParams> {
    validate_fit_input(preds, outcomes)?;
    let n_pos = outcomes.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == preds.len() {
        return Err(Error::SingleClass);
    }
    let n = preds.len() as f64;
    // Mean NLL, gradient, and Hessian of (slope, intercept).
    let stats = |slope: f64, intercept: f64| -> (f64, [f64; 2], [f64; 3]) {
        let mut loss = 0.0;
        let mut g = [0.0, 0.0];
        let mut h = [0.0, 0.0, 0.0]; // [d2_ss, d2_si, d2_ii]
        for (&p, &y) in preds.iter().zip(outcomes) {
            let z = slope * p + intercept;
            // Stable log(1 + exp(.)) form of the logistic NLL.
            loss += z.max(0.0) - z * y as f64 + (-z.abs()).exp().ln_1p();
            let s = sigmoid(z);
            let r = s - y as f64;
            g[0] += r * p;
            g[1] += r;
            let curv = s * (1.0 - s);
            h[0] += curv * p * p;
            h[1] += curv * p;
            h[2] += curv;
        }
        (
            loss / n,
            [g[0] / n, g[1] / n],
            [h[0] / n, h[1] / n, h[2] / n],
        )
    };

    let mut slope = 1.0;
    let mut intercept = 0.0;
    const GRAD_TOL: f64 = 1e-8;
    const RIDGE: f64 = 1e-12;
    for _ in 0..200 {
        let (loss, g, h) = stats(slope, intercept);
        if (g[0] * g[0] + g[1] * g[1]).sqrt() < GRAD_TOL {
            return Ok(PlattParams { slope, intercept });
        }
        // Solve (H + ridge I) step = g for the 2x2 system.
        let a = h[0] + RIDGE;
        let b = h[1];
        let c = h[2] + RIDGE;
        let det = a * c - b * b;
        if det <= 0.0 || !det.is_finite() {
            return Err(Error::Numerical(
                "Platt fit: singular Hessian".into(),
            ));
        }
        let step = [(c * g[0] - b * g[1]) / det, (a * g[1] - b * g[0]) / det];
        // Backtracking line search: halve until the mean NLL stops rising.
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1e-12 {
            let cand = (slope - t * step[0], intercept - t * step[1]);
            let (cand_loss, _, _) = stats(cand.0, cand.1);
            if cand_loss <= loss {
                slope = cand.0;
                intercept = cand.1;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Numerical(
                "Platt fit: line search failed to reduce the loss".into(),
            ));
        }
    }
    let (_, g, _) = stats(slope, intercept);
    if (g[0] * g[0] + g[1] * g[1]).sqrt() < GRAD_TOL {
        Ok(PlattParams { slope, intercept })
    } else {
        Err(Error::Numerical(
            "Platt fit did not converge (possibly separable data)".into(),
        ))
    }
}

/// A fitted isotonic (monotone nondecreasing) step function. `breakpoints`
/// holds the strictly increasing block-start predictor values and `levels`
/// the nondecreasing fitted values; prediction uses the level of the last
/// breakpoint at or below the query (clamping below the first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
}

impl IsotonicMap {
    pub fn apply(&self, p: f64) -> f64 {
        // partition_point returns the count of breakpoints <= p.
        let idx = self.breakpoints.partition_point(|&bp| bp <= p);
        if idx == 0 {
            self.levels[0]
        } else {
            self.levels[idx - 1]
        }
    }
}

/// Pool-adjacent-violators fit. Items are sorted by prediction, tied
/// predictions are merged into weighted points first, and adjacent blocks
/// are pooled while their means decrease.
pub fn fit_isotonic(preds: &[f64], outcomes: &[u8]) -> Result<IsotonicMap> {
    validate_fit_input(preds, outcomes)?;
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&a, &b| preds[a].partial_cmp(&preds[b]).expect("finite predictions"));

    // Group tied predictor values into (x, total outcome, count).
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    for &i in &idx {
        match points.last_mut() {
            Some(last) if last.0 == preds[i] => {
                last.1 += outcomes[i] as f64;
                last.2 += 1.0;
            }
            _ => points.push((preds[i], outcomes[i] as f64, 1.0)),
        }
    }

    // PAV stack: (block start x, outcome sum, weight).
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    for (x, sum, w) in points {
        blocks.push((x, sum, w));
        while blocks.len() >= 2 {
            let top = blocks[blocks.len() - 1];
            let prev = blocks[blocks.len() - 2];
            if prev.1 / prev.2 > top.1 / top.2 {
                blocks.pop();
                let merged = blocks.last_mut().expect("stack nonempty");
                merged.1 += top.1;
                merged.2 += top.2;
            } else {
                break;
            }
        }
    }

    Ok(IsotonicMap {
        breakpoints: blocks.iter().map(|b| b.0).collect(),
        levels: blocks.iter().map(|b| b.1 / b.2).collect(),
    })
}

/// A fitted binning map: one recalibrated frequency per calibration bin
/// (empty bins filled with the global outcome rate at fit time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningMap {
    pub freqs: Vec<f64>,
}

impl BinningMap {
    pub fn bins(&self) -> usize {
        self.freqs.len()
    }

    pub fn apply(&self, p: f64) -> f64 {
        self.freqs[bin_index(p, self.freqs.len())]
    }
}

/// Fit a binning calibrator over `bins` equal-width bins (the same
/// partition the calibration metrics use).
pub fn fit_binning(preds: &[f64], outcomes: &[u8], bins: usize) -> Result<BinningMap> {
    validate_fit_input(preds, outcomes)?;
    if bins < 1 {
        return Err(Error::InvalidParameter("need at least 1 bin".into()));
    }
    let mut pos = vec![0.0; bins];
    let mut count = vec![0.0; bins];
    for (&p, &y) in preds.iter().zip(outcomes) {
        let b = bin_index(p, bins);
        pos[b] += y as f64;
        count[b] += 1.0;
    }
    let global = outcomes.iter().map(|&y| y as f64).sum::<f64>() / preds.len() as f64;
    let freqs = (0..bins)
        .map(|b| if count[b] > 0.0 { pos[b] / count[b] } else { global })
        .collect();
    Ok(BinningMap { freqs })
}

/// Any fitted recalibration map, tagged for JSON storage so a fitted
/// baseline can be saved and reapplied by a later run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CalibrationMap {
    Platt(PlattParams),
    Isotonic(IsotonicMap),
    Binning(BinningMap),
}

impl CalibrationMap {
    pub fn apply(&self, p: f64) -> f64 {
        match self {
            CalibrationMap::Platt(m) => m.apply(p),
            CalibrationMap::Isotonic(m) => m.apply(p),
            CalibrationMap::Binning(m) => m.apply(p),
        }
    }
}
