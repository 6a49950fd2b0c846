//! Synthetic toy-experiment generator: feature vectors mapped through a
//! fixed nonlinear rule to three ground-truth Beta regimes, with a sampled
//! latent probability, a binary outcome, and simulated human forecasts per
//! record, plus the corruption/retention transforms used for robustness
//! studies.
//!
//! The regime rule projects the 10-dimensional features through a fixed,
//! internally seeded affine map to 2 dimensions, squashes with tanh, and
//! partitions the plane by angle into three sectors. It is nonlinear,
//! learnable by a small MLP, reproducible, and empirically keeps every
//! regime above a quarter of the data.

use std::f64::consts::PI;
use std::sync::LazyLock;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beta::{standard_normal, BetaParams, Histogram};
use crate::dataset::{ForecastRecord, Source, HISTOGRAM_BINS};
use crate::error::{Error, Result};

/// Input feature dimension for synthetic records.
pub const FEATURE_DIM: usize = 10;

/// Seed of the fixed feature-to-regime projection. Chosen once so the three
/// regimes are roughly balanced; changing it changes every generated
/// dataset.
const REGIME_MAP_SEED: u64 = 12;

/// Resolve date stamped on every synthetic record (the toy data has no
/// meaningful timeline; splits on it are random, not temporal).
fn synthetic_resolve_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2025, 1, 1).unwrap()
}

/// The three ground-truth belief regimes and their Beta parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Beta(50, 10): confident the event happens.
    ConfidentYes,
    /// Beta(5, 5): genuinely uncertain.
    Uncertain,
    /// Beta(10, 50): confident the event does not happen.
    ConfidentNo,
}

/// Fixed 10 -> 2 projection used by the regime rule, entries N(0, 1/10).
static REGIME_PROJECTION: LazyLock<[[f64; FEATURE_DIM]; 2]> = LazyLock::new(|| {
    let mut rng = ChaCha8Rng::seed_from_u64(REGIME_MAP_SEED);
    let scale = 1.0 / (FEATURE_DIM as f64).sqrt();
    let mut rows = [[0.0; FEATURE_DIM]; 2];
    for row in &mut rows {
        for entry in row.iter_mut() {
            *entry = standard_normal(&mut rng) * scale;
        }
    }
    rows
});

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::ConfidentYes, Regime::Uncertain, Regime::ConfidentNo];

    /// Ground-truth Beta parameters of this regime.
    pub fn truth(self) -> BetaParams {
        let (a, b) = match self {
            Regime::ConfidentYes => (50.0, 10.0),
            Regime::Uncertain => (5.0, 5.0),
            Regime::ConfidentNo => (10.0, 50.0),
        };
        BetaParams::new(a, b).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::ConfidentYes => "confident_yes",
            Regime::Uncertain => "uncertain",
            Regime::ConfidentNo => "confident_no",
        }
    }

    /// The fixed nonlinear feature-to-regime rule: project to 2-d, tanh,
    /// then split by angle into three sectors of width 2*pi/3.
    ///
    /// Deterministic, so the regime of any synthetic record can be
    /// recomputed from its features alone.
    pub fn classify(features: &[f64]) -> Result<Regime> {
        if features.len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch {
                expected: FEATURE_DIM,
                got: features.len(),
            });
        }
        let proj = &*REGIME_PROJECTION;
        let mut z = [0.0f64; 2];
        for (zi, row) in z.iter_mut().zip(proj) {
            *zi = row.iter().zip(features).map(|(a, x)| a * x).sum();
        }
        let angle = z[1].tanh().atan2(z[0].tanh());
        let sector = (((angle + PI) / (2.0 * PI / 3.0)).floor() as isize).clamp(0, 2);
        Ok(Regime::ALL[sector as usize])
    }
}

/// One generated toy question.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecord {
    pub features: Vec<f64>,
    pub regime: Regime,
    /// The latent event probability drawn from the regime's truth.
    pub latent_p: f64,
    /// y ~ Bernoulli(latent_p).
    pub outcome: u8,
    /// Simulated human forecasts (draws from the truth Beta), possibly
    /// corrupted or thinned afterwards.
    pub human_forecasts: Vec<f64>,
    /// Normalized 100-bin histogram of `human_forecasts`.
    pub histogram: Histogram,
}

impl SyntheticRecord {
    /// Convert to the interchange record format. `index` feeds the id.
    pub fn to_record(&self, index: usize) -> ForecastRecord {
        ForecastRecord {
            id: format!("synthetic-{index:06}"),
            text: Some(format!("regime={}", self.regime.name())),
            features: self.features.clone(),
            init_forecast: None,
            outcome: Some(self.outcome),
            histogram: Some(self.histogram.clone()),
            resolve_date: synthetic_resolve_date(),
            source: Source::Synthetic,
        }
    }
}

/// Generation settings. Defaults match the full-scale toy experiment:
/// 30,000 questions with 1,000 simulated forecasters each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub forecasters: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n: 30_000,
            forecasters: 1000,
            seed: 0,
        }
    }
}

/// Generate a synthetic dataset. Bitwise deterministic per config: one
/// random stream drives, in record order, the features, the latent draw,
/// the outcome draw, and the forecaster draws.
pub fn generate(config: &GenConfig) -> Result<Vec<SyntheticRecord>> {
    if config.n < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 records, got {}",
            config.n
        )));
    }
    if config.forecasters == 0 {
        return Err(Error::InvalidParameter(
            "need at least 1 forecaster".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let features: Vec<f64> = (0..FEATURE_DIM).map(|_| standard_normal(&mut rng)).collect();
        let regime = Regime::classify(&features)?;
        let truth = regime.truth();
        let latent_p = truth.sample(&mut rng);
        let outcome = u8::from(rng.gen::<f64>() < latent_p);
        let human_forecasts: Vec<f64> =
            (0..config.forecasters).map(|_| truth.sample(&mut rng)).collect();
        let histogram = Histogram::from_samples(&human_forecasts, HISTOGRAM_BINS)?;
        records.push(SyntheticRecord {
            features,
            regime,
            latent_p,
            outcome,
            human_forecasts,
            histogram,
        });
    }
    Ok(records)
}

/// A forecast corruption, applied element-wise (with clipping) or by
/// replacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CorruptionSpec {
    /// Replace a fraction rho of the forecasts with Uniform(0,1) draws.
    Noise(f64),
    /// q' = 0.5 + gamma * (q - 0.5), pulled toward or pushed away from 1/2.
    Directional(f64),
    /// q' = q + delta.
    Additive(f64),
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CorruptionSpec::Noise(rho) => {
                if !rho.is_finite() || !(0.0..=1.0).contains(&rho) {
                    return Err(Error::InvalidParameter(format!(
                        "noise fraction must lie in [0, 1], got {rho}"
                    )));
                }
            }
            CorruptionSpec::Directional(g) => {
                if !g.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "directional shift must be finite, got {g}"
                    )));
                }
            }
            CorruptionSpec::Additive(d) => {
                if !d.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "additive shift must be finite, got {d}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn corrupt_with_rng<R: Rng>(
    forecasts: &[f64],
    spec: CorruptionSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut out = forecasts.to_vec();
    match spec {
        CorruptionSpec::Noise(rho) => {
            let n = out.len();
            let k = ((rho * n as f64).round() as usize).min(n);
            for i in rand::seq::index::sample(rng, n, k) {
                out[i] = rng.gen::<f64>();
            }
        }
        CorruptionSpec::Directional(g) => {
            // gamma = 1 must be an exact identity; the formula as written
            // would round q < 1/4, so it is special-cased.
            if g != 1.0 {
                for q in &mut out {
                    *q = (0.5 + g * (*q - 0.5)).clamp(0.0, 1.0);
                }
            }
        }
        CorruptionSpec::Additive(d) => {
            for q in &mut out {
                *q = (*q + d).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Apply one corruption to a forecast list, deterministically per seed.
pub fn corrupt(forecasts: &[f64], spec: CorruptionSpec, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corrupt_with_rng(forecasts, spec, &mut rng)
}

fn retain_with_rng<R: Rng>(forecasts: &[f64], fraction: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !fraction.is_finite() || !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "retention fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if forecasts.is_empty() {
        return Err(Error::EmptyInput("cannot subsample an empty forecast list"));
    }
    if fraction == 1.0 {
        return Ok(forecasts.to_vec());
    }
    let n = forecasts.len();
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut idx: Vec<usize> = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| forecasts[i]).collect())
}

/// Uniformly subsample a fraction of the forecasts without replacement
/// (at least one is kept), preserving original order. Deterministic per
/// seed.
pub fn retain(forecasts: &[f64], fraction: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    retain_with_rng(forecasts, fraction, &mut rng)
}

/// Apply corruptions (in order) and then retention to every record's
/// forecasts, rebuilding histograms. Features, regimes, latent draws, and
/// outcomes are untouched, so a transformed dataset stays pairable with its
/// clean original. One stream seeded by `seed` drives all records in
/// order.
pub fn apply_transforms(
    records: &mut [SyntheticRecord],
    corruptions: &[CorruptionSpec],
    retain_fraction: Option<f64>,
    seed: u64,
) -> Result<()> {
    for spec in corruptions {
        spec.validate()?;
    }
    if corruptions.is_empty() && retain_fraction.is_none() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for rec in records.iter_mut() {
        let mut f = std::mem::take(&mut rec.human_forecasts);
        for &spec in corruptions {
            f = corrupt_with_rng(&f, spec, &mut rng)?;
        }
        if let Some(fraction) = retain_fraction {
            f = retain_with_rng(&f, fraction, &mut rng)?;
        }
        rec.histogram = Histogram::from_samples(&f, HISTOGRAM_BINS)?;
        rec.human_forecasts = f;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beta::BetaMixture;

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig {
            n: 50,
            forecasters: 20,
            seed: 9,
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate(&GenConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generation_validates_config() {
        assert!(generate(&GenConfig {
            n: 2,
            forecasters: 10,
            seed: 0
        })
        .is_err());
        assert!(generate(&GenConfig {
            n: 10,
            forecasters: 0,
            seed: 0
        })
        .is_err());
    }

    #[test]
    fn classify_is_a_function_of_features() {
        let cfg = GenConfig {
            n: 200,
            forecasters: 5,
            seed: 3,
        };
        for rec in generate(&cfg).unwrap() {
            assert_eq!(Regime::classify(&rec.features).unwrap(), rec.regime);
        }
        assert!(Regime::classify(&[0.0; 3]).is_err());
    }

    /// Full-scale generation: regime balance, latent means, outcome rates,
    /// and sampling consistency of the histograms, all at n = 30,000 with
    /// the seed the shipped experiment uses.
    #[test]
    fn full_scale_generation_statistics() {
        let records = generate(&GenConfig {
            seed: 3,
            ..GenConfig::default()
        })
        .unwrap();
        assert_eq!(records.len(), 30_000);

        let mut counts = [0usize; 3];
        let mut latent_sums = [0.0f64; 3];
        let mut outcome_sums = [0.0f64; 3];
        let mut hist_sum = vec![0.0f64; HISTOGRAM_BINS];
        let mut uncertain = 0usize;
        for rec in &records {
            let r = rec.regime as usize;
            counts[r] += 1;
            latent_sums[r] += rec.latent_p;
            outcome_sums[r] += rec.outcome as f64;
            if rec.regime == Regime::Uncertain {
                uncertain += 1;
                for (acc, m) in hist_sum.iter_mut().zip(rec.histogram.masses()) {
                    *acc += m;
                }
            }
        }

        // Every regime holds between a quarter and a half of the data.
        for (regime, &c) in Regime::ALL.iter().zip(&counts) {
            assert!(
                (7500..=15000).contains(&c),
                "{}: {c} records",
                regime.name()
            );
        }

        // Latent means and outcome rates sit near the regime means.
        for (i, regime) in Regime::ALL.iter().enumerate() {
            let want = regime.truth().mean();
            let latent_mean = latent_sums[i] / counts[i] as f64;
            let outcome_rate = outcome_sums[i] / counts[i] as f64;
            assert!(
                (latent_mean - want).abs() < 0.01,
                "{}: latent mean {latent_mean} vs {want}",
                regime.name()
            );
            assert!(
                (outcome_rate - want).abs() < 0.01,
                "{}: outcome rate {outcome_rate} vs {want}",
                regime.name()
            );
        }

        // The average Uncertain histogram matches the discretized truth.
        let truth = BetaMixture::single(Regime::Uncertain.truth())
            .discretize(HISTOGRAM_BINS)
            .unwrap();
        for (avg, want) in hist_sum.iter().zip(truth.masses()) {
            assert!((avg / uncertain as f64 - want).abs() < 0.01);
        }
    }

    #[test]
    fn directional_identity_and_shift() {
        let forecasts = vec![0.03, 0.2, 0.5, 0.9, 0.97];
        // gamma = 1 is a bitwise identity.
        let same = corrupt(&forecasts, CorruptionSpec::Directional(1.0), 1).unwrap();
        assert!(forecasts
            .iter()
            .zip(&same)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        // gamma = 0.5 pulls toward 1/2.
        let half = corrupt(&[0.9], CorruptionSpec::Directional(0.5), 1).unwrap();
        assert!((half[0] - 0.7).abs() < 1e-15);
        // gamma > 0 preserves ordering.
        let pushed = corrupt(&forecasts, CorruptionSpec::Directional(1.5), 1).unwrap();
        assert!(pushed.windows(2).all(|w| w[0] <= w[1]));
        // Results stay inside [0, 1] even for extreme gamma.
        let extreme = corrupt(&forecasts, CorruptionSpec::Directional(10.0), 1).unwrap();
        assert!(extreme.iter().all(|&q| (0.0..=1.0).contains(&q)));
    }

    #[test]
    fn additive_shift_clips() {
        let shifted = corrupt(&[0.95], CorruptionSpec::Additive(0.1), 1).unwrap();
        assert_eq!(shifted[0], 1.0);
        let shifted = corrupt(&[0.2, 0.4], CorruptionSpec::Additive(-0.3), 1).unwrap();
        assert_eq!(shifted[0], 0.0);
        assert!((shifted[1] - 0.1).abs() < 1e-15);
        // Ordering is (weakly) preserved.
        let many = vec![0.1, 0.3, 0.5, 0.7, 0.9];
        let out = corrupt(&many, CorruptionSpec::Additive(0.25), 1).unwrap();
        assert!(out.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn noise_replaces_the_requested_fraction() {
        let forecasts: Vec<f64> = (0..1000).map(|i| 0.2 + (i as f64) * 1e-5).collect();
        let noisy = corrupt(&forecasts, CorruptionSpec::Noise(0.3), 5).unwrap();
        let changed = forecasts
            .iter()
            .zip(&noisy)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 300);
        assert!(noisy.iter().all(|&q| (0.0..=1.0).contains(&q)));
        // Deterministic per seed.
        let again = corrupt(&forecasts, CorruptionSpec::Noise(0.3), 5).unwrap();
        assert_eq!(noisy, again);
        // rho = 0 touches nothing.
        let untouched = corrupt(&forecasts, CorruptionSpec::Noise(0.0), 5).unwrap();
        assert_eq!(untouched, forecasts);
        assert!(corrupt(&forecasts, CorruptionSpec::Noise(1.5), 5).is_err());
    }

    #[test]
    fn retention_subsamples_in_order() {
        let forecasts: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        // Full retention is an identity.
        let all = retain(&forecasts, 1.0, 2).unwrap();
        assert_eq!(all, forecasts);
        // 10% of 1000 is exactly 100, kept in original order.
        let kept = retain(&forecasts, 0.1, 2).unwrap();
        assert_eq!(kept.len(), 100);
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
        // At least one survives any positive fraction.
        let one = retain(&[0.4, 0.6, 0.8], 0.01, 2).unwrap();
        assert_eq!(one.len(), 1);
        // Deterministic per seed.
        assert_eq!(kept, retain(&forecasts, 0.1, 2).unwrap());
        assert_ne!(kept, retain(&forecasts, 0.1, 3).unwrap());
        assert!(retain(&forecasts, 0.0, 2).is_err());
        assert!(retain(&forecasts, 1.2, 2).is_err());
    }

    #[test]
    fn transforms_leave_features_and_outcomes_alone() {
        let cfg = GenConfig {
            n: 30,
            forecasters: 50,
            seed: 4,
        };
        let clean = generate(&cfg).unwrap();
        let mut transformed = clean.clone();
        apply_transforms(
            &mut transformed,
            &[
                CorruptionSpec::Noise(0.2),
                CorruptionSpec::Directional(0.8),
            ],
            Some(0.5),
            77,
        )
        .unwrap();
        for (a, b) in clean.iter().zip(&transformed) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.outcome, b.outcome);
            assert_eq!(a.latent_p, b.latent_p);
            assert_eq!(b.human_forecasts.len(), 25);
            // Histogram is rebuilt from the transformed forecasts.
            let want = Histogram::from_samples(&b.human_forecasts, HISTOGRAM_BINS).unwrap();
            assert_eq!(b.histogram, want);
        }
        // No transforms requested: bitwise no-op.
        let mut untouched = clean.clone();
        apply_transforms(&mut untouched, &[], None, 77).unwrap();
        assert_eq!(clean, untouched);
    }

    #[test]
    fn record_conversion_produces_valid_records() {
        let cfg = GenConfig {
            n: 8,
            forecasters: 30,
            seed: 6,
        };
        let records = generate(&cfg).unwrap();
        let converted = records[7].to_record(7);
        assert_eq!(converted.id, "synthetic-000007");
        assert_eq!(converted.source, Source::Synthetic);
        assert_eq!(converted.outcome, Some(records[7].outcome));
        assert_eq!(
            converted.text.as_deref(),
            Some(format!("regime={}", records[7].regime.name()).as_str())
        );
        converted.validate().unwrap();
    }
}
