//! Dataset interchange: JSONL forecast records, validation, price-window
//! proxy histograms, and temporal/random splits.
//!
//! The on-disk format is one JSON object per line with the field names of
//! [`ForecastRecord`]. Features arrive precomputed — this crate does not
//! embed question text — so the same pipeline serves synthetic and
//! platform-exported data.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beta::Histogram;
use crate::error::{Error, Result};

/// Bin count used for crowd histograms throughout the pipeline.
pub const HISTOGRAM_BINS: usize = 100;

/// Where a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Metaculus,
    Polymarket,
    Kalshi,
    Synthetic,
}

/// One forecasting question: input features, optional initial point
/// forecast, optional crowd histogram, and (if resolved) the binary
/// outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub id: String,
    /// Free-form question text; informational only.
    pub text: Option<String>,
    pub features: Vec<f64>,
    /// Initial point forecast in [0, 1], appended to the model input when
    /// present.
    pub init_forecast: Option<f64>,
    /// 0/1 for resolved questions, absent for unresolved ones.
    pub outcome: Option<u8>,
    /// Crowd histogram over [`HISTOGRAM_BINS`] bins.
    pub histogram: Option<Histogram>,
    pub resolve_date: NaiveDate,
    pub source: Source,
}

impl ForecastRecord {
    /// Field-level invariants beyond what serde enforces structurally.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidParameter("record id must be nonempty".into()));
        }
        for &f in &self.features {
            if !f.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "record {}: features must be finite, got {f}",
                    self.id
                )));
            }
        }
        if let Some(p) = self.init_forecast {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "record {}: init_forecast must lie in [0, 1], got {p}",
                    self.id
                )));
            }
        }
        if let Some(y) = self.outcome {
            if y > 1 {
                return Err(Error::InvalidParameter(format!(
                    "record {}: outcome must be 0 or 1, got {y}",
                    self.id
                )));
            }
        }
        if let Some(h) = &self.histogram {
            if h.bins() != HISTOGRAM_BINS {
                return Err(Error::BinMismatch {
                    expected: HISTOGRAM_BINS,
                    got: h.bins(),
                });
            }
        }
        Ok(())
    }
}

/// Load a JSONL dataset, validating every record. Malformed or invalid
/// lines are reported with their 1-based line number. Blank lines are
/// skipped.
pub fn load(path: &Path) -> Result<Vec<ForecastRecord>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ForecastRecord =
            serde_json::from_str(&line).map_err(|e| Error::InvalidRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
        record.validate().map_err(|e| Error::InvalidRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Write records as JSONL, one object per line. `load(save(x)) == x` for
/// valid records.
pub fn save(records: &[ForecastRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// A market price history: (timestamp, price) pairs with nondecreasing
/// timestamps, plus optional explicit market open/close times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    points: Vec<(NaiveDateTime, f64)>,
    /// Explicit market open; when absent, [`PriceSeries::open_date`]
    /// supplies a heuristic.
    pub open: Option<NaiveDateTime>,
    /// Explicit market close; when absent, the last observation stands in.
    pub close: Option<NaiveDateTime>,
}

impl PriceSeries {
    pub fn new(points: Vec<(NaiveDateTime, f64)>) -> Result<Self> {
        for w in points.windows(2) {
            if w[1].0 < w[0].0 {
                return Err(Error::InvalidParameter(
                    "price series timestamps must be nondecreasing".into(),
                ));
            }
        }
        for &(_, p) in &points {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "prices must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(Self {
            points,
            open: None,
            close: None,
        })
    }

    pub fn points(&self) -> &[(NaiveDateTime, f64)] {
        &self.points
    }

    /// Heuristic market-open time for series without an explicit one: the
    /// earlier of (last observation - 30 days) and (first observation +
    /// 7 days). For short series this lands before the first observation,
    /// which is accepted as-is.
    pub fn open_date(&self) -> Result<NaiveDateTime> {
        let first = self
            .points
            .first()
            .ok_or(Error::EmptyInput("price series has no observations"))?
            .0;
        let last = self.points.last().unwrap().0;
        Ok((last - Duration::days(30)).min(first + Duration::days(7)))
    }

    /// Proxy crowd histogram: bin the prices observed inside the market
    /// window [open, close] into `bins` uniform bins and normalize. A price
    /// of exactly 1 lands in the last bin.
    pub fn proxy_histogram(&self, bins: usize) -> Result<Histogram> {
        let open = match self.open {
            Some(t) => t,
            None => self.open_date()?,
        };
        let close = match self.close {
            Some(t) => t,
            None => self.points.last().unwrap().0,
        };
        let mut counts = vec![0.0; bins];
        let mut seen = 0usize;
        for &(t, p) in &self.points {
            if t < open || t > close {
                continue;
            }
            let idx = ((p * bins as f64) as usize).min(bins - 1);
            counts[idx] += 1.0;
            seen += 1;
        }
        if seen == 0 {
            return Err(Error::EmptyInput(
                "no prices inside the market open/close window",
            ));
        }
        Histogram::new(counts)
    }
}

/// First day NOT in the training range.
fn train_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2025, 4, 1).unwrap()
}

/// First day NOT in the validation range.
fn val_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2025, 8, 1).unwrap()
}

/// First day NOT in the test range.
fn test_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2026, 2, 1).unwrap()
}

/// Result of [`temporal_split`]: a partition of the input records.
#[derive(Debug, Default)]
pub struct TemporalSplit {
    pub train: Vec<ForecastRecord>,
    pub val: Vec<ForecastRecord>,
    pub test: Vec<ForecastRecord>,
    /// Records resolving outside every range, kept for diagnostics.
    pub out_of_range: Vec<ForecastRecord>,
}

/// Partition records by resolve date: train before 2025-04-01, validation
/// in [2025-04-01, 2025-08-01), test in [2025-08-01, 2026-02-01), anything
/// else flagged out-of-range.
pub fn temporal_split(records: Vec<ForecastRecord>) -> TemporalSplit {
    let mut split = TemporalSplit::default();
    for r in records {
        let d = r.resolve_date;
        if d < train_end() {
            split.train.push(r);
        } else if d < val_end() {
            split.val.push(r);
        } else if d < test_end() {
            split.test.push(r);
        } else {
            split.out_of_range.push(r);
        }
    }
    split
}

/// Seeded random split into (rest, held_out) where `held_out` gets
/// `round(fraction * n)` items. Original relative order is preserved
/// within both halves.
pub fn random_split<T>(items: Vec<T>, fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !fraction.is_finite() || !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!(
            "split fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let n = items.len();
    let k = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut held = vec![false; n];
    for &i in order.iter().take(k) {
        held[i] = true;
    }
    let mut rest = Vec::with_capacity(n - k);
    let mut out = Vec::with_capacity(k);
    for (i, item) in items.into_iter().enumerate() {
        if held[i] {
            out.push(item);
        } else {
            rest.push(item);
        }
    }
    Ok((rest, out))
}
