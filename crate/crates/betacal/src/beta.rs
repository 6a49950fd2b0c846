//! Beta distributions, finite mixtures of Betas, and discrete histograms on
//! the unit interval.
//!
//! Beta sampling goes through two Gamma draws (X / (X + Y)) using the
//! Marsaglia-Tsang squeeze method, with normals produced by Box-Muller from
//! the caller's uniform generator, so every draw is reproducible from an
//! explicit seeded RNG.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::special::{betainc, ln_beta};

/// Parameters of a single Beta distribution. Both shape parameters must be
/// finite and strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() || alpha <= 0.0 || beta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "Beta shape parameters must be finite and positive, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// The Beta distribution with the given mean and variance (moment
    /// matching): concentration `s = m(1-m)/v - 1`, then `alpha = m s`,
    /// `beta = (1-m) s`. Requires `m` in (0, 1) and `0 < v < m(1-m)` — every
    /// non-degenerate distribution on [0, 1] satisfies the latter.
    pub fn from_moments(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !(0.0 < mean && mean < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "moment matching requires a mean in (0, 1), got {mean}"
            )));
        }
        let bound = mean * (1.0 - mean);
        if !variance.is_finite() || !(0.0 < variance && variance < bound) {
            return Err(Error::InvalidParameter(format!(
                "moment matching requires variance in (0, {bound}), got {variance}"
            )));
        }
        let s = bound / variance - 1.0;
        Self::new(mean * s, (1.0 - mean) * s)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Mean `alpha / (alpha + beta)`.
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    /// Variance `alpha * beta / ((alpha + beta)^2 (alpha + beta + 1))`.
    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    /// Concentration `alpha + beta`.
    pub fn concentration(&self) -> f64 {
        self.alpha + self.beta
    }

    /// Log density at `x`. Defined on the open interval `(0, 1)`; outside it
    /// this returns negative infinity (zero mass convention).
    pub fn log_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0 && x < 1.0) {
            return f64::NEG_INFINITY;
        }
        (self.alpha - 1.0) * x.ln() + (self.beta - 1.0) * (1.0 - x).ln()
            - ln_beta(self.alpha, self.beta)
    }

    /// Density at `x`.
    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Distribution function at `x` (regularized incomplete beta).
    pub fn cdf(&self, x: f64) -> Result<f64> {
        betainc(self.alpha, self.beta, x)
    }

    /// Probability of a Bernoulli outcome `y` after integrating out the
    /// success probability: `alpha / (alpha + beta)` for `y = 1` and
    /// `beta / (alpha + beta)` for `y = 0`. `y` must be 0 or 1.
    pub fn marginal_likelihood(&self, y: u8) -> f64 {
        debug_assert!(y <= 1, "outcome must be 0 or 1");
        let s = self.alpha + self.beta;
        if y == 1 {
            self.alpha / s
        } else {
            self.beta / s
        }
    }

    /// Draw one value as `X / (X + Y)` with `X ~ Gamma(alpha)` and
    /// `Y ~ Gamma(beta)`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let x = sample_gamma(self.alpha, rng);
        let y = sample_gamma(self.beta, rng);
        let s = x + y;
        if s > 0.0 {
            x / s
        } else {
            // Both draws underflowed to zero; vanishing probability for any
            // usable shape parameters.
            0.5
        }
    }
}

/// One standard normal draw via Box-Muller. `u1` is mapped into `(0, 1]` so
/// the logarithm is always finite.
pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gamma(shape, 1) sampler: Marsaglia-Tsang for shape >= 1, with the
/// `U^(1/shape)` boost for shape < 1.
fn sample_gamma<R: Rng>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.gen();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.gen();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// A finite mixture of Beta distributions with nonnegative weights that sum
/// to one. The constructor renormalizes the weights, so callers may pass any
/// nonnegative vector with positive total mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaMixture {
    components: Vec<BetaParams>,
    weights: Vec<f64>,
}

impl BetaMixture {
    pub fn new(components: Vec<BetaParams>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("mixture needs at least one component"));
        }
        if components.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: components.len(),
                right: weights.len(),
            });
        }
        let mut total = 0.0;
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "mixture weights must be finite and nonnegative, got {w}"
                )));
            }
            total += w;
        }
        if !(total > 0.0) {
            return Err(Error::InvalidParameter(
                "mixture weights must have positive total mass".into(),
            ));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { components, weights })
    }

    /// Single-component mixture with weight one.
    pub fn single(params: BetaParams) -> Self {
        Self {
            components: vec![params],
            weights: vec![1.0],
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[BetaParams] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mixture mean: the weighted average of component means.
    pub fn mean(&self) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.mean())
            .sum()
    }

    /// Mixture variance by the law of total variance:
    /// `sum_k w_k (var_k + mean_k^2) - mean^2`.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let second: f64 = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| {
                let m = c.mean();
                w * (c.variance() + m * m)
            })
            .sum();
        second - mean * mean
    }

    /// Density at `x` (weighted sum of component densities).
    pub fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.pdf(x))
            .sum()
    }

    /// Probability of outcome `y` with the success probability integrated
    /// out: the weighted average of component marginal likelihoods.
    pub fn marginal_likelihood(&self, y: u8) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.marginal_likelihood(y))
            .sum()
    }

    /// Draw one value: pick a component by weight, then sample it.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        for (c, w) in self.components.iter().zip(&self.weights) {
            cum += w;
            if u < cum {
                return c.sample(rng);
            }
        }
        // Weight rounding can leave cum fractionally below 1; fall through
        // to the last component.
        self.components[self.components.len() - 1].sample(rng)
    }

    /// Project the mixture onto `bins` equal-width bins by evaluating the
    /// density at each bin midpoint and renormalizing.
    pub fn discretize(&self, bins: usize) -> Result<Histogram> {
        let grid = bin_grid(bins)?;
        let parts = discretize_parts(self, &grid);
        if !(parts.f_total > 0.0) || !parts.f_total.is_finite() {
            return Err(Error::Numerical(
                "mixture density vanished or overflowed at every bin midpoint".into(),
            ));
        }
        // Take the normalized masses verbatim (not through Histogram::new,
        // which would rescale a second time and perturb the low bits): the
        // histogram loss recomputes exactly these masses, and the KL of a
        // mixture's own discretization against itself must be exactly zero.
        Ok(Histogram {
            masses: parts.masses,
        })
    }
}

/// Midpoint of bin `bin` out of `bins` equal-width bins on `[0, 1]`.
pub fn bin_midpoint(bins: usize, bin: usize) -> f64 {
    (bin as f64 + 0.5) / bins as f64
}

/// Precomputed bin midpoints and their logs, shared by discretization and
/// the histogram-loss gradient so both see bit-identical values. Cached per
/// bin count because these sit on the training hot path.
pub(crate) struct BinGrid {
    pub bins: usize,
    pub ln_mid: Vec<f64>,
    pub ln1m_mid: Vec<f64>,
}

pub(crate) fn bin_grid(bins: usize) -> Result<Arc<BinGrid>> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 bins, got {bins}"
        )));
    }
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<BinGrid>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("bin grid cache poisoned");
    let grid = map.entry(bins).or_insert_with(|| {
        let mid: Vec<f64> = (0..bins).map(|b| bin_midpoint(bins, b)).collect();
        let ln_mid = mid.iter().map(|x| x.ln()).collect();
        let ln1m_mid = mid.iter().map(|x| (1.0 - x).ln()).collect();
        Arc::new(BinGrid {
            bins,
            ln_mid,
            ln1m_mid,
        })
    });
    Ok(Arc::clone(grid))
}

/// Intermediate products of midpoint discretization, kept so the histogram
/// loss and its gradient reuse one density evaluation per component and bin.
pub(crate) struct DiscretizeParts {
    /// Component densities at bin midpoints, row-major `[k * bins + b]`.
    pub comp_pdf: Vec<f64>,
    /// Unnormalized mixture density at each midpoint.
    pub f: Vec<f64>,
    /// Sum of `f` over bins.
    pub f_total: f64,
    /// Normalized bin masses `f[b] / f_total`.
    pub masses: Vec<f64>,
}

pub(crate) fn discretize_parts(m: &BetaMixture, grid: &BinGrid) -> DiscretizeParts {
    let bins = grid.bins;
    let k = m.k();
    let mut comp_pdf = vec![0.0; k * bins];
    let mut f = vec![0.0; bins];
    for (ki, (c, w)) in m.components.iter().zip(&m.weights).enumerate() {
        let lnb = ln_beta(c.alpha, c.beta);
        let row = &mut comp_pdf[ki * bins..(ki + 1) * bins];
        for b in 0..bins {
            let lp = (c.alpha - 1.0) * grid.ln_mid[b] + (c.beta - 1.0) * grid.ln1m_mid[b] - lnb;
            let pdf = lp.exp();
            row[b] = pdf;
            f[b] += w * pdf;
        }
    }
    let f_total: f64 = f.iter().sum();
    let masses = f.iter().map(|&v| v / f_total).collect();
    DiscretizeParts {
        comp_pdf,
        f,
        f_total,
        masses,
    }
}

/// A normalized histogram over equal-width bins on `[0, 1]`.
///
/// Serialization writes the bare mass vector. Deserialization (used for data
/// files) is strict: masses must be finite and nonnegative and must already
/// sum to 1 within 1e-6, after which they are renormalized. Masses that sum
/// to 1 within machine precision are taken verbatim so a save/load round
/// trip is bit-exact. The `new` constructor is the lenient programmatic
/// entry point that accepts any nonnegative vector with positive total.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<f64>")]
#[serde(into = "Vec<f64>")]
pub struct Histogram {
    masses: Vec<f64>,
}

impl Histogram {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "histogram needs at least 2 bins, got {}",
                masses.len()
            )));
        }
        let mut total = 0.0;
        for &v in &masses {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "histogram masses must be finite and nonnegative, got {v}"
                )));
            }
            total += v;
        }
        if !(total > 0.0) {
            return Err(Error::InvalidParameter(
                "histogram must have positive total mass".into(),
            ));
        }
        let masses = masses.into_iter().map(|v| v / total).collect();
        Ok(Self { masses })
    }

    /// Bin `values` (each in `[0, 1]`) into `bins` equal-width bins and
    /// normalize the counts. A value of exactly 1 lands in the last bin.
    pub fn from_samples(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("cannot build a histogram from no samples"));
        }
        if bins < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 bins, got {bins}"
            )));
        }
        let mut counts = vec![0.0; bins];
        for &v in values {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "histogram samples must lie in [0, 1], got {v}"
                )));
            }
            let idx = ((v * bins as f64) as usize).min(bins - 1);
            counts[idx] += 1.0;
        }
        let n = values.len() as f64;
        Ok(Self {
            masses: counts.into_iter().map(|c| c / n).collect(),
        })
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Mean of the histogram treating each bin's mass as sitting at its
    /// midpoint.
    pub fn mean(&self) -> f64 {
        let bins = self.bins();
        self.masses
            .iter()
            .enumerate()
            .map(|(b, m)| m * bin_midpoint(bins, b))
            .sum()
    }

    /// Variance under the same midpoint convention as [`Histogram::mean`].
    pub fn variance(&self) -> f64 {
        let bins = self.bins();
        let mean = self.mean();
        self.masses
            .iter()
            .enumerate()
            .map(|(b, m)| {
                let d = bin_midpoint(bins, b) - mean;
                m * d * d
            })
            .sum()
    }
}

impl TryFrom<Vec<f64>> for Histogram {
    type Error = Error;

    fn try_from(masses: Vec<f64>) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "histogram needs at least 2 bins, got {}",
                masses.len()
            )));
        }
        let mut total = 0.0;
        for &v in &masses {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "histogram masses must be finite and nonnegative, got {v}"
                )));
            }
            total += v;
        }
        // The tolerance carries a tiny grace term: a file may hold a decimal
        // like 0.999999 whose nearest double sits a hair MORE than 1e-6 from
        // 1, and such values must still be accepted.
        if (total - 1.0).abs() > 1e-6 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "histogram masses must sum to 1 within 1e-6, got {total}"
            )));
        }
        // Already normalized to rounding error: keep the bits as written so
        // save followed by load is an exact identity. Anything merely within
        // the 1e-6 tolerance gets renormalized.
        if (total - 1.0).abs() <= 1e-12 {
            Ok(Self { masses })
        } else {
            Self::new(masses)
        }
    }
}

impl From<Histogram> for Vec<f64> {
    fn from(h: Histogram) -> Vec<f64> {
        h.masses
    }
}
