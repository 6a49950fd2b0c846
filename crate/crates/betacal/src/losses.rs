//! Training losses for Beta-mixture forecasts and their analytic gradients
//! with respect to the mixture parameters.
//!
//! Two per-example terms are supported:
//!
//! * a binary cross-entropy term on the mixture mean against the observed
//!   0/1 outcome, and
//! * a KL divergence `KL(h || discretize(mixture))` against a human
//!   forecast histogram `h`.
//!
//! The total is a weighted sum of the two. Gradients are exact derivatives
//! of the same floored/clipped expressions the loss evaluates, so finite
//! differences of the loss reproduce them wherever the clips are inactive.

use crate::beta::{bin_grid, discretize_parts, BetaMixture, Histogram};
use crate::error::{Error, Result};
use crate::special::digamma;

/// Probability clip for the binary cross-entropy term.
pub const PROB_EPS: f64 = 1e-12;
/// Floor applied to discretized bin masses inside the KL term.
pub const MASS_FLOOR: f64 = 1e-12;

/// Nonnegative weights for the two loss terms. At least one must be
/// positive.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub binary: f64,
    pub human: f64,
}

impl LossWeights {
    pub fn new(binary: f64, human: f64) -> Result<Self> {
        if !binary.is_finite() || !human.is_finite() || binary < 0.0 || human < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "loss weights must be finite and nonnegative, got ({binary}, {human})"
            )));
        }
        if binary == 0.0 && human == 0.0 {
            return Err(Error::InvalidParameter(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(Self { binary, human })
    }

    /// Binary term only: weights (1, 0).
    pub fn binary_only() -> Self {
        Self {
            binary: 1.0,
            human: 0.0,
        }
    }

    /// Histogram term only: weights (0, 1).
    pub fn human_only() -> Self {
        Self {
            binary: 0.0,
            human: 1.0,
        }
    }

    /// Equal weights (1, 1) on both terms.
    pub fn both() -> Self {
        Self {
            binary: 1.0,
            human: 1.0,
        }
    }
}

/// Per-example loss values. `total` is always exactly
/// `weights.binary * binary + weights.human * human`; the `human` entry is 0
/// when the human weight is 0 and no histogram term was evaluated.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub binary: f64,
    pub human: f64,
    pub total: f64,
}

/// Gradient of the weighted total loss with respect to each component's
/// alpha, beta, and (unnormalized) weight.
#[derive(Debug, Clone)]
pub struct MixtureGrad {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub weight: Vec<f64>,
}

impl MixtureGrad {
    fn zeros(k: usize) -> Self {
        Self {
            alpha: vec![0.0; k],
            beta: vec![0.0; k],
            weight: vec![0.0; k],
        }
    }
}

fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy of the outcome `y` (0 or 1) against the mixture
/// mean, with the mean clipped away from 0 and 1.
pub fn binary_loss(m: &BetaMixture, y: u8) -> f64 {
    debug_assert!(y <= 1, "outcome must be 0 or 1");
    let p = clip_prob(m.mean());
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// KL divergence `KL(h || discretize(m, h.bins()))`. Bins where `h` carries
/// no mass contribute nothing; discretized masses are floored at
/// [`MASS_FLOOR`] so the result stays finite.
pub fn human_loss(m: &BetaMixture, h: &Histogram) -> Result<f64> {
    let grid = bin_grid(h.bins())?;
    let parts = discretize_parts(m, &grid);
    if !(parts.f_total > 0.0) || !parts.f_total.is_finite() {
        return Err(Error::Numerical(
            "mixture density vanished or overflowed at every bin midpoint".into(),
        ));
    }
    let mut kl = 0.0;
    for (&hb, &mb) in h.masses().iter().zip(&parts.masses) {
        if hb > 0.0 {
            kl += hb * (hb.ln() - mb.max(MASS_FLOOR).ln());
        }
    }
    Ok(kl)
}

/// Weighted sum of the two loss terms.
///
/// A histogram is required whenever `weights.human > 0`; when
/// `weights.human == 0` the histogram term is skipped entirely (the
/// breakdown reports 0 for it) regardless of whether `h` is present.
pub fn total_loss(
    m: &BetaMixture,
    y: u8,
    h: Option<&Histogram>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let binary = binary_loss(m, y);
    let human = if weights.human > 0.0 {
        match h {
            Some(h) => human_loss(m, h)?,
            None => return Err(Error::HistogramRequired),
        }
    } else {
        0.0
    };
    Ok(LossBreakdown {
        binary,
        human,
        total: weights.binary * binary + weights.human * human,
    })
}

/// Evaluate the weighted loss and its gradient with respect to the mixture
/// parameters in one pass.
///
/// The weight gradient treats the mixture weights as free (unconstrained)
/// variables; simplex handling is the caller's concern. Where the
/// probability clip or the mass floor is active, the corresponding gradient
/// contribution is zero, matching the flat regions of the evaluated loss.
pub fn loss_gradients(
    m: &BetaMixture,
    y: u8,
    h: Option<&Histogram>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, MixtureGrad)> {
    debug_assert!(y <= 1, "outcome must be 0 or 1");
    let k = m.k();
    let mut grad = MixtureGrad::zeros(k);
    let mut breakdown = LossBreakdown::default();

    // Binary cross-entropy on the mixture mean.
    let comps = m.components();
    let ws = m.weights();
    let raw_mean: f64 = comps.iter().zip(ws).map(|(c, w)| w * c.mean()).sum();
    let p = clip_prob(raw_mean);
    breakdown.binary = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    if weights.binary > 0.0 {
        // d loss / d p is zero when the clip is active (flat region).
        let dldp = if raw_mean > PROB_EPS && raw_mean < 1.0 - PROB_EPS {
            (p - y as f64) / (p * (1.0 - p))
        } else {
            0.0
        };
        let scale = weights.binary * dldp;
        for ki in 0..k {
            let a = comps[ki].alpha();
            let b = comps[ki].beta();
            let s = a + b;
            grad.alpha[ki] += scale * ws[ki] * b / (s * s);
            grad.beta[ki] += scale * (-(ws[ki] * a) / (s * s));
            grad.weight[ki] += scale * comps[ki].mean();
        }
    }

    // Histogram KL term.
    if weights.human > 0.0 {
        let h = h.ok_or(Error::HistogramRequired)?;
        let bins = h.bins();
        let grid = bin_grid(bins)?;
        let parts = discretize_parts(m, &grid);
        if !(parts.f_total > 0.0) || !parts.f_total.is_finite() {
            return Err(Error::Numerical(
                "mixture density vanished or overflowed at every bin midpoint".into(),
            ));
        }

        // Loss value and the per-bin weights that feed the gradient. Bins
        // where the floor is active contribute a constant to the loss and
        // therefore nothing to the gradient.
        let hm = h.masses();
        let mut kl = 0.0;
        let mut active_mass = 0.0; // sum of h over gradient-active bins
        for b in 0..bins {
            let hb = hm[b];
            if hb > 0.0 {
                let mb = parts.masses[b];
                kl += hb * (hb.ln() - mb.max(MASS_FLOOR).ln());
                if mb >= MASS_FLOOR {
                    active_mass += hb;
                }
            }
        }
        breakdown.human = kl;

        // For active bins: d KL / d theta
        //   = active_mass * (d ln f_total / d theta)
        //     - sum_b h_b * (d f_b / d theta) / f_b
        // with d f_b / d alpha_k = w_k * pdf_kb * (ln x_b - psi(a_k) + psi(a_k + b_k)),
        // the beta derivative using ln(1 - x_b) - psi(b_k) + psi(a_k + b_k),
        // and d f_b / d w_k = pdf_kb.
        for ki in 0..k {
            let a = comps[ki].alpha();
            let bparam = comps[ki].beta();
            let psi_a = digamma(a);
            let psi_b = digamma(bparam);
            let psi_ab = digamma(a + bparam);
            let row = &parts.comp_pdf[ki * bins..(ki + 1) * bins];
            let mut total_da = 0.0; // sum_b pdf_kb * d_kb
            let mut total_db = 0.0;
            let mut total_dw = 0.0; // sum_b pdf_kb
            let mut sel_da = 0.0; // sum over active bins of h_b pdf_kb d_kb / f_b
            let mut sel_db = 0.0;
            let mut sel_dw = 0.0;
            for b in 0..bins {
                let pdf = row[b];
                let d = grid.ln_mid[b] - psi_a + psi_ab;
                let e = grid.ln1m_mid[b] - psi_b + psi_ab;
                total_da += pdf * d;
                total_db += pdf * e;
                total_dw += pdf;
                let hb = hm[b];
                if hb > 0.0 && parts.masses[b] >= MASS_FLOOR {
                    let coeff = hb * pdf / parts.f[b];
                    sel_da += coeff * d;
                    sel_db += coeff * e;
                    sel_dw += hb * pdf / parts.f[b];
                }
            }
            let w = ws[ki];
            let lh = weights.human;
            grad.alpha[ki] += lh * w * (active_mass * total_da / parts.f_total - sel_da);
            grad.beta[ki] += lh * w * (active_mass * total_db / parts.f_total - sel_db);
            grad.weight[ki] += lh * (active_mass * total_dw / parts.f_total - sel_dw);
        }
    }

    breakdown.total = weights.binary * breakdown.binary + weights.human * breakdown.human;
    Ok((breakdown, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beta::BetaParams;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(got: f64, want: f64, tol: f64) {
        assert!(
            (got - want).abs() <= tol,
            "got {got}, want {want} (tol {tol})"
        );
    }

    fn symmetric() -> BetaMixture {
        BetaMixture::single(BetaParams::new(3.0, 3.0).unwrap())
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0).is_err());
        assert!(LossWeights::new(1.0, 0.0).is_ok());
        assert!(LossWeights::new(0.0, 2.5).is_ok());
    }

    #[test]
    fn binary_loss_known_values() {
        // Symmetric mixture has mean 1/2: loss is ln 2 for either outcome.
        assert_close(binary_loss(&symmetric(), 1), std::f64::consts::LN_2, 1e-12);
        assert_close(binary_loss(&symmetric(), 0), std::f64::consts::LN_2, 1e-12);
        // Mean 0.6: -ln 0.6 when y = 1, -ln 0.4 when y = 0.
        let m = BetaMixture::single(BetaParams::new(6.0, 4.0).unwrap());
        assert_close(binary_loss(&m, 1), -(0.6f64).ln(), 1e-12);
        assert_close(binary_loss(&m, 0), -(0.4f64).ln(), 1e-12);
    }

    #[test]
    fn binary_loss_is_proper() {
        // With outcomes drawn at rate q, the expected loss over a grid of
        // predicted means is minimized at the grid point nearest q.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &q in &[0.2, 0.47, 0.8] {
            let n = 100_000;
            let rate =
                (0..n).filter(|_| rng.gen::<f64>() < q).count() as f64 / n as f64;
            let mut best = (f64::INFINITY, 0.0);
            for i in 1..100 {
                let p = i as f64 / 100.0;
                // Mean BCE over the sample depends only on the empirical rate.
                let loss = -rate * p.ln() - (1.0 - rate) * (1.0 - p).ln();
                if loss < best.0 {
                    best = (loss, p);
                }
            }
            assert!(
                (best.1 - q).abs() <= 0.011,
                "minimizer {} far from rate {q}",
                best.1
            );
        }
    }

    #[test]
    fn human_loss_zero_on_own_discretization() {
        let m = BetaMixture::new(
            vec![
                BetaParams::new(4.0, 2.0).unwrap(),
                BetaParams::new(2.0, 6.0).unwrap(),
            ],
            vec![0.6, 0.4],
        )
        .unwrap();
        let h = m.discretize(100).unwrap();
        // The histogram bins equal the discretized masses bitwise, so every
        // log ratio is exactly ln(1) = 0.
        assert_eq!(human_loss(&m, &h).unwrap(), 0.0);
    }

    #[test]
    fn human_loss_near_uniform() {
        let h = Histogram::new(vec![1.0; 100]).unwrap();
        let m = BetaMixture::single(BetaParams::new(1.0001, 1.0001).unwrap());
        assert!(human_loss(&m, &h).unwrap() < 1e-4);
    }

    #[test]
    fn human_loss_matches_plain_kl() {
        // Straightforward reimplementation of the KL sum over the same
        // discretized masses.
        let m = BetaMixture::single(BetaParams::new(5.0, 5.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<f64> = (0..1000).map(|_| m.sample(&mut rng)).collect();
        let h = Histogram::from_samples(&samples, 100).unwrap();
        let disc = m.discretize(100).unwrap();
        let mut want = 0.0;
        for (&hb, &mb) in h.masses().iter().zip(disc.masses()) {
            if hb > 0.0 {
                want += hb * (hb / mb.max(MASS_FLOOR)).ln();
            }
        }
        assert_close(human_loss(&m, &h).unwrap(), want, 1e-9);
        assert!(want.is_finite() && want > 0.0);
    }

    #[test]
    fn human_loss_handles_empty_model_bins() {
        // A sharply peaked mixture leaves far tails below the mass floor;
        // histogram mass out there must produce a large but finite loss.
        let m = BetaMixture::single(BetaParams::new(300.0, 100.0).unwrap());
        let mut masses = vec![0.0; 100];
        masses[1] = 1.0; // all human mass near zero
        let h = Histogram::new(masses).unwrap();
        let kl = human_loss(&m, &h).unwrap();
        assert!(kl.is_finite());
        assert!(kl > 10.0);
    }

    #[test]
    fn total_loss_weighting() {
        let m = symmetric();
        let h = m.discretize(100).unwrap();
        let b = binary_loss(&m, 1);
        let hl = human_loss(&m, &h).unwrap();

        let only_binary = total_loss(&m, 1, Some(&h), &LossWeights::binary_only()).unwrap();
        assert_eq!(only_binary.total, b);
        assert_eq!(only_binary.human, 0.0);

        let only_human = total_loss(&m, 1, Some(&h), &LossWeights::human_only()).unwrap();
        assert_eq!(only_human.total, hl);

        let both = total_loss(&m, 1, Some(&h), &LossWeights::both()).unwrap();
        assert_close(both.total, b + hl, 1e-15);

        // Scaling a weight scales the term linearly.
        let w = LossWeights::new(2.0, 3.0).unwrap();
        let scaled = total_loss(&m, 1, Some(&h), &w).unwrap();
        assert_close(scaled.total, 2.0 * b + 3.0 * hl, 1e-12);

        // Histogram missing while its weight is positive is an error.
        assert!(total_loss(&m, 1, None, &LossWeights::both()).is_err());
        assert!(total_loss(&m, 1, None, &LossWeights::binary_only()).is_ok());
    }

    /// Central finite difference of the total loss along a parameter
    /// direction, built from perturbed mixtures.
    fn fd_loss(
        components: &[(f64, f64)],
        weights_vec: &[f64],
        y: u8,
        h: &Histogram,
        lw: &LossWeights,
        build: impl Fn(f64) -> (Vec<(f64, f64)>, Vec<f64>),
    ) -> f64 {
        let _ = (components, weights_vec);
        let eps = 1e-5;
        let eval = |t: f64| -> f64 {
            let (cs, ws) = build(t);
            let comps: Vec<BetaParams> = cs
                .iter()
                .map(|&(a, b)| BetaParams::new(a, b).unwrap())
                .collect();
            let m = BetaMixture::new(comps, ws).unwrap();
            total_loss(&m, y, Some(h), lw).unwrap().total
        };
        (eval(eps) - eval(-eps)) / (2.0 * eps)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let target = BetaMixture::new(
            vec![
                BetaParams::new(3.0, 2.0).unwrap(),
                BetaParams::new(2.0, 4.0).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let h = target.discretize(100).unwrap();
        let lw = LossWeights::new(1.0, 1.0).unwrap();

        for trial in 0..30 {
            let k = 1 + (trial % 3);
            let cs: Vec<(f64, f64)> = (0..k)
                .map(|_| {
                    (
                        1.2 + 3.8 * rng.gen::<f64>(),
                        1.2 + 3.8 * rng.gen::<f64>(),
                    )
                })
                .collect();
            let mut ws: Vec<f64> = (0..k).map(|_| 0.2 + rng.gen::<f64>()).collect();
            let total: f64 = ws.iter().sum();
            ws.iter_mut().for_each(|w| *w /= total);
            let y = (trial % 2) as u8;

            let comps: Vec<BetaParams> = cs
                .iter()
                .map(|&(a, b)| BetaParams::new(a, b).unwrap())
                .collect();
            let m = BetaMixture::new(comps, ws.clone()).unwrap();
            let (_, grad) = loss_gradients(&m, y, Some(&h), &lw).unwrap();

            let check = |analytic: f64, fd: f64, label: &str| {
                let tol = 1e-8 + 1e-4 * analytic.abs().max(fd.abs());
                assert!(
                    (analytic - fd).abs() <= tol,
                    "trial {trial} {label}: analytic {analytic} vs fd {fd}"
                );
            };

            for ki in 0..k {
                let fd_a = fd_loss(&cs, &ws, y, &h, &lw, |t| {
                    let mut cs2 = cs.clone();
                    cs2[ki].0 += t;
                    (cs2, ws.clone())
                });
                check(grad.alpha[ki], fd_a, "alpha");
                let fd_b = fd_loss(&cs, &ws, y, &h, &lw, |t| {
                    let mut cs2 = cs.clone();
                    cs2[ki].1 += t;
                    (cs2, ws.clone())
                });
                check(grad.beta[ki], fd_b, "beta");
            }
            // Weight gradients are free partials; probe simplex-preserving
            // directions so the constructor's renormalization is a no-op.
            if k >= 2 {
                for ki in 1..k {
                    let fd_w = fd_loss(&cs, &ws, y, &h, &lw, |t| {
                        let mut ws2 = ws.clone();
                        ws2[ki] += t;
                        ws2[0] -= t;
                        (cs.clone(), ws2)
                    });
                    check(grad.weight[ki] - grad.weight[0], fd_w, "weight diff");
                }
            }
        }
    }

    #[test]
    fn gradient_zero_at_stationary_point() {
        // If the histogram equals the mixture's own discretization and the
        // empirical outcome rate equals the mixture mean, the averaged
        // gradient vanishes.
        let m = BetaMixture::new(
            vec![
                BetaParams::new(3.0, 2.0).unwrap(),
                BetaParams::new(2.0, 5.0).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let h = m.discretize(100).unwrap();
        let lw = LossWeights::both();
        let q = m.mean();
        let (_, g1) = loss_gradients(&m, 1, Some(&h), &lw).unwrap();
        let (_, g0) = loss_gradients(&m, 0, Some(&h), &lw).unwrap();
        for ki in 0..m.k() {
            let avg_a = q * g1.alpha[ki] + (1.0 - q) * g0.alpha[ki];
            let avg_b = q * g1.beta[ki] + (1.0 - q) * g0.beta[ki];
            assert_close(avg_a, 0.0, 1e-8);
            assert_close(avg_b, 0.0, 1e-8);
            // Weight gradients at the stationary point are uniform across
            // components, i.e. zero once projected onto the simplex.
            let avg_w0 = q * g1.weight[0] + (1.0 - q) * g0.weight[0];
            let avg_wk = q * g1.weight[ki] + (1.0 - q) * g0.weight[ki];
            assert_close(avg_wk - avg_w0, 0.0, 1e-8);
        }
    }

    #[test]
    fn gradient_linear_in_weights() {
        let m = BetaMixture::new(
            vec![
                BetaParams::new(2.5, 1.8).unwrap(),
                BetaParams::new(1.3, 4.0).unwrap(),
            ],
            vec![0.4, 0.6],
        )
        .unwrap();
        let other = BetaMixture::single(BetaParams::new(4.0, 4.0).unwrap());
        let h = other.discretize(100).unwrap();
        let (_, g1) = loss_gradients(&m, 1, Some(&h), &LossWeights::new(1.0, 1.0).unwrap()).unwrap();
        let (_, g2) = loss_gradients(&m, 1, Some(&h), &LossWeights::new(2.0, 2.0).unwrap()).unwrap();
        for ki in 0..m.k() {
            assert_close(g2.alpha[ki], 2.0 * g1.alpha[ki], 1e-12);
            assert_close(g2.beta[ki], 2.0 * g1.beta[ki], 1e-12);
            assert_close(g2.weight[ki], 2.0 * g1.weight[ki], 1e-12);
        }
    }
}
