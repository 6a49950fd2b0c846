//! Distributional calibration of binary-event forecasts.
//!
//! Instead of a single probability, the calibrator in this crate predicts a
//! mixture of Beta distributions over the latent event probability. The
//! mixture mean is the point forecast; the mixture variance separates
//! epistemic uncertainty from the aleatoric uncertainty already captured by
//! the mean. Training combines two signals:
//!
//! * the binary outcome, through cross-entropy on the mixture mean (the
//!   closed-form marginal likelihood of the Beta-Bernoulli model), and
//! * a crowd histogram of human forecasts (or market prices), through the
//!   KL divergence from the histogram to the discretized mixture.
//!
//! The crate provides the pieces end to end: Beta mixtures and histograms
//! ([`beta`]), the losses and their analytic gradients ([`losses`]), a
//! small MLP calibrator trained by SGD/Adam ([`model`]), evaluation metrics
//! ([`metrics`]), classical recalibration baselines ([`baselines`]), a
//! synthetic toy-experiment generator ([`synthetic`]), and JSONL dataset
//! plumbing ([`dataset`]). Everything is deterministic for a fixed seed.

pub mod baselines;
pub mod beta;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod special;
pub mod synthetic;

pub use beta::{BetaMixture, BetaParams, Histogram};
pub use error::{Error, Result};
pub use losses::{LossBreakdown, LossWeights};
pub use model::{Calibrator, CalibratorInput, TrainConfig, TrainExample};
