//! The trainable calibrator: a two-layer tanh MLP mapping an input feature
//! vector (plus an optional initial forecast appended as one extra feature)
//! to the parameters of a Beta mixture.
//!
//! The raw network output has `3K` values per example, laid out as
//! `[a_1..a_K, b_1..b_K, c_1..c_K]`. Shape parameters are mapped through
//! `1 + softplus` so `alpha, beta > 1` always holds, and the `c` logits go
//! through a softmax so the mixture weights live on the simplex.
//!
//! Training is plain minibatch gradient descent (SGD or Adam) and is fully
//! deterministic for a given seed: one ChaCha stream drives the shuffle and
//! every reduction runs in a fixed order on one thread.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beta::{BetaMixture, BetaParams, Histogram};
use crate::error::{Error, Result};
use crate::losses::{loss_gradients, total_loss, LossBreakdown, LossWeights};

/// One model input: a fixed-dimension feature vector and an optional
/// initial point forecast that, when present, is appended as one extra
/// input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorInput {
    pub features: Vec<f64>,
    pub init_forecast: Option<f64>,
}

impl CalibratorInput {
    pub fn new(features: Vec<f64>, init_forecast: Option<f64>) -> Result<Self> {
        for &f in &features {
            if !f.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "features must be finite, got {f}"
                )));
            }
        }
        if let Some(p) = init_forecast {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "init_forecast must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(Self {
            features,
            init_forecast,
        })
    }

    /// Total input dimension seen by the model.
    pub fn dim(&self) -> usize {
        self.features.len() + usize::from(self.init_forecast.is_some())
    }
}

/// One training example: model input, binary outcome, and (optionally) a
/// human-forecast histogram for the distributional loss term.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub input: CalibratorInput,
    pub outcome: u8,
    pub histogram: Option<Histogram>,
}

/// Optimizer choice for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain minibatch gradient descent.
    Sgd,
    /// Adam with the standard moment constants (0.9, 0.999, eps 1e-8).
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Training hyperparameters.
///
/// `learning_rate = 0` and `epochs = 0` are both allowed and produce null
/// updates — useful for checking that a checkpoint equals its
/// initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    /// The desk-scale defaults used by the synthetic experiment: Adam at
    /// 1e-3, 200 epochs, batches of 256, both loss terms on.
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 256,
            seed: 0,
            weights: LossWeights::both(),
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        LossWeights::new(self.weights.binary, self.weights.human)?;
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Versioned on-disk checkpoint layout. All parameter arrays are row-major.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    input_dim: usize,
    hidden_dim: usize,
    components: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

const CHECKPOINT_VERSION: u32 = 1;

/// The calibrator network. Parameters are stored in one flat vector in the
/// order `[w1 | b1 | w2 | b2]` with row-major matrices, which keeps the
/// optimizer and finite-difference tooling trivial.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrator {
    input_dim: usize,
    hidden_dim: usize,
    components: usize,
    params: Vec<f64>,
}

/// Reusable per-example buffers for forward/backward passes.
struct Scratch {
    x: Vec<f64>,
    hidden: Vec<f64>,
    raw: Vec<f64>,
    d_raw: Vec<f64>,
    d_hidden: Vec<f64>,
}

impl Scratch {
    fn new(input_dim: usize, hidden_dim: usize, components: usize) -> Self {
        Self {
            x: Vec::with_capacity(input_dim),
            hidden: vec![0.0; hidden_dim],
            raw: vec![0.0; 3 * components],
            d_raw: vec![0.0; 3 * components],
            d_hidden: vec![0.0; hidden_dim],
        }
    }
}

impl Calibrator {
    fn validate_dims(input_dim: usize, hidden_dim: usize, components: usize) -> Result<()> {
        if input_dim == 0 || hidden_dim == 0 || components == 0 {
            return Err(Error::InvalidParameter(format!(
                "model dimensions must be positive, got input={input_dim}, hidden={hidden_dim}, components={components}"
            )));
        }
        Ok(())
    }

    /// Fresh model with parameters drawn uniformly from [-0.05, 0.05],
    /// except the output biases which start at zero so the initial forecast
    /// is exactly the symmetric mixture with mean 1/2.
    pub fn new(input_dim: usize, hidden_dim: usize, components: usize, seed: u64) -> Result<Self> {
        Self::validate_dims(input_dim, hidden_dim, components)?;
        let mut model = Self::zeroed(input_dim, hidden_dim, components)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o_b2 = model.offset_b2();
        for p in &mut model.params[..o_b2] {
            *p = rng.gen::<f64>() * 0.1 - 0.05;
        }
        Ok(model)
    }

    /// All-zero parameters: every component is Beta(1 + ln 2, 1 + ln 2)
    /// with uniform weights, for any input.
    pub fn zeroed(input_dim: usize, hidden_dim: usize, components: usize) -> Result<Self> {
        Self::validate_dims(input_dim, hidden_dim, components)?;
        let n_params = hidden_dim * input_dim + hidden_dim + 3 * components * hidden_dim
            + 3 * components;
        Ok(Self {
            input_dim,
            hidden_dim,
            components,
            params: vec![0.0; n_params],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Number of mixture components K.
    pub fn components(&self) -> usize {
        self.components
    }

    fn offset_b1(&self) -> usize {
        self.hidden_dim * self.input_dim
    }

    fn offset_w2(&self) -> usize {
        self.offset_b1() + self.hidden_dim
    }

    fn offset_b2(&self) -> usize {
        self.offset_w2() + 3 * self.components * self.hidden_dim
    }

    /// Flat parameter vector in the order `[w1 | b1 | w2 | b2]`.
    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    /// Replace all parameters. The length must match; values are taken as
    /// given (finiteness is the caller's concern).
    pub fn set_parameters(&mut self, new: &[f64]) -> Result<()> {
        if new.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: new.len(),
            });
        }
        self.params.copy_from_slice(new);
        Ok(())
    }

    fn fill_input(&self, input: &CalibratorInput, x: &mut Vec<f64>) -> Result<()> {
        if input.dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: input.dim(),
            });
        }
        x.clear();
        x.extend_from_slice(&input.features);
        if let Some(p) = input.init_forecast {
            x.push(p);
        }
        Ok(())
    }

    /// hidden = tanh(W1 x + b1); raw = W2 hidden + b2.
    fn forward_into(&self, x: &[f64], hidden: &mut [f64], raw: &mut [f64]) {
        let d = self.input_dim;
        let h = self.hidden_dim;
        let o_b1 = self.offset_b1();
        let o_w2 = self.offset_w2();
        let o_b2 = self.offset_b2();
        for j in 0..h {
            let row = &self.params[j * d..(j + 1) * d];
            let mut z = self.params[o_b1 + j];
            for (wi, xi) in row.iter().zip(x) {
                z += wi * xi;
            }
            hidden[j] = z.tanh();
        }
        for o in 0..3 * self.components {
            let row = &self.params[o_w2 + o * h..o_w2 + (o + 1) * h];
            let mut z = self.params[o_b2 + o];
            for (wi, hi) in row.iter().zip(hidden.iter()) {
                z += wi * hi;
            }
            raw[o] = z;
        }
    }

    /// Map raw outputs `[a | b | c]` to a Beta mixture:
    /// `alpha = 1 + softplus(a)`, `beta = 1 + softplus(b)`, `w = softmax(c)`.
    fn mixture_from_raw(&self, raw: &[f64]) -> Result<BetaMixture> {
        let k = self.components;
        let mut comps = Vec::with_capacity(k);
        for i in 0..k {
            comps.push(BetaParams::new(
                1.0 + softplus(raw[i]),
                1.0 + softplus(raw[k + i]),
            )?);
        }
        let max_c = raw[2 * k..3 * k]
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let weights: Vec<f64> = (0..k).map(|i| (raw[2 * k + i] - max_c).exp()).collect();
        BetaMixture::new(comps, weights)
    }

    /// Run the network on one input and return the predicted mixture.
    pub fn forward(&self, input: &CalibratorInput) -> Result<BetaMixture> {
        let mut scratch = Scratch::new(self.input_dim, self.hidden_dim, self.components);
        self.fill_input(input, &mut scratch.x)?;
        self.forward_into(&scratch.x, &mut scratch.hidden, &mut scratch.raw);
        self.mixture_from_raw(&scratch.raw)
    }

    /// Point forecast (mixture mean), epistemic uncertainty (mixture
    /// variance), and the full predicted mixture.
    pub fn predict(&self, input: &CalibratorInput) -> Result<(f64, f64, BetaMixture)> {
        let m = self.forward(input)?;
        Ok((m.mean(), m.variance(), m))
    }

    /// Loss and gradient for one example, with the gradient ADDED into
    /// `grad` (same layout as `parameters()`).
    fn accumulate_gradient(
        &self,
        example: &TrainExample,
        weights: &LossWeights,
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) -> Result<LossBreakdown> {
        let d = self.input_dim;
        let h = self.hidden_dim;
        let k = self.components;
        let o_b1 = self.offset_b1();
        let o_w2 = self.offset_w2();
        let o_b2 = self.offset_b2();

        self.fill_input(&example.input, &mut scratch.x)?;
        self.forward_into(&scratch.x, &mut scratch.hidden, &mut scratch.raw);
        let mixture = self.mixture_from_raw(&scratch.raw)?;
        let (breakdown, mg) = loss_gradients(
            &mixture,
            example.outcome,
            example.histogram.as_ref(),
            weights,
        )?;

        // Chain through the output map.
        let ws = mixture.weights();
        let mut dot = 0.0;
        for i in 0..k {
            dot += mg.weight[i] * ws[i];
        }
        for i in 0..k {
            scratch.d_raw[i] = mg.alpha[i] * sigmoid(scratch.raw[i]);
            scratch.d_raw[k + i] = mg.beta[i] * sigmoid(scratch.raw[k + i]);
            scratch.d_raw[2 * k + i] = ws[i] * (mg.weight[i] - dot);
        }

        // Backprop through the affine layers.
        scratch.d_hidden.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..3 * k {
            let dr = scratch.d_raw[o];
            grad[o_b2 + o] += dr;
            let w_row = &self.params[o_w2 + o * h..o_w2 + (o + 1) * h];
            let g_row = &mut grad[o_w2 + o * h..o_w2 + (o + 1) * h];
            for j in 0..h {
                g_row[j] += dr * scratch.hidden[j];
                scratch.d_hidden[j] += w_row[j] * dr;
            }
        }
        for j in 0..h {
            let hj = scratch.hidden[j];
            let dz = scratch.d_hidden[j] * (1.0 - hj * hj);
            grad[o_b1 + j] += dz;
            let g_row = &mut grad[j * d..(j + 1) * d];
            for (gi, xi) in g_row.iter_mut().zip(&scratch.x) {
                *gi += dz * xi;
            }
        }
        Ok(breakdown)
    }

    /// Loss breakdown and full-parameter gradient for a single example, in
    /// the `parameters()` layout. This is the unit the training loop (and
    /// any finite-difference check) consumes.
    pub fn example_gradient(
        &self,
        example: &TrainExample,
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let mut scratch = Scratch::new(self.input_dim, self.hidden_dim, self.components);
        let breakdown = self.accumulate_gradient(example, weights, &mut grad, &mut scratch)?;
        Ok((breakdown, grad))
    }

    /// Loss for a single example under the current parameters (no
    /// gradient); used for evaluation and derivative checks.
    pub fn example_loss(
        &self,
        example: &TrainExample,
        weights: &LossWeights,
    ) -> Result<LossBreakdown> {
        let m = self.forward(&example.input)?;
        total_loss(&m, example.outcome, example.histogram.as_ref(), weights)
    }

    /// Minibatch training. Returns one LossBreakdown per epoch holding the
    /// running mean of the per-example losses seen during that epoch.
    ///
    /// Deterministic for a fixed seed: a single ChaCha stream shuffles the
    /// example order each epoch, batches are taken in shuffled order, and
    /// all reductions are sequential. Per-batch gradients are averaged
    /// (not summed) over the batch.
    pub fn train(&mut self, data: &[TrainExample], cfg: &TrainConfig) -> Result<Vec<LossBreakdown>> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyInput("training needs at least one example"));
        }
        for (i, ex) in data.iter().enumerate() {
            if ex.input.dim() != self.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim,
                    got: ex.input.dim(),
                });
            }
            if ex.outcome > 1 {
                return Err(Error::InvalidParameter(format!(
                    "example {i}: outcome must be 0 or 1, got {}",
                    ex.outcome
                )));
            }
            if cfg.weights.human > 0.0 && ex.histogram.is_none() {
                return Err(Error::MissingHistogram { index: i });
            }
        }

        let n_params = self.params.len();
        let mut grad = vec![0.0; n_params];
        let mut scratch = Scratch::new(self.input_dim, self.hidden_dim, self.components);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();

        // Adam moment buffers (unused for plain SGD).
        let mut m1 = vec![0.0; n_params];
        let mut m2 = vec![0.0; n_params];
        let mut step = 0u32;

        let mut trace = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut sums = LossBreakdown::default();
            for batch in order.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in batch {
                    let bd =
                        self.accumulate_gradient(&data[i], &cfg.weights, &mut grad, &mut scratch)?;
                    if !bd.total.is_finite() {
                        return Err(Error::NonFiniteLoss { index: i });
                    }
                    sums.binary += bd.binary;
                    sums.human += bd.human;
                    sums.total += bd.total;
                }
                let scale = 1.0 / batch.len() as f64;
                match cfg.optimizer {
                    Optimizer::Sgd => {
                        for (p, g) in self.params.iter_mut().zip(&grad) {
                            *p -= cfg.learning_rate * scale * g;
                        }
                    }
                    Optimizer::Adam => {
                        step += 1;
                        let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
                        let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
                        for i in 0..n_params {
                            let g = grad[i] * scale;
                            m1[i] = ADAM_BETA1 * m1[i] + (1.0 - ADAM_BETA1) * g;
                            m2[i] = ADAM_BETA2 * m2[i] + (1.0 - ADAM_BETA2) * g * g;
                            let mhat = m1[i] / bc1;
                            let vhat = m2[i] / bc2;
                            self.params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
            let n = data.len() as f64;
            trace.push(LossBreakdown {
                binary: sums.binary / n,
                human: sums.human / n,
                total: sums.total / n,
            });
        }
        Ok(trace)
    }

    /// Write a versioned JSON checkpoint. The round trip through
    /// [`Calibrator::load`] is bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.input_dim;
        let h = self.hidden_dim;
        let o_b1 = self.offset_b1();
        let o_w2 = self.offset_w2();
        let o_b2 = self.offset_b2();
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            input_dim: d,
            hidden_dim: h,
            components: self.components,
            w1: self.params[..o_b1].to_vec(),
            b1: self.params[o_b1..o_w2].to_vec(),
            w2: self.params[o_w2..o_b2].to_vec(),
            b2: self.params[o_b2..].to_vec(),
        };
        let mut out = serde_json::to_string(&file)?;
        out.push('\n');
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        let mut model = Self::zeroed(file.input_dim, file.hidden_dim, file.components)?;
        let o_b1 = model.offset_b1();
        let o_w2 = model.offset_w2();
        let o_b2 = model.offset_b2();
        if file.w1.len() != o_b1
            || file.b1.len() != o_w2 - o_b1
            || file.w2.len() != o_b2 - o_w2
            || file.b2.len() != model.params.len() - o_b2
        {
            return Err(Error::InvalidParameter(
                "checkpoint parameter arrays do not match its dimensions".into(),
            ));
        }
        model.params[..o_b1].copy_from_slice(&file.w1);
        model.params[o_b1..o_w2].copy_from_slice(&file.b1);
        model.params[o_w2..o_b2].copy_from_slice(&file.w2);
        model.params[o_b2..].copy_from_slice(&file.b2);
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn assert_close(got: f64, want: f64, tol: f64) {
        assert!(
            (got - want).abs() <= tol,
            "got {got}, want {want} (tol {tol})"
        );
    }

    fn random_input<R: Rng>(dim: usize, rng: &mut R) -> CalibratorInput {
        CalibratorInput::new((0..dim).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect(), None)
            .unwrap()
    }

    #[test]
    fn input_validation() {
        assert!(CalibratorInput::new(vec![f64::NAN], None).is_err());
        assert!(CalibratorInput::new(vec![0.0], Some(1.5)).is_err());
        let input = CalibratorInput::new(vec![0.0, 1.0], Some(0.5)).unwrap();
        assert_eq!(input.dim(), 3);
    }

    #[test]
    fn zeroed_model_is_symmetric() {
        for k in [1usize, 5] {
            let model = Calibrator::zeroed(4, 8, k).unwrap();
            let input = CalibratorInput::new(vec![0.3, -1.0, 2.0, 0.0], None).unwrap();
            let m = model.forward(&input).unwrap();
            let want_shape = 1.0 + std::f64::consts::LN_2;
            for c in m.components() {
                assert_close(c.alpha(), want_shape, 1e-15);
                assert_close(c.beta(), want_shape, 1e-15);
            }
            for &w in m.weights() {
                assert_close(w, 1.0 / k as f64, 1e-15);
            }
            assert_close(m.mean(), 0.5, 1e-12);
            let (p, u, _) = model.predict(&input).unwrap();
            assert_close(p, 0.5, 1e-12);
            assert!(u > 0.0 && u <= 0.25);
        }
    }

    #[test]
    fn parameterization_guarantees_constraints() {
        let model = Calibrator::new(6, 16, 3, 99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let input = random_input(6, &mut rng);
            let m = model.forward(&input).unwrap();
            for c in m.components() {
                assert!(c.alpha() > 1.0 && c.beta() > 1.0);
            }
            let total: f64 = m.weights().iter().sum();
            assert_close(total, 1.0, 1e-12);
            let (_, u, _) = model.predict(&input).unwrap();
            assert!(u > 0.0 && u <= 0.25);
        }
    }

    #[test]
    fn forward_checks_dimensions() {
        let model = Calibrator::zeroed(3, 4, 1).unwrap();
        let too_short = CalibratorInput::new(vec![0.0; 2], None).unwrap();
        assert!(matches!(
            model.forward(&too_short),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        // The appended init forecast counts toward the dimension.
        let with_init = CalibratorInput::new(vec![0.0; 2], Some(0.5)).unwrap();
        assert!(model.forward(&with_init).is_ok());
        let too_long = CalibratorInput::new(vec![0.0; 3], Some(0.5)).unwrap();
        assert!(model.forward(&too_long).is_err());
    }

    #[test]
    fn initialization_is_seeded() {
        let a = Calibrator::new(5, 8, 2, 7).unwrap();
        let b = Calibrator::new(5, 8, 2, 7).unwrap();
        let c = Calibrator::new(5, 8, 2, 8).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert_ne!(a.parameters(), c.parameters());
        // Output biases start at zero.
        let o_b2 = a.offset_b2();
        assert!(a.parameters()[o_b2..].iter().all(|&p| p == 0.0));
        // Everything else is within the init range.
        assert!(a.parameters()[..o_b2]
            .iter()
            .all(|&p| (-0.05..=0.05).contains(&p)));
    }

    fn tiny_dataset(n: usize, dim: usize, seed: u64) -> Vec<TrainExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = BetaMixture::single(BetaParams::new(6.0, 2.0).unwrap());
        (0..n)
            .map(|_| {
                let input = random_input(dim, &mut rng);
                let outcome = (rng.gen::<f64>() < 0.7) as u8;
                let samples: Vec<f64> = (0..200).map(|_| target.sample(&mut rng)).collect();
                TrainExample {
                    input,
                    outcome,
                    histogram: Some(Histogram::from_samples(&samples, 100).unwrap()),
                }
            })
            .collect()
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(40, 4, 3);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let mut a = Calibrator::new(4, 8, 2, 0).unwrap();
        let mut b = Calibrator::new(4, 8, 2, 0).unwrap();
        let ta = a.train(&data, &cfg).unwrap();
        let tb = b.train(&data, &cfg).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        for (x, y) in ta.iter().zip(&tb) {
            assert_eq!(x.total.to_bits(), y.total.to_bits());
        }
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let data = tiny_dataset(20, 4, 4);
        let mut model = Calibrator::new(4, 8, 1, 5).unwrap();
        let before = model.parameters().to_vec();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..TrainConfig::default()
        };
        let trace = model.train(&data, &cfg).unwrap();
        assert_eq!(trace.len(), 1);
        let unchanged = before
            .iter()
            .zip(model.parameters())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(unchanged, "parameters moved at learning rate 0");
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let data = tiny_dataset(10, 4, 6);
        let mut model = Calibrator::new(4, 8, 1, 5).unwrap();
        let before = model.parameters().to_vec();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let trace = model.train(&data, &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(before, model.parameters());
    }

    #[test]
    fn training_decreases_loss() {
        let data = tiny_dataset(200, 4, 8);
        let mut model = Calibrator::new(4, 16, 1, 11).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let trace = model.train(&data, &cfg).unwrap();
        assert_eq!(trace.len(), 40);
        let first = trace.first().unwrap().total;
        let last = trace.last().unwrap().total;
        assert!(
            last < 0.7 * first,
            "loss failed to drop: {first} -> {last}"
        );
    }

    #[test]
    fn training_validates_inputs() {
        let mut model = Calibrator::new(4, 8, 1, 5).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(
            model.train(&[], &cfg),
            Err(Error::EmptyInput(_))
        ));
        // Histogram required when the human weight is positive.
        let mut data = tiny_dataset(3, 4, 9);
        data[1].histogram = None;
        assert!(matches!(
            model.train(&data, &cfg),
            Err(Error::MissingHistogram { index: 1 })
        ));
        // Bad outcome is rejected with its index.
        let mut data = tiny_dataset(3, 4, 10);
        data[2].outcome = 7;
        assert!(model.train(&data, &cfg).is_err());
    }

    #[test]
    fn non_finite_loss_reports_example() {
        // Weights at the top of the floating-point range overflow the
        // per-example weighted total.
        let mut model = Calibrator::new(4, 8, 1, 5).unwrap();
        let data = tiny_dataset(3, 4, 12);
        let cfg = TrainConfig {
            weights: LossWeights {
                binary: f64::MAX,
                human: f64::MAX,
            },
            epochs: 1,
            ..TrainConfig::default()
        };
        match model.train(&data, &cfg) {
            Err(Error::NonFiniteLoss { .. }) => {}
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let weights = LossWeights::both();
        let target = BetaMixture::single(BetaParams::new(5.0, 3.0).unwrap());
        for trial in 0..20 {
            let k = 1 + trial % 2;
            let mut model = Calibrator::new(3, 4, k, 1000 + trial as u64).unwrap();
            // Move off the tiny init so hidden units are in their curved
            // region.
            let perturbed: Vec<f64> = model
                .parameters()
                .iter()
                .map(|p| p + rng.gen::<f64>() * 0.6 - 0.3)
                .collect();
            model.set_parameters(&perturbed).unwrap();
            let samples: Vec<f64> = (0..500).map(|_| target.sample(&mut rng)).collect();
            let example = TrainExample {
                input: random_input(3, &mut rng),
                outcome: (trial % 2) as u8,
                histogram: Some(Histogram::from_samples(&samples, 100).unwrap()),
            };
            let (_, grad) = model.example_gradient(&example, &weights).unwrap();
            let base = model.parameters().to_vec();
            let mut probe = model.clone();
            let eps = 1e-5;
            for i in 0..base.len() {
                let mut plus = base.clone();
                plus[i] += eps;
                probe.set_parameters(&plus).unwrap();
                let lp = probe.example_loss(&example, &weights).unwrap().total;
                let mut minus = base.clone();
                minus[i] -= eps;
                probe.set_parameters(&minus).unwrap();
                let lm = probe.example_loss(&example, &weights).unwrap().total;
                let fd = (lp - lm) / (2.0 * eps);
                let tol = 1e-8 + 1e-4 * grad[i].abs().max(fd.abs());
                assert!(
                    (grad[i] - fd).abs() <= tol,
                    "trial {trial} param {i}: analytic {} vs fd {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        let mut model = Calibrator::new(7, 12, 3, 21).unwrap();
        // Train a little so parameters are "interesting" floats.
        let data = tiny_dataset(30, 7, 22);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        model.train(&data, &cfg).unwrap();
        model.save(&path).unwrap();
        let loaded = Calibrator::load(&path).unwrap();
        assert_eq!(loaded.input_dim(), 7);
        assert_eq!(loaded.components(), 3);
        let same = model
            .parameters()
            .iter()
            .zip(loaded.parameters())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "checkpoint round trip changed parameter bits");
    }

    #[test]
    fn checkpoint_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"version\": 99}").unwrap();
        assert!(Calibrator::load(&path).is_err());
        std::fs::write(&path, "not json").unwrap();
        assert!(Calibrator::load(&path).is_err());
    }
}
