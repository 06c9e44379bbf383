//! The buyer's policy network and its supervised pretraining.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::mlp::{max_relative_error, Adam, Dropout, Mlp, Tape};
use super::NeuralError;
use crate::features::{DatasetRow, DecisionLabel, FEATURE_DIM};
use crate::SimRng;

/// Five action logits followed by the pre-squash offer output.
pub const POLICY_OUTPUTS: usize = DecisionLabel::COUNT + 1;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: [f64; DecisionLabel::COUNT],
    pub probs: [f64; DecisionLabel::COUNT],
    /// Offer on the unit interval of the buyer's price range.
    pub offer_unit: f64,
}

pub fn softmax(logits: &[f64; DecisionLabel::COUNT]) -> [f64; DecisionLabel::COUNT] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.map(|z| (z - max).exp());
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn split_output(y: &[f64]) -> PolicyOutput {
    let mut logits = [0.0; DecisionLabel::COUNT];
    logits.copy_from_slice(&y[..DecisionLabel::COUNT]);
    PolicyOutput {
        probs: softmax(&logits),
        logits,
        offer_unit: sigmoid(y[DecisionLabel::COUNT]),
    }
}

/// Shared trunk with a discrete-action head and a bounded offer head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNetwork {
    pub mlp: Mlp,
    pub dropout_rate: f64,
}

impl PolicyNetwork {
    pub fn new(hidden: &[usize], dropout_rate: f64, rng: &mut SimRng) -> Self {
        let mut sizes = vec![FEATURE_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(POLICY_OUTPUTS);
        Self {
            mlp: Mlp::new(&sizes, rng),
            dropout_rate,
        }
    }

    pub fn with_default_architecture(rng: &mut SimRng) -> Self {
        Self::new(&DEFAULT_HIDDEN, DEFAULT_DROPOUT, rng)
    }

    pub fn from_mlp(mlp: Mlp, dropout_rate: f64) -> Result<Self, NeuralError> {
        if mlp.input_dim() != FEATURE_DIM || mlp.output_dim() != POLICY_OUTPUTS {
            return Err(NeuralError::DimensionMismatch {
                expected: FEATURE_DIM,
                found: mlp.input_dim(),
            });
        }
        Ok(Self { mlp, dropout_rate })
    }

    pub fn forward(&self, features: &[f64], mode: Mode, rng: &mut SimRng) -> Result<PolicyOutput, NeuralError> {
        let dropout = match mode {
            Mode::Eval => Dropout::Off,
            Mode::Train => Dropout::Sample {
                rate: self.dropout_rate,
                rng,
            },
        };
        self.forward_taped(features, dropout).map(|(o, _)| o)
    }

    /// Deterministic forward pass.
    pub fn eval(&self, features: &[f64]) -> Result<PolicyOutput, NeuralError> {
        self.forward_taped(features, Dropout::Off).map(|(o, _)| o)
    }

    pub fn forward_taped(&self, features: &[f64], dropout: Dropout<'_>) -> Result<(PolicyOutput, Tape), NeuralError> {
        let (y, tape) = self.mlp.forward(features, dropout)?;
        Ok((split_output(&y), tape))
    }

    /// Backpropagates gradients given on the action logits and on the
    /// pre-squash offer output.
    pub fn backward(&self, tape: &Tape, d_logits: &[f64], d_offer_pre: f64, grads: &mut [f64]) {
        let mut g = d_logits.to_vec();
        g.push(d_offer_pre);
        self.mlp.backward(tape, &g, grads);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Fraction of rows held out for validation.
    pub validation_split: f64,
    /// Weight of the offer regression loss.
    pub offer_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            dropout_rate: DEFAULT_DROPOUT,
            seed: 0,
            validation_split: 0.2,
            offer_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return bad("validation split must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout rate must lie in [0, 1)");
        }
        if !(self.offer_weight >= 0.0) {
            return bad("offer weight must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Offer error as a fraction of the buyer's price range.
    pub val_offer_rmse: f64,
}

/// Loss and accuracy of `net` on `rows` in eval mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub offer_rmse: f64,
}

pub fn evaluate(net: &PolicyNetwork, rows: &[&DatasetRow], offer_weight: f64) -> Result<Evaluation, NeuralError> {
    let (mut ce, mut se, mut hits, mut n_offer) = (0.0, 0.0, 0usize, 0usize);
    for r in rows {
        let out = net.eval(&r.features)?;
        let label = r.label.index();
        ce -= out.probs[label].max(1e-300).ln();
        let best = (0..DecisionLabel::COUNT)
            .reduce(|a, b| if out.probs[b] > out.probs[a] { b } else { a })
            .expect("nonempty");
        hits += (best == label) as usize;
        if let Some(y) = r.offer_unit() {
            se += (out.offer_unit - y).powi(2);
            n_offer += 1;
        }
    }
    let n = rows.len().max(1) as f64;
    let mse = if n_offer > 0 { se / n_offer as f64 } else { 0.0 };
    Ok(Evaluation {
        loss: ce / n + offer_weight * mse,
        accuracy: hits as f64 / n,
        offer_rmse: mse.sqrt(),
    })
}

/// Joint loss over a batch and its gradient: mean cross-entropy plus
/// `offer_weight` times the mean squared offer error over counter-offer rows.
/// `masks` holds one dropout mask set per row; `None` disables dropout.
pub fn batch_loss_and_grad(
    net: &PolicyNetwork,
    rows: &[&DatasetRow],
    masks: Option<&[Vec<Vec<f64>>]>,
    offer_weight: f64,
) -> Result<(f64, Vec<f64>), NeuralError> {
    let mut grads = vec![0.0; net.mlp.params().len()];
    let n = rows.len().max(1) as f64;
    let n_offer = rows.iter().filter(|r| r.label_offer.is_some()).count().max(1) as f64;
    let mut loss = 0.0;
    for (i, r) in rows.iter().enumerate() {
        let dropout = match masks {
            Some(m) => Dropout::Fixed(&m[i]),
            None => Dropout::Off,
        };
        let (out, tape) = net.forward_taped(&r.features, dropout)?;
        let label = r.label.index();
        loss -= out.probs[label].max(1e-300).ln() / n;
        let mut d_logits = out.probs;
        d_logits[label] -= 1.0;
        d_logits.iter_mut().for_each(|g| *g /= n);
        let mut d_offer = 0.0;
        if let Some(y) = r.offer_unit() {
            let e = out.offer_unit - y;
            loss += offer_weight * e * e / n_offer;
            d_offer = offer_weight * 2.0 * e * out.offer_unit * (1.0 - out.offer_unit) / n_offer;
        }
        net.backward(&tape, &d_logits, d_offer, &mut grads);
    }
    Ok((loss, grads))
}

/// Trains `net` in place and returns per-epoch statistics.
pub fn train_supervised(
    net: &mut PolicyNetwork,
    rows: &[DatasetRow],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>, NeuralError> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    if let Some(r) = rows.iter().find(|r| r.features.len() != net.mlp.input_dim()) {
        return Err(NeuralError::DimensionMismatch {
            expected: net.mlp.input_dim(),
            found: r.features.len(),
        });
    }
    net.dropout_rate = cfg.dropout_rate;
    let mut rng = SimRng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((rows.len() as f64 * cfg.validation_split).round() as usize).min(rows.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&DatasetRow> = val_idx.iter().map(|&i| &rows[i]).collect();
    let mut train: Vec<&DatasetRow> = train_idx.iter().map(|&i| &rows[i]).collect();

    let mut opt = Adam::new(net.mlp.params().len(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(cfg.batch_size) {
            let masks: Vec<Vec<Vec<f64>>> = batch
                .iter()
                .map(|_| net.mlp.sample_masks(net.dropout_rate, &mut rng))
                .collect();
            let (_, grads) = batch_loss_and_grad(net, batch, Some(&masks), cfg.offer_weight)?;
            opt.step(net.mlp.params_mut(), &grads);
        }
        let tr = evaluate(net, &train, cfg.offer_weight)?;
        let va = if val.is_empty() { tr } else { evaluate(net, &val, cfg.offer_weight)? };
        history.push(EpochStats {
            epoch,
            train_loss: tr.loss,
            train_accuracy: tr.accuracy,
            val_loss: va.loss,
            val_accuracy: va.accuracy,
            val_offer_rmse: va.offer_rmse,
        });
    }
    Ok(history)
}

/// Compares analytic and finite-difference gradients of the joint loss on a
/// batch, with dropout masks frozen, over `samples` random parameters.
pub fn policy_gradient_check(
    net: &PolicyNetwork,
    rows: &[&DatasetRow],
    samples: usize,
    rng: &mut SimRng,
) -> Result<f64, NeuralError> {
    let masks: Vec<Vec<Vec<f64>>> = rows
        .iter()
        .map(|_| net.mlp.sample_masks(net.dropout_rate, rng))
        .collect();
    let (_, grads) = batch_loss_and_grad(net, rows, Some(&masks), 1.0)?;
    let n = grads.len();
    let which: Vec<usize> = (0..samples.min(n)).map(|_| rng.random_range(0..n)).collect();
    let mut probe = net.clone();
    let mut params = net.mlp.params().to_vec();
    Ok(max_relative_error(&mut params, &grads, &which, 1e-5, |p| {
        probe.mlp.params_mut().copy_from_slice(p);
        batch_loss_and_grad(&probe, rows, Some(&masks), 1.0)
            .map(|(l, _)| l)
            .unwrap_or(f64::NAN)
    }))
}
