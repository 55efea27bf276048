use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::optim::{Optimizer, OptimizerState};
use crate::error::{Error, Result};
use crate::types::{Dataset, RngSeed, Spectrum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: RngSeed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: RngSeed(0),
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly 0 is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        self.optimizer.validate()
    }
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epoch_losses: Vec<f64>,
}

/// Splits `0..n` into batches, folding a trailing singleton into the
/// previous batch so batch statistics always see two samples.
fn batch_bounds(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut bounds: Vec<(usize, usize)> = (0..n)
        .step_by(batch_size)
        .map(|s| (s, (s + batch_size).min(n)))
        .collect();
    if bounds.len() >= 2 && bounds.last().map(|(s, e)| e - s) == Some(1) {
        let (_, end) = bounds.pop().unwrap();
        bounds.last_mut().unwrap().1 = end;
    }
    bounds
}

/// Minibatch training on cross-entropy. Sample order is reshuffled every
/// epoch; the same seed reproduces the same parameters bit for bit.
pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    data.ensure_normalized(net.input_length())?;
    let spectra: Vec<&Spectrum> = data.samples().iter().map(|s| &s.spectrum).collect();
    let labels: Vec<usize> = data.samples().iter().map(|s| s.label.index()).collect();
    if let Some(&l) = labels.iter().find(|&&l| l >= net.n_classes()) {
        return Err(Error::LabelOutOfRange {
            label: l,
            n_classes: net.n_classes(),
        });
    }
    let mut order_rng = cfg.seed.derive(0).rng();
    let mut dropout_rng = cfg.seed.derive(1).rng();
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let bounds = batch_bounds(data.len(), cfg.batch_size);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for &(start, end) in &bounds {
            let idx = &order[start..end];
            let batch: Vec<&Spectrum> = idx.iter().map(|&i| spectra[i]).collect();
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let x = net.batch_input(&batch)?;
            let loss = net.loss_and_gradients(&x, &batch_labels, &mut dropout_rng)?;
            total += loss * idx.len() as f64;
            opt.step(net.params_and_grads(), cfg.learning_rate);
        }
        epoch_losses.push(total / data.len() as f64);
    }
    Ok(TrainHistory { epoch_losses })
}
