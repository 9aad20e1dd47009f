use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Mode, Network};
use crate::tensor::{softmax_cross_entropy, Float, Tensor};

use super::dataset::Dataset;
use super::optim::{Optimizer, OptimizerKind};
use super::{Result, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TrainError::Argument("batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Argument(format!(
                "learning rate {} must be a positive number",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Sample-weighted mean training loss.
    pub loss: f64,
    /// Fraction of training samples classified correctly during the epoch.
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

pub(crate) fn argmax<T: Float>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Epoch-at-a-time driver holding optimizer state between epochs.
pub struct Trainer<T: Float = f32> {
    config: TrainConfig,
    optimizer: Optimizer<T>,
    epochs_run: usize,
}

impl<T: Float> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            config,
            epochs_run: 0,
        })
    }

    /// Starts the epoch counter at `epochs_completed`, so shuffle orders line
    /// up with an uninterrupted run.
    pub fn resume_at(mut self, epochs_completed: usize) -> Self {
        self.epochs_run = epochs_completed;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    /// Sample order for a given epoch; depends only on the seed and epoch.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if self.config.shuffle_each_epoch {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }
        order
    }

    pub fn run_epoch(&mut self, network: &mut Network<T>, data: &Dataset<T>) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(TrainError::Argument("training set is empty".into()));
        }
        let epoch = self.epochs_run;
        let order = self.epoch_order(epoch, data.len());
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let (x, labels) = data.batch(idx)?;
            let (logits, cache) = network.forward(&x, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch: epoch + 1,
                    batch: b + 1,
                    loss,
                });
            }
            loss_sum += loss * idx.len() as f64;
            correct += count_correct(&logits, &labels);
            let grads = network.backward(&cache, &grad)?;
            self.optimizer.step(network, &grads)?;
        }
        self.epochs_run += 1;
        Ok(EpochStats {
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        })
    }
}

fn count_correct<T: Float>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// Runs `config.epochs` epochs in place and returns the per-epoch history.
pub fn train<T: Float>(network: &mut Network<T>, data: &Dataset<T>, config: &TrainConfig) -> Result<TrainHistory> {
    let mut trainer = Trainer::new(config.clone())?;
    if data.is_empty() {
        return Err(TrainError::Argument("training set is empty".into()));
    }
    let mut history = TrainHistory::default();
    for _ in 0..config.epochs {
        let stats = trainer.run_epoch(network, data)?;
        log::info!(
            "epoch {}/{}: loss {:.4}, accuracy {:.4}",
            trainer.epochs_run(),
            config.epochs,
            stats.loss,
            stats.accuracy
        );
        history.epochs.push(stats);
    }
    Ok(history)
}
