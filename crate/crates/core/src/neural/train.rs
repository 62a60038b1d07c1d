use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{batch_loss, loss_and_gradients_indexed, SequenceModel, Tape};
use super::optim::{adam_step, AdamState};
use crate::error::{Error, Result};
use crate::preprocess::WindowedSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Epochs without a strict validation improvement before stopping;
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Mini-batch Adam training with early stopping on validation loss.
/// Returns the parameters from the epoch with the lowest validation loss.
pub fn train(
    initial: SequenceModel,
    train_set: &[WindowedSample],
    val_set: &[WindowedSample],
    cfg: &TrainConfig,
) -> Result<(SequenceModel, TrainingLog)> {
    cfg.validate()?;
    initial.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty splits, got {} train / {} validation windows",
            train_set.len(),
            val_set.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = initial;
    let mut grads = model.zeros_like();
    let mut state = AdamState::new(&model);
    let mut tape = Tape::new(&model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut log = TrainingLog {
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = model.clone();
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let loss = loss_and_gradients_indexed(&model, train_set, batch, &mut grads, &mut tape);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training loss became {loss} in epoch {epoch} after {} optimizer steps",
                    state.step
                )));
            }
            total += loss * batch.len() as f64;
            adam_step(&mut model, &grads, &mut state, cfg.learning_rate, cfg.weight_decay);
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = batch_loss(&model, val_set);
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "validation loss became {val_loss} in epoch {epoch}"
            )));
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");

        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{predict, ModelConfig, ModelKind};

    fn separable(n: usize, flip: bool) -> Vec<WindowedSample> {
        (0..n)
            .map(|i| {
                let level = if i % 2 == 0 { 1.0 } else { -1.0 };
                let jitter = ((i * 7919) % 97) as f64 / 97.0 * 0.4;
                let sequence = (0..10).map(|t| [level + jitter, level * 0.5, -level + 0.01 * t as f64]).collect();
                let label = (level > 0.0) as u8;
                WindowedSample {
                    sequence,
                    label: if flip { 1 - label } else { label },
                    end_index: i,
                }
            })
            .collect()
    }

    fn tiny(kind: ModelKind) -> SequenceModel {
        SequenceModel::new(
            ModelConfig {
                kind,
                hidden_dim: 6,
                input_dim: 3,
                attention_dim: None,
            },
            5,
        )
        .unwrap()
    }

    fn cfg(epochs: usize, patience: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: 1e-2,
            weight_decay: 1e-5,
            early_stop_patience: patience,
            seed: 3,
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let data = separable(128, false);
        let (m, log) = train(tiny(ModelKind::GruAttention), &data, &data, &cfg(60, 10)).unwrap();
        let acc = predict(&m, &data)
            .iter()
            .zip(&data)
            .filter(|(p, s)| ((**p > 0.5) as u8) == s.label)
            .count() as f64
            / data.len() as f64;
        assert!(acc >= 0.99, "accuracy {acc}");
        assert!(log.best_val_loss < 0.1);
    }

    #[test]
    fn patience_zero_runs_every_epoch() {
        let data = separable(32, false);
        let flipped = separable(32, true);
        let (_, log) = train(tiny(ModelKind::Gru), &data, &flipped, &cfg(15, 0)).unwrap();
        assert_eq!(log.epochs.len(), 15);
        assert!(!log.stopped_early);
    }

    #[test]
    fn worsening_validation_stops_after_patience() {
        let data = separable(64, false);
        let flipped = separable(64, true);
        let (_, log) = train(tiny(ModelKind::Gru), &data, &flipped, &cfg(100, 4)).unwrap();
        let val: Vec<f64> = log.epochs.iter().map(|e| e.val_loss).collect();
        assert!(val.windows(2).all(|w| w[1] > w[0]), "{val:?}");
        assert_eq!(log.epochs.len(), 1 + 4);
        assert_eq!(log.best_epoch, 1);
        assert!(log.stopped_early);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(48, false);
        let a = train(tiny(ModelKind::GruAttention), &data, &data, &cfg(5, 0)).unwrap();
        let b = train(tiny(ModelKind::GruAttention), &data, &data, &cfg(5, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_split_is_rejected() {
        let data = separable(8, false);
        assert!(matches!(
            train(tiny(ModelKind::Gru), &data, &[], &cfg(1, 0)),
            Err(Error::Data(_))
        ));
    }
}
