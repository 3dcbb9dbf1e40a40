//! Mini-batch training with weighted sampling and early stopping.

use std::io::Write;

use ndarray::Axis;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::Tensor;
use crate::loss;
use crate::model::Model;
use crate::optim::{Adam, AdamConfig};
use crate::{NnError, Result};

/// Inputs `(n, steps, features)`, targets `(n, horizon, 2)` and per-sample
/// sampling weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub weights: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Tensor, weights: Vec<f64>) -> Result<Self> {
        let n = inputs.dim().0;
        if targets.dim().0 != n || weights.len() != n {
            return Err(NnError::Shape(format!(
                "{n} inputs, {} targets, {} weights",
                targets.dim().0,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(NnError::Config(
                "sample weights must be finite and non-negative".into(),
            ));
        }
        Ok(Dataset {
            inputs,
            targets,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> (Tensor, Tensor) {
        (
            self.inputs.select(Axis(0), idx),
            self.targets.select(Axis(0), idx),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean mini-batch loss including the L2 term.
    pub train_loss: f64,
    /// Unregularised MAE loss on the validation set.
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,lr")?;
        for e in &self.history {
            writeln!(w, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr)?;
        }
        Ok(())
    }
}

/// Mean unregularised loss over `data` in inference mode.
pub fn evaluate(model: &mut Model, data: &Dataset, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(NnError::Config("empty evaluation set".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = data.select(chunk);
        let pred = model.forward(&x, false)?;
        total += loss::mae(&pred, &y)?.0 * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

fn snapshot(model: &Model) -> Vec<Vec<f64>> {
    let mut s: Vec<Vec<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
    s.extend(model.buffers().into_iter().map(|(_, b)| b.clone()));
    s
}

fn restore(model: &mut Model, snap: &[Vec<f64>]) {
    let n = model.params().len();
    for (p, v) in model.params_mut().into_iter().zip(snap) {
        p.value.clone_from(v);
    }
    for (b, v) in model.buffers_mut().into_iter().zip(&snap[n..]) {
        b.clone_from(v);
    }
}

/// Trains `model` in place and leaves it at the epoch with the lowest
/// validation loss. Each epoch draws `train.len()` samples with replacement,
/// with probability proportional to their weights.
pub fn train(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if train.is_empty() || val.is_empty() {
        return Err(NnError::Config(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(NnError::Config(
            "batch size and epoch count must be positive".into(),
        ));
    }
    let sampler = WeightedIndex::new(&train.weights)
        .map_err(|e| NnError::Config(format!("sample weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam);
    let l2 = model.config.l2;
    let mut history = Vec::new();
    let mut best = (0, f64::INFINITY, snapshot(model));
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        let order: Vec<usize> = (0..train.len()).map(|_| sampler.sample(&mut rng)).collect();
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = train.select(chunk);
            model.zero_grad();
            let pred = model.forward(&x, true)?;
            let (data_loss, grad) = loss::mae(&pred, &y)?;
            let total = data_loss + loss::l2_penalty(model.params(), l2);
            if !total.is_finite() {
                return Err(NnError::Diverged { epoch });
            }
            model.backward(&grad);
            loss::add_l2_grad(model.params_mut(), l2);
            if model
                .params()
                .iter()
                .any(|p| p.grad.iter().any(|g| !g.is_finite()))
            {
                return Err(NnError::NonFinite("gradient"));
            }
            adam.step(&mut model.params_mut());
            sum += total * chunk.len() as f64;
        }
        let val_loss = evaluate(model, val, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(NnError::Diverged { epoch });
        }
        history.push(EpochLog {
            epoch,
            train_loss: sum / train.len() as f64,
            val_loss,
            lr: config.adam.lr,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, snapshot(model));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            break;
        }
    }
    restore(model, &best.2);
    Ok(TrainReport {
        history,
        best_epoch: best.0,
        best_val_loss: best.1,
    })
}
