//! Training loop: seeded shuffling, fixed-chunk parallel gradients, ADAM, and
//! early stopping on the validation loss.
//!
//! The loop stops when the validation loss has increased for `patience`
//! consecutive epochs (or at `max_epochs`) and returns the parameters of the
//! epoch with the lowest validation loss, the initial parameters included, so
//! fine-tuning can never leave the checkpoint worse than its starting point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::adam::{adam_step, AdamHyper, AdamState};
use super::model::{backward, forward, loss, Example, Grad};
use super::{Params, Real};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Examples per parallel gradient chunk. Chunk boundaries are fixed by index,
/// so the reduction order (and therefore the result) does not depend on the
/// thread schedule.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 30,
            patience: 5,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs > 0 && self.patience >= self.max_epochs {
            return Err(Error::invalid(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        Ok(())
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    /// Parameters of the epoch with minimum validation loss (epoch 0 = input).
    pub params: Params<T>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
}

/// Mean loss over a set, evaluated in fixed chunk order.
pub fn evaluate_loss<T: Real>(params: &Params<T>, examples: &[Example<T>]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty example set"));
    }
    let chunk_losses: Vec<Result<f64>> = examples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc = 0.0;
            for ex in chunk {
                acc += loss(forward(params, ex)?, ex.label).as_f64();
            }
            Ok(acc)
        })
        .collect();
    let mut total = 0.0;
    for c in chunk_losses {
        total += c?;
    }
    Ok(total / examples.len() as f64)
}

/// Mean batch loss and gradient over fixed-order parallel chunks.
fn batch_gradient<T: Real>(params: &Params<T>, batch: &[Example<T>]) -> Result<(f64, Grad<T>)> {
    let results: Vec<Result<(T, Grad<T>, usize)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| backward(params, chunk).map(|(l, g)| (l, g, chunk.len())))
        .collect();
    let mut grad = Grad::zeros(&params.cfg)?;
    let mut total_loss = 0.0;
    let n = batch.len() as f64;
    for r in results {
        let (chunk_loss, mut chunk_grad, chunk_len) = r?;
        let w = chunk_len as f64 / n;
        chunk_grad.scale(T::from_f64(w));
        grad.add(&chunk_grad);
        total_loss += chunk_loss.as_f64() * w;
    }
    Ok((total_loss, grad))
}

/// Run the training regime and return the best-validation checkpoint.
pub fn train_loop<T: Real>(
    initial: Params<T>,
    train: &[Example<T>],
    val: &[Example<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if val.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }

    let initial_train_loss = evaluate_loss(&initial, train)?;
    let initial_val_loss = evaluate_loss(&initial, val)?;
    let mut history =
        vec![EpochStats { epoch: 0, train_loss: initial_train_loss, val_loss: initial_val_loss }];

    let mut params = initial;
    let mut best_params = params.clone();
    let mut best_val = initial_val_loss;
    let mut best_epoch = 0usize;
    // the increase chain compares consecutive trained epochs; the epoch-0
    // baseline only participates in checkpoint selection
    let mut prev_val: Option<f64> = None;
    let mut consecutive_increases = 0usize;
    let mut stopped_early = false;
    let mut adam = AdamState::new(&params.cfg);
    let hyper = cfg.hyper();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        use rand::seq::SliceRandom;
        let mut rng = rng_for(cfg.seed, "train.shuffle", epoch as u64);
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Example<T>> =
                batch_idx.iter().map(|i| train[*i].clone()).collect();
            let (batch_loss, grad) = batch_gradient(&params, &batch)?;
            params = adam_step(&params, &grad, &mut adam, &hyper)?;
            epoch_loss += batch_loss * batch.len() as f64;
        }
        epoch_loss /= train.len() as f64;

        let val_loss = evaluate_loss(&params, val)?;
        history.push(EpochStats { epoch, train_loss: epoch_loss, val_loss });

        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            best_epoch = epoch;
        }
        if let Some(prev) = prev_val {
            if val_loss > prev {
                consecutive_increases += 1;
            } else {
                consecutive_increases = 0;
            }
        }
        prev_val = Some(val_loss);
        if consecutive_increases >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        best_val_loss: best_val,
        history,
        stopped_early,
    })
}

/// Training history as CSV (epoch, train_loss, val_loss).
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    crate::io::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for h in history {
        w.write_record([
            &format!("{}", h.epoch),
            &format!("{}", h.train_loss),
            &format!("{}", h.val_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}
