//! Shared minibatch loop: log-linear learning-rate decay, seeded shuffling,
//! early stopping on validation loss with best-weight restoration.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, rng_from};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 300,
            patience: 20,
            batch_size: 50,
            lr_start: 1e-4,
            lr_end: 1e-5,
            seed: 0,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return Err(Error::config("learning_rate", "start and end must be positive"));
        }
        Ok(())
    }

    /// Log-linear interpolation from `lr_start` (first epoch) to `lr_end` (last epoch).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

/// Weighted loss terms; `total` is always their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub reconstruction: f64,
    pub kpi: f64,
    pub kl: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.kpi + self.kl
    }

    pub(crate) fn scaled_add(&mut self, other: &LossTerms, w: f64) {
        self.reconstruction += w * other.reconstruction;
        self.kpi += w * other.kpi;
        self.kl += w * other.kl;
    }

    pub(crate) fn check_finite(&self, epoch: usize) -> Result<()> {
        for (name, v) in [
            ("reconstruction", self.reconstruction),
            ("kpi", self.kpi),
            ("kl", self.kl),
        ] {
            if !v.is_finite() {
                return Err(Error::NanLoss {
                    term: name.to_string(),
                    epoch,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: LossTerms,
    pub val: LossTerms,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
    pub stopped_early: bool,
}

impl TrainingHistory {
    /// CSV with one row per epoch run.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "epoch,learning_rate,train_total,train_reconstruction,train_kpi,train_kl,val_total,val_reconstruction,val_kpi,val_kl\n",
        );
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.epoch,
                r.learning_rate,
                r.train.total(),
                r.train.reconstruction,
                r.train.kpi,
                r.train.kl,
                r.val.total(),
                r.val.reconstruction,
                r.val.kpi,
                r.val.kl
            ));
        }
        out
    }
}

/// A model plus its training data, driven by [`fit`].
pub(crate) trait Trainable {
    type Snapshot;

    fn train_len(&self) -> usize;

    /// One optimizer step on the given sample indices; returns the batch-mean loss terms.
    fn train_batch(&mut self, indices: &[usize], lr: f64, noise: &mut ChaCha8Rng) -> Result<LossTerms>;

    fn validation_loss(&self) -> Result<LossTerms>;

    fn snapshot(&self) -> Self::Snapshot;

    fn restore(&mut self, snapshot: Self::Snapshot);
}

pub(crate) fn fit<T: Trainable>(model: &mut T, settings: &TrainSettings) -> Result<TrainingHistory> {
    settings.validate()?;
    let n = model.train_len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut noise = rng_from(derive_seed(settings.seed, 0x6e6f_6973_65));
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, T::Snapshot)> = None;
    let mut since_best = 0;

    for epoch in 0..settings.epochs {
        let lr = settings.learning_rate(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from(derive_seed(settings.seed, epoch as u64 + 1)));
        let mut train = LossTerms::default();
        for chunk in order.chunks(settings.batch_size) {
            let terms = model.train_batch(chunk, lr, &mut noise)?;
            terms.check_finite(epoch)?;
            train.scaled_add(&terms, chunk.len() as f64 / n as f64);
        }
        let val = model.validation_loss()?;
        val.check_finite(epoch)?;
        history.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train,
            val,
        });
        log::debug!(
            "epoch {epoch}: train {:.6} (rec {:.6} kpi {:.6} kl {:.6}) val {:.6}",
            train.total(),
            train.reconstruction,
            train.kpi,
            train.kl,
            val.total()
        );

        let improved = best.as_ref().map_or(true, |(b, _)| val.total() < *b);
        if improved {
            best = Some((val.total(), model.snapshot()));
            history.best_epoch = Some(epoch);
            history.best_val = Some(val.total());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= settings.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, snap)) = best {
        model.restore(snap);
    }
    Ok(history)
}
