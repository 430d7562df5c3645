//! Minibatch SGD with momentum and plateau-based learning-rate reduction.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::two_head_loss;
use super::model::{argmax, frames_to_tensor, ModelParams, ANGLE_CLASSES, POSITION_CLASSES};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::sensor::{Dataset, GripSample};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    /// Epochs without validation improvement before the rate is cut.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            base_lr: 0.01,
            momentum: 0.9,
            plateau_patience: 5,
            plateau_factor: 0.1,
            min_lr: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config(format!(
                "plateau_factor must be in (0, 1), got {}",
                self.plateau_factor
            )));
        }
        if !(self.base_lr > 0.0 && self.min_lr >= 0.0 && self.min_lr <= self.base_lr) {
            return Err(Error::Config("need 0 <= min_lr <= base_lr and base_lr > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_angle_accuracy: f64,
    pub val_pos_accuracy: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_angle_acc,val_pos_acc,lr\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.val_angle_accuracy, e.val_pos_accuracy, e.lr
            );
        }
        s
    }
}

/// Mirrors the usual reduce-on-plateau rule with a relative threshold.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    best: f64,
    bad_epochs: usize,
    patience: usize,
    factor: f64,
    min_lr: f64,
}

const PLATEAU_THRESHOLD: f64 = 1e-4;

impl PlateauScheduler {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.base_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            patience: cfg.plateau_patience,
            factor: cfg.plateau_factor,
            min_lr: cfg.min_lr,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, val_loss: f64) {
        if val_loss < self.best * (1.0 - PLATEAU_THRESHOLD) {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
    }
}

fn labels(samples: &[&GripSample]) -> (Vec<usize>, Vec<usize>) {
    samples.iter().map(|s| (s.angle.index(), s.position.index())).unzip()
}

/// Mean loss and accuracies in evaluation mode.
pub fn validation_metrics(p: &ModelParams, d: &Dataset, batch: usize) -> Result<(f64, f64, f64)> {
    let mut total = 0.0;
    let (mut ok_a, mut ok_p) = (0usize, 0usize);
    for chunk in d.samples.chunks(batch.max(1)) {
        let refs: Vec<&GripSample> = chunk.iter().collect();
        let frames: Vec<_> = refs.iter().map(|s| &s.frame).collect();
        let (la, lp) = labels(&refs);
        let logits = p.forward_eval(&frames_to_tensor(&frames))?;
        let (l, _, _) = two_head_loss(&logits, &la, &lp)?;
        total += l * chunk.len() as f64;
        for i in 0..chunk.len() {
            ok_a += (argmax(logits.angle.row(i)) == la[i]) as usize;
            ok_p += (argmax(logits.position.row(i)) == lp[i]) as usize;
        }
    }
    let n = d.len() as f64;
    Ok((total / n, ok_a as f64 / n, ok_p as f64 / n))
}

pub fn train(
    init: ModelParams,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    train_with_progress(init, train_set, val_set, cfg, |_| {})
}

/// Same as [`train`], calling `on_epoch` after every completed epoch.
pub fn train_with_progress(
    init: ModelParams,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut params = init;
    let mut velocity: Vec<Vec<f64>> =
        params.trainable().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    let mut sched = PlateauScheduler::new(cfg);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let lr = sched.lr();
        let mut loss_sum = 0.0;

        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&GripSample> = idx.iter().map(|&i| &train_set.samples[i]).collect();
            let frames: Vec<_> = batch.iter().map(|s| &s.frame).collect();
            let (la, lp) = labels(&batch);
            let (logits, cache) = params.forward_train(&frames_to_tensor(&frames))?;
            let (loss, ga, gp) = two_head_loss(&logits, &la, &lp)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss * batch.len() as f64;
            let grads = params.backward(&cache, &ga, &gp);
            for ((t, v), g) in params.trainable_mut().into_iter().zip(&mut velocity).zip(&grads.tensors) {
                for ((w, vel), &gi) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                    *vel = cfg.momentum * *vel + gi;
                    *w -= lr * *vel;
                }
            }
        }

        let (val_loss, acc_a, acc_p) = validation_metrics(&params, val_set, 256)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        sched.step(val_loss);
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_angle_accuracy: acc_a,
            val_pos_accuracy: acc_p,
            lr,
        };
        log::debug!("epoch {epoch}: {stats:?}");
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok((params, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub angle_accuracy: f64,
    pub pos_accuracy: f64,
    pub angle_confusion: ConfusionMatrix,
    pub pos_confusion: ConfusionMatrix,
}

/// Argmax predictions on both heads, tallied into confusion matrices.
pub fn evaluate(p: &ModelParams, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let mut angle_confusion = ConfusionMatrix::new(ANGLE_CLASSES);
    let mut pos_confusion = ConfusionMatrix::new(POSITION_CLASSES);
    for chunk in test.samples.chunks(256) {
        let frames: Vec<_> = chunk.iter().map(|s| &s.frame).collect();
        let logits = p.forward_eval(&frames_to_tensor(&frames))?;
        for (i, s) in chunk.iter().enumerate() {
            angle_confusion.record(s.angle.index(), argmax(logits.angle.row(i)));
            pos_confusion.record(s.position.index(), argmax(logits.position.row(i)));
        }
    }
    Ok(Evaluation {
        angle_accuracy: angle_confusion.accuracy(),
        pos_accuracy: pos_confusion.accuracy(),
        angle_confusion,
        pos_confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig { plateau_factor: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn scheduler_cuts_after_patience_and_floors() {
        let cfg = TrainConfig { base_lr: 0.1, plateau_patience: 2, plateau_factor: 0.1, min_lr: 0.005, ..Default::default() };
        let mut s = PlateauScheduler::new(&cfg);
        s.step(1.0);
        assert_eq!(s.lr(), 0.1);
        s.step(1.0);
        assert_eq!(s.lr(), 0.1);
        s.step(1.0);
        assert!((s.lr() - 0.01).abs() < 1e-15);
        s.step(0.5);
        s.step(0.6);
        s.step(0.7);
        assert_eq!(s.lr(), 0.005);
        for _ in 0..10 {
            s.step(2.0);
        }
        assert_eq!(s.lr(), 0.005);
    }
}
