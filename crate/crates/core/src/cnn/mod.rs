//! From-scratch two-head tactile classifier: layers, exact backpropagation,
//! training, evaluation and checkpoints. 64-bit throughout.

mod checkpoint;
mod layers;
mod loss;
mod model;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, write_checkpoint};
pub use layers::{BatchNorm, Conv2d, Linear, BN_EPS, BN_MOMENTUM};
pub use loss::{cross_entropy, loss, softmax_rows, two_head_loss};
pub use model::{
    argmax, frames_to_tensor, ForwardCache, Gradients, Head, Logits, Mode, ModelConfig,
    ModelParams, ANGLE_CLASSES, POSITION_CLASSES,
};
pub use tensor::Tensor;
pub use train::{
    evaluate, train, train_with_progress, validation_metrics, EpochStats, Evaluation,
    PlateauScheduler, TrainConfig, TrainHistory,
};

use crate::error::Result;
use crate::sensor::GripSample;

/// Loss and exact gradients for a labeled batch. Uses training-mode
/// batch-norm statistics without touching the running estimates.
pub fn loss_and_gradients(p: &ModelParams, samples: &[&GripSample]) -> Result<(f64, Gradients)> {
    let frames: Vec<_> = samples.iter().map(|s| &s.frame).collect();
    let (la, lp): (Vec<usize>, Vec<usize>) =
        samples.iter().map(|s| (s.angle.index(), s.position.index())).unzip();
    let (logits, cache) = p.forward_train_pure(&frames_to_tensor(&frames))?;
    let (l, ga, gp) = two_head_loss(&logits, &la, &lp)?;
    Ok((l, p.backward(&cache, &ga, &gp)))
}
