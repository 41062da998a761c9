//! Minibatch SGD over normal clips.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderParams;
use crate::dataset::shuffled_batches;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Set per run (CLI flag or derived stage seed), never read from config files.
    #[serde(skip)]
    pub seed: u64,
    /// Rescale the batch gradient to at most this global L2 norm.
    pub grad_clip: Option<f64>,
    /// Stop after this many epochs without validation improvement and keep
    /// the best parameters. Needs validation clips.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            learning_rate: 0.01,
            batch_size: 4,
            epochs: 50,
            seed: 0,
            grad_clip: None,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "invalid learning rate {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!(
                    "grad clip must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean clip loss over each epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
    /// Mean validation clip loss after each epoch (empty without validation clips).
    pub val_losses: Vec<f64>,
    /// Epoch (0-based) whose parameters were returned when early stopping ran.
    pub best_epoch: Option<usize>,
}

/// Mean clip loss and mean gradient over a batch.
pub fn batch_gradient(
    params: &AutoencoderParams,
    batch: &[&FeatureSequence],
) -> Result<(f64, AutoencoderParams)> {
    let mut total = AutoencoderParams::zeros(params.feature_dim(), params.hidden());
    let mut loss = 0.0;
    for clip in batch {
        let (l, g) = params.loss_and_gradients(clip.view())?;
        loss += l;
        total.scaled_add(1.0, &g);
    }
    let k = batch.len() as f64;
    total.scale(1.0 / k);
    Ok((loss / k, total))
}

/// One SGD update: `params -= lr * grad`, after optional norm clipping.
pub fn sgd_step(
    params: &mut AutoencoderParams,
    grad: &mut AutoencoderParams,
    lr: f64,
    grad_clip: Option<f64>,
) {
    if let Some(max_norm) = grad_clip {
        let norm = grad.l2_norm();
        if norm > max_norm {
            grad.scale(max_norm / norm);
        }
    }
    params.scaled_add(-lr, grad);
}

pub fn mean_loss(params: &AutoencoderParams, clips: &[FeatureSequence]) -> Result<f64> {
    let mut total = 0.0;
    for c in clips {
        total += params.clip_loss_of(c.view())?;
    }
    Ok(total / clips.len().max(1) as f64)
}

/// Initializes parameters from `cfg.seed` and trains on `clips`.
pub fn train(
    clips: &[FeatureSequence],
    val: &[FeatureSequence],
    cfg: &TrainConfig,
) -> Result<(AutoencoderParams, TrainReport)> {
    cfg.validate()?;
    let dim = clips.first().ok_or(Error::NoNormalClips)?.dim();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = AutoencoderParams::init(dim, cfg.hidden, &mut init_rng);
    train_from(params, clips, val, cfg)
}

/// Continues training from `params`. Batches are reshuffled each epoch from a
/// stream seeded by `cfg.seed`, so identical inputs give identical weights.
pub fn train_from(
    mut params: AutoencoderParams,
    clips: &[FeatureSequence],
    val: &[FeatureSequence],
    cfg: &TrainConfig,
) -> Result<(AutoencoderParams, TrainReport)> {
    cfg.validate()?;
    params.check_shapes()?;
    if clips.is_empty() {
        return Err(Error::NoNormalClips);
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let early_stop = cfg.patience.filter(|_| !val.is_empty());
    let mut best: Option<(f64, usize, AutoencoderParams)> = None;
    let mut report = TrainReport::default();
    let refs: Vec<&FeatureSequence> = clips.iter().collect();

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for batch in shuffled_batches(&refs, cfg.batch_size, &mut shuffle_rng) {
            let (loss, mut grad) = batch_gradient(&params, &batch)?;
            epoch_loss += loss * batch.len() as f64;
            sgd_step(&mut params, &mut grad, cfg.learning_rate, cfg.grad_clip);
        }
        epoch_loss /= clips.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::DivergenceDetected {
                epoch,
                loss: epoch_loss,
            });
        }
        report.epoch_losses.push(epoch_loss);
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");

        if !val.is_empty() {
            let v = mean_loss(&params, val)?;
            report.val_losses.push(v);
            if let Some(patience) = early_stop {
                match &best {
                    Some((b, at, _)) if v >= *b => {
                        if epoch - at >= patience {
                            break;
                        }
                    }
                    _ => best = Some((v, epoch, params.clone())),
                }
            }
        }
    }

    if let Some((_, epoch, p)) = best {
        report.best_epoch = Some(epoch);
        params = p;
    }
    Ok((params, report))
}
