//! AdamW with cosine annealing, global-norm clipping and early stopping on
//! validation AUC.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gradient_weighted, predict_batch, FusionInput, ModelParams, Standardizer, Variant};
use crate::cohort::derive_seed;
use crate::eval::auc;
use crate::reasoning::KbStamp;
use crate::{Error, Result};

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;
pub const CLIP_NORM: f64 = 1.0;
const SHUFFLE_STREAM: u64 = 0x5_4F1E;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_width: usize,
    /// Loss weight of positive examples; 1 means plain BCE.
    pub pos_weight: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 1e-4,
            weight_decay: 1e-5,
            max_epochs: 100,
            patience: 10,
            batch_size: 64,
            seed: 0,
            hidden_width: super::DEFAULT_HIDDEN_WIDTH,
            pos_weight: 1.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.weight_decay >= 0.0
            && self.max_epochs > 0
            && self.patience > 0
            && self.batch_size > 0
            && self.pos_weight > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Learning rate at the start of `epoch`, annealed from `base` to 0 at
/// `max_epochs`.
pub fn cosine_lr(base: f64, epoch: usize, max_epochs: usize) -> f64 {
    let t = (epoch.min(max_epochs) as f64) / max_epochs as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Rescales `grads` in place so their L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Adam moments plus the decoupled weight-decay mask.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    decay: Vec<bool>,
}

impl AdamW {
    /// Weight decay applies to weight matrices, not biases.
    pub fn new(params: &ModelParams) -> Self {
        let mut decay = Vec::with_capacity(params.parameter_count());
        for l in &params.layers {
            decay.extend(std::iter::repeat_n(true, l.weights.len()));
            decay.extend(std::iter::repeat_n(false, l.biases.len()));
        }
        let n = decay.len();
        AdamW { m: vec![0.0; n], v: vec![0.0; n], t: 0, decay }
    }

    pub fn step(&mut self, theta: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        let (b1, b2) = ADAM_BETAS;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
            let decay = if self.decay[i] { weight_decay * theta[i] } else { 0.0 };
            theta[i] -= lr * (update + decay);
        }
    }
}

/// Trains a head for `variant` and returns the snapshot with the best
/// validation AUC.
pub fn train(
    train_set: &[FusionInput],
    val_set: &[FusionInput],
    variant: Variant,
    kb: &KbStamp,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (Some(first), false) = (train_set.first(), val_set.is_empty()) else {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    };
    let dims = first.block_dims();
    if let Some(bad) = train_set.iter().chain(val_set).find(|x| x.block_dims() != dims) {
        return Err(Error::Dimension {
            expected: dims.iter().sum(),
            actual: bad.block_dims().iter().sum(),
        });
    }
    let val_labels: Vec<u8> = val_set.iter().map(|x| x.label).collect();
    let val_pos = val_labels.iter().filter(|&&l| l == 1).count();
    if val_pos == 0 || val_pos == val_labels.len() {
        return Err(Error::SingleClass("validation set has one class".into()));
    }

    let mut params = ModelParams::init(variant, kb, dims, config.hidden_width, config.seed);
    let rows: Vec<Vec<f64>> = train_set.iter().map(|x| x.concat()).collect();
    params.standardizer = Standardizer::fit(&rows);

    let mut opt = AdamW::new(&params);
    let mut theta = params.flat();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SHUFFLE_STREAM, 0));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 0..config.max_epochs {
        let lr = cosine_lr(config.lr, epoch, config.max_epochs);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<FusionInput> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            params.set_flat(&theta);
            let (mut g, loss) = gradient_weighted(&params, &batch, config.pos_weight)?;
            if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
                log::error!("non-finite loss at epoch {epoch}; last lr {lr}");
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            clip_global_norm(&mut g, CLIP_NORM);
            opt.step(&mut theta, &g, lr, config.weight_decay);
        }
        params.set_flat(&theta);
        let val_auc = auc(&predict_batch(&params, val_set)?, &val_labels)?;
        let train_loss = loss_sum / train_set.len() as f64;
        log::debug!("epoch {epoch}: lr {lr:.3e} loss {train_loss:.5} val auc {val_auc:.4}");
        log.push(EpochLog { epoch, lr, train_loss, val_auc });
        if best.as_ref().is_none_or(|(a, _, _)| val_auc > *a) {
            best = Some((val_auc, epoch, params.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if epoch - best_epoch >= config.patience {
            break;
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch runs");
    Ok(TrainOutcome { params, log, best_epoch })
}
