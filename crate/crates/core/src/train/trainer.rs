//! Minibatch training with periodic validation and best-snapshot selection.

use std::io::Write;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{poly_lr, AdamConfig, AdamState};
use crate::data::PatchSet;
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossWeights};
use crate::model::{backward, forward, Mode, ParameterStore, SpnetConfig};
use crate::pyramid::{build_residual_pyramid, ResidualPyramid};

/// Random stream used for the fixed validation batches; training epochs use
/// streams `1 + epoch`.
const VAL_STREAM: u64 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: SpnetConfig,
    pub loss: LossWeights,
    pub adam: AdamSettings,
    pub eta0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Overrides `epochs x steps-per-epoch` when set.
    pub iterations: Option<usize>,
    pub val_every: usize,
    pub val_batches: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

impl From<AdamSettings> for AdamConfig {
    fn from(a: AdamSettings) -> Self {
        AdamConfig {
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = SpnetConfig::default();
        Self {
            loss: LossWeights::pyramid(model.pyramid_levels),
            model,
            adam: AdamSettings::default(),
            eta0: 1e-3,
            epochs: 20,
            batch_size: 16,
            iterations: None,
            val_every: 10,
            val_batches: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-size network and the published batch size.
    pub fn full_scale() -> Self {
        Self {
            model: SpnetConfig::full_scale(),
            batch_size: 256,
            ..Self::default()
        }
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> usize {
        (train_len / self.batch_size.max(1)).max(1)
    }

    /// Total iteration budget `T`.
    pub fn total_iterations(&self, train_len: usize) -> usize {
        self.iterations
            .unwrap_or(self.epochs * self.steps_per_epoch(train_len))
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.loss.levels() != self.model.pyramid_levels {
            return Err(Error::InvalidArgument(format!(
                "{} loss levels for a network with {} side outputs",
                self.loss.levels(),
                self.model.pyramid_levels
            )));
        }
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {}",
                self.eta0
            )));
        }
        if self.batch_size == 0 || self.val_every == 0 || self.val_batches == 0 {
            return Err(Error::InvalidArgument(
                "batch size, validation interval and validation batches must be positive".into(),
            ));
        }
        if self.iterations == Some(0) || (self.iterations.is_none() && self.epochs == 0) {
            return Err(Error::InvalidArgument("no training iterations".into()));
        }
        Ok(())
    }
}

/// One validation record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub lr: f64,
    /// Mean training loss over the steps since the previous record.
    pub train_loss: f64,
    pub val_loss: f64,
    pub is_best: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub iteration: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation loss; the last finite iterate
    /// when training diverged before the first validation.
    pub best: ParameterStore<f32>,
    pub best_iteration: usize,
    pub best_val_loss: f64,
    /// Final iterate, or the last finite one on divergence.
    pub last: ParameterStore<f32>,
    pub log: Vec<LogRecord>,
    pub diverged: Option<Divergence>,
}

struct Prepared<'a> {
    set: &'a PatchSet,
    pyramids: Vec<ResidualPyramid>,
}

impl<'a> Prepared<'a> {
    fn new(set: &'a PatchSet, levels: usize) -> Result<Self> {
        let pyramids = set
            .patches
            .iter()
            .map(|p| build_residual_pyramid(&p.label, levels))
            .collect::<Result<_>>()?;
        Ok(Self { set, pyramids })
    }

    fn loss(
        &self,
        params: &ParameterStore<f32>,
        indices: &[usize],
        weights: &LossWeights,
        mode: Mode,
    ) -> Result<(
        f64,
        crate::model::ForwardPass<f32>,
        Vec<crate::tensor::Tensor<f32>>,
    )> {
        let (x, _) = self.set.batch(indices);
        let pass = forward(params, &x, mode)?;
        let refs: Vec<_> = indices.iter().map(|&i| &self.pyramids[i]).collect();
        let l = total_loss(&pass.outputs, &refs, weights)?;
        Ok((l.total, pass, l.grads))
    }
}

/// Trains a freshly initialized network.
pub fn train(
    train_set: &PatchSet,
    val_set: &PatchSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let params = ParameterStore::init(&config.model, config.seed)?;
    train_from(params, train_set, val_set, config)
}

/// Trains starting from `params`, whose configuration takes precedence over
/// `config.model`.
pub fn train_from(
    mut params: ParameterStore<f32>,
    train_set: &PatchSet,
    val_set: &PatchSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let config = TrainConfig {
        model: params.config().clone(),
        ..config.clone()
    };
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Dataset(format!(
            "training needs non-empty splits, got {} train and {} validation patches",
            train_set.len(),
            val_set.len()
        )));
    }
    let levels = config.model.pyramid_levels;
    let train_data = Prepared::new(train_set, levels)?;
    let val_data = Prepared::new(val_set, levels)?;
    let batch = config.batch_size.min(train_set.len());
    let steps_per_epoch = (train_set.len() / batch).max(1);
    let total = config.total_iterations(train_set.len());

    let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed);
    val_rng.set_stream(VAL_STREAM);
    let val_batch = config.batch_size.min(val_set.len());
    let val_batches: Vec<Vec<usize>> = (0..config.val_batches)
        .map(|_| {
            let mut idx: Vec<usize> = (0..val_set.len()).collect();
            idx.shuffle(&mut val_rng);
            idx.truncate(val_batch);
            idx
        })
        .collect();

    let mut adam = AdamState::new(&params, config.adam.into());
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::new();
    let mut best: Option<(ParameterStore<f32>, usize, f64)> = None;
    let mut pending = (0.0, 0usize);
    let mut diverged = None;

    for step in 0..total {
        let (epoch, slot) = (step / steps_per_epoch, step % steps_per_epoch);
        if slot == 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(1 + epoch as u64);
            order = (0..train_set.len()).collect();
            order.shuffle(&mut rng);
        }
        let indices = &order[slot * batch..(slot + 1) * batch];
        let lr = poly_lr(step, total, config.eta0)?;
        let iteration = step + 1;

        let (loss, pass, grads) = train_data.loss(&params, indices, &config.loss, Mode::Train)?;
        if !loss.is_finite() {
            diverged = Some(Divergence {
                iteration,
                reason: format!("training loss {loss}"),
            });
            break;
        }
        let g = backward(&params, &pass.cache, &grads)?;
        match adam.step(&mut params, &g, lr) {
            Ok(()) => {}
            Err(Error::NonFinite(what)) => {
                diverged = Some(Divergence {
                    iteration,
                    reason: format!("non-finite {what}"),
                });
                break;
            }
            Err(e) => return Err(e),
        }
        for u in &pass.bn_updates {
            params.apply_bn_update(&u.prefix, &u.stats);
        }
        pending.0 += loss;
        pending.1 += 1;

        if iteration % config.val_every == 0 || iteration == total {
            let mut val_loss = 0.0;
            for b in &val_batches {
                val_loss += val_data.loss(&params, b, &config.loss, Mode::Eval)?.0;
            }
            val_loss /= val_batches.len() as f64;
            if !val_loss.is_finite() {
                diverged = Some(Divergence {
                    iteration,
                    reason: format!("validation loss {val_loss}"),
                });
                break;
            }
            let is_best = best.as_ref().is_none_or(|b| val_loss < b.2);
            if is_best {
                best = Some((params.clone(), iteration, val_loss));
            }
            let record = LogRecord {
                iter: iteration,
                lr,
                train_loss: pending.0 / pending.1 as f64,
                val_loss,
                is_best,
            };
            info!(
                "iter {iteration}/{total} lr {lr:.3e} train {:.5} val {val_loss:.5}{}",
                record.train_loss,
                if is_best { " *" } else { "" }
            );
            log.push(record);
            pending = (0.0, 0);
        }
    }
    if let Some(d) = &diverged {
        log::warn!(
            "training diverged at iteration {}: {}",
            d.iteration,
            d.reason
        );
    }
    let (best, best_iteration, best_val_loss) =
        best.unwrap_or_else(|| (params.clone(), 0, f64::INFINITY));
    Ok(TrainOutcome {
        best,
        best_iteration,
        best_val_loss,
        last: params,
        log,
        diverged,
    })
}

/// Writes the log as CSV with header `iter,lr,train_loss,val_loss,is_best`.
pub fn write_log_csv<W: Write>(log: &[LogRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in log {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Dice coefficient of `p > 0.5` predictions against the patch labels,
/// pooled over the whole set.
pub fn patch_dice(params: &ParameterStore<f32>, set: &PatchSet, batch: usize) -> Result<f64> {
    let (mut inter, mut total) = (0usize, 0usize);
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(batch.max(1)) {
        let (x, labels) = set.batch(chunk);
        let pass = forward(params, &x, Mode::Eval)?;
        for (b, label) in labels.iter().enumerate() {
            for (&p, &g) in pass.outputs[0].plane(b, 0).iter().zip(label.data()) {
                let p = p > 0.5;
                let g = g == 1;
                inter += usize::from(p && g);
                total += usize::from(p) + usize::from(g);
            }
        }
    }
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}
