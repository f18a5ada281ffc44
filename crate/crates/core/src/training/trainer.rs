//! Epoch/batch training loop with evaluation, checkpointing and resume.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{record_objective, LossConfig};
use super::optim::{adadelta_update, AdadeltaState};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{load_checkpoint, save_checkpoint, Model};
use crate::tensor::Tensor;

pub const LOG_HEADER: &str = "epoch,mean_loss,global_acc,mean_iou,wall_seconds";

fn default_batch() -> usize {
    5
}

fn default_eval_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Directory receiving `log.csv`, `best.model` and `last.model`.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Evaluate every this many epochs; the final epoch is always evaluated.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch(),
            max_epochs: 100,
            seed: 0,
            checkpoint_dir: None,
            eval_every: default_eval_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the training log. Metrics are `NaN` on epochs without evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub global_acc: f64,
    pub mean_iou: f64,
    pub wall_seconds: f64,
}

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.3}",
            self.epoch, self.mean_loss, self.global_acc, self.mean_iou, self.wall_seconds
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub class_weights: Option<Vec<f64>>,
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn header(&self) -> String {
        match &self.class_weights {
            Some(w) => {
                let w: Vec<String> = w.iter().map(|v| format!("{v:.6}")).collect();
                format!("# class_weights={}\n{LOG_HEADER}\n", w.join(" "))
            }
            None => format!("{LOG_HEADER}\n"),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        for r in &self.records {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model<f32>,
    pub optimizer: AdadeltaState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    pub best_iou: Option<f64>,
}

impl TrainState {
    pub fn new(model: Model<f32>) -> Self {
        let optimizer = AdadeltaState::new(&model);
        TrainState {
            model,
            optimizer,
            epoch: 0,
            best_iou: None,
        }
    }

    /// Restores model, optimizer accumulators and epoch counter from a
    /// checkpoint written by [`train`].
    pub fn resume(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ck = load_checkpoint::<f32>(path)?;
        let optimizer = ck.optimizer.ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            reason: "checkpoint holds no optimizer state; cannot resume".into(),
        })?;
        let epoch = ck.meta.get("epoch").and_then(|v| v.as_u64()).ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            reason: "checkpoint metadata lacks the epoch counter".into(),
        })? as usize;
        let best_iou = ck.meta.get("best_iou").and_then(|v| v.as_f64());
        Ok(TrainState {
            model: ck.model,
            optimizer,
            epoch,
            best_iou,
        })
    }

    fn meta(&self, cfg: &TrainConfig) -> serde_json::Value {
        serde_json::json!({ "epoch": self.epoch, "best_iou": self.best_iou, "seed": cfg.seed })
    }
}

/// Confusion matrix of `model` over `samples`, accumulated per thread and merged.
pub fn evaluate(model: &Model<f32>, samples: &[&Sample], void: Option<u32>) -> Result<ConfusionMatrix> {
    let k = model.config().classes;
    samples
        .par_iter()
        .map(|s| {
            let mut cm = ConfusionMatrix::new(k);
            cm.accumulate(&model.predict(&s.image)?, &s.mask, void)?;
            Ok(cm)
        })
        .try_reduce(
            || ConfusionMatrix::new(k),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )
}

/// Order in which epoch `epoch` visits the training samples.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Mean loss of one Adadelta step per batch over one epoch.
fn run_epoch(state: &mut TrainState, train: &[&Sample], cfg: &TrainConfig, loss: &LossConfig) -> Result<f64> {
    let order = epoch_order(train.len(), cfg.seed, state.epoch);
    let mut weighted = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let images: Vec<Tensor<f32>> = batch.iter().map(|&i| train[i].image.clone()).collect();
        let targets: Vec<&[u32]> = batch.iter().map(|&i| train[i].mask.as_slice()).collect();
        let rec = record_objective(&state.model, &images, &targets, loss, false)?;
        let value = rec.tape.value(rec.loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::Numeric {
                context: format!("epoch {} batch loss", state.epoch + 1),
                detail: format!("loss is {value}"),
            });
        }
        let grads = rec.tape.backward()?;
        adadelta_update(&mut state.model, &grads, &mut state.optimizer, loss.l2)?;
        weighted += value * batch.len() as f64;
    }
    Ok(weighted / train.len() as f64)
}

/// Trains until `cfg.max_epochs` epochs have completed in total.
///
/// With a checkpoint directory, `log.csv` is appended one row per epoch,
/// `last.model` holds the latest parameters with optimizer state, and
/// `best.model` the parameters with the best validation IoU so far. An
/// empty validation set falls back to the training set. A failing step
/// aborts the run and leaves the checkpoints of the last finished epoch.
pub fn train(
    state: &mut TrainState,
    train: &[&Sample],
    valid: &[&Sample],
    cfg: &TrainConfig,
    loss: &LossConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    loss.validate(state.model.config().classes)?;
    if train.is_empty() {
        return Err(Error::Usage("the training split is empty".into()));
    }
    let input = state.model.config().input;
    if let Some(s) = train.iter().chain(valid).find(|s| s.extents() != (input.height, input.width)) {
        let (h, w) = s.extents();
        return Err(Error::Config(format!(
            "sample {} is {h}×{w} but the model expects {}×{}",
            s.id, input.height, input.width
        )));
    }
    let valid = if valid.is_empty() {
        log::warn!("validation split is empty; evaluating on the training split");
        train
    } else {
        valid
    };
    let mut log = TrainingLog {
        class_weights: loss.class_weights.clone(),
        records: Vec::new(),
    };
    let dir = cfg.checkpoint_dir.as_deref();
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join("log.csv");
        if !log_path.exists() {
            fs::write(&log_path, log.header()).map_err(|e| Error::io(&log_path, e))?;
        }
        if state.best_iou.is_none() && !dir.join("best.model").exists() {
            save_checkpoint(dir.join("best.model"), &state.model, None, &state.meta(cfg))?;
        }
        if !dir.join("last.model").exists() {
            save_checkpoint(dir.join("last.model"), &state.model, Some(&state.optimizer), &state.meta(cfg))?;
        }
    }
    while state.epoch < cfg.max_epochs {
        let start = Instant::now();
        let mean_loss = run_epoch(state, train, cfg, loss).inspect_err(|e| {
            log::error!("training aborted in epoch {}: {e}", state.epoch + 1);
        })?;
        state.epoch += 1;
        let (global_acc, mean_iou) = if state.epoch.is_multiple_of(cfg.eval_every) || state.epoch == cfg.max_epochs {
            let cm = evaluate(&state.model, valid, loss.void_class)?;
            (cm.global_accuracy().unwrap_or(f64::NAN), cm.mean_iou().unwrap_or(f64::NAN))
        } else {
            (f64::NAN, f64::NAN)
        };
        let improved = mean_iou.is_finite() && state.best_iou.is_none_or(|b| mean_iou > b);
        if improved {
            state.best_iou = Some(mean_iou);
        }
        let record = EpochRecord {
            epoch: state.epoch,
            mean_loss,
            global_acc,
            mean_iou,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} loss {:.4} acc {:.4} iou {:.4}",
            record.epoch,
            record.mean_loss,
            record.global_acc,
            record.mean_iou
        );
        if let Some(dir) = dir {
            if improved {
                save_checkpoint(dir.join("best.model"), &state.model, None, &state.meta(cfg))?;
            }
            save_checkpoint(dir.join("last.model"), &state.model, Some(&state.optimizer), &state.meta(cfg))?;
            let log_path = dir.join("log.csv");
            let mut f = OpenOptions::new()
                .append(true)
                .open(&log_path)
                .map_err(|e| Error::io(&log_path, e))?;
            writeln!(f, "{}", record.csv_line()).map_err(|e| Error::io(&log_path, e))?;
        }
        log.records.push(record);
    }
    Ok(log)
}
