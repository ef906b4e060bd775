//! Training loop, ablation grid, evaluation reports, and cue analysis.

mod ablate;
mod cues;
mod eval;
mod report;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablate::{ablate, AblationCell, AblationResult, CellStatus};
pub use cues::{cue_analysis, Cue, CueAnalysis, CueAnnotation, CueDistribution};
pub use eval::{binomial_p_value, evaluate, EvalReport, CHANCE};
pub use report::{compare_report, quantifier_bars, truncate3, BarPoint, Comparison, TableRow, COLUMNS};

use crate::autodiff::{Graph, Optimizer};
use crate::corpus::Datapoint;
use crate::embeddings::{EmbeddingTable, EncodedBatch};
use crate::error::{Error, Result};
use crate::models::{argmax_rows, Model, ModelConfig};
use crate::scalar::Scalar;

const DROPOUT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Rows per forward pass when scoring the validation set.
    pub eval_chunk: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 50,
            batch_size: 32,
            eval_chunk: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// A trained model holding the parameters of its best epoch.
#[derive(Debug, Clone)]
pub struct TrainedModel<T: Scalar> {
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    /// 1-based; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.history[e - 1])
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.best().map(|r| r.val_loss)
    }
}

/// Diagnostics for a run stopped by a non-finite loss or gradient.
#[derive(Debug, Clone)]
pub struct TrainAbort<T: Scalar> {
    pub message: String,
    pub epoch: usize,
    /// Optimizer steps completed before the failure.
    pub step: u64,
    /// Parameters right before the failing step.
    pub last_good: Model<T>,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug)]
pub enum TrainError<T: Scalar> {
    Invalid(Error),
    Abort(Box<TrainAbort<T>>),
}

impl<T: Scalar> fmt::Display for TrainError<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Invalid(e) => e.fmt(f),
            TrainError::Abort(a) => write!(
                f,
                "training aborted at epoch {} after {} steps: {}",
                a.epoch, a.step, a.message
            ),
        }
    }
}

impl<T: Scalar> std::error::Error for TrainError<T> {}

impl<T: Scalar> From<Error> for TrainError<T> {
    fn from(e: Error) -> Self {
        TrainError::Invalid(e)
    }
}

impl<T: Scalar> From<TrainError<T>> for Error {
    fn from(e: TrainError<T>) -> Self {
        match e {
            TrainError::Invalid(e) => e,
            abort @ TrainError::Abort(_) => Error::NonFinite(abort.to_string()),
        }
    }
}

/// Mean loss and predictions without dropout.
pub fn score<T: Scalar>(
    model: &Model<T>,
    batch: &EncodedBatch,
    table: Option<&EmbeddingTable>,
    chunk: usize,
) -> Result<(f64, Vec<usize>)> {
    let rows: Vec<usize> = (0..batch.batch).collect();
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(batch.batch);
    for part in rows.chunks(chunk.max(1)) {
        let sub = model.prepare(&batch.select(part));
        let mut g = Graph::new(&model.params);
        let (probs, loss) = model.loss(&mut g, &sub, table, None)?;
        total += g.value(loss).data()[0].to_f64().unwrap_or(f64::NAN) * part.len() as f64;
        preds.extend(argmax_rows(g.value(probs)));
    }
    Ok((total / batch.batch as f64, preds))
}

fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Trains for `opts.epochs` epochs and keeps the epoch with the lowest
/// validation loss. The pretrained table is only read.
pub fn train<T: Scalar>(
    config: ModelConfig,
    train_set: &[Datapoint],
    val_set: &[Datapoint],
    table: Option<&EmbeddingTable>,
    opts: &TrainOptions,
) -> std::result::Result<TrainedModel<T>, TrainError<T>> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("train", "train and validation sets must be non-empty").into());
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()).into());
    }
    let seed = config.seed;
    let mut model = Model::<T>::for_data(config, train_set, table)?;
    let train_enc = model.encode(train_set, table)?;
    let val_enc = model.encode(val_set, table)?;
    let mut history = Vec::with_capacity(opts.epochs);
    if opts.epochs == 0 {
        return Ok(TrainedModel {
            model,
            history,
            best_epoch: None,
        });
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(DROPOUT_STREAM);
    let mut opt = Optimizer::new(model.config.optimizer_config(), &model.params);
    let mut order: Vec<usize> = (0..train_enc.batch).collect();
    let mut best: Option<(f64, usize, crate::autodiff::ParamSet<T>)> = None;

    for epoch in 1..=opts.epochs {
        let abort = |model: &Model<T>, history: &Vec<EpochRecord>, step: u64, message: String| {
            TrainError::Abort(Box::new(TrainAbort {
                message,
                epoch,
                step,
                last_good: model.clone(),
                history: history.clone(),
            }))
        };
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for part in order.chunks(opts.batch_size) {
            let batch = model.prepare(&train_enc.select(part));
            let (loss, grads) = model.loss_and_grad(&batch, table, Some(&mut dropout_rng))?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(abort(
                    &model,
                    &history,
                    opt.step_count(),
                    format!("training loss is {loss}"),
                ));
            }
            if let Err(e) = opt.step(&mut model.params, &grads) {
                return Err(abort(&model, &history, opt.step_count(), e.to_string()));
            }
            total += loss * part.len() as f64;
        }
        let (val_loss, preds) = score(&model, &val_enc, table, opts.eval_chunk)?;
        if !val_loss.is_finite() {
            return Err(abort(
                &model,
                &history,
                opt.step_count(),
                format!("validation loss is {val_loss}"),
            ));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / train_enc.batch as f64,
            val_loss,
            val_accuracy: accuracy(&preds, &val_enc.labels),
        });
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, model.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainedModel {
        model,
        history,
        best_epoch: Some(best_epoch),
    })
}
