use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, TrainError, TrainOptions, TrainedModel};
use crate::corpus::Datapoint;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::models::{ablation_grid, Family, ModelConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Trained {
        best_epoch: usize,
        best_val_loss: f64,
        val_accuracy: f64,
    },
    Failed {
        message: String,
        epoch: usize,
        step: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    /// Position in the canonical grid.
    pub index: usize,
    pub label: String,
    pub config: ModelConfig,
    #[serde(flatten)]
    pub status: CellStatus,
}

impl AblationCell {
    pub fn best_val_loss(&self) -> Option<f64> {
        match self.status {
            CellStatus::Trained { best_val_loss, .. } => Some(best_val_loss),
            CellStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationResult<T: Scalar> {
    pub family: Family,
    /// All cells, in canonical grid order.
    pub cells: Vec<AblationCell>,
    /// Index of the winning cell.
    pub winner: Option<usize>,
    pub model: Option<TrainedModel<T>>,
}

impl<T: Scalar> AblationResult<T> {
    /// Trained cells by ascending loss (grid order on ties), then failed cells.
    pub fn ranked(&self) -> Vec<&AblationCell> {
        let mut v: Vec<&AblationCell> = self.cells.iter().collect();
        v.sort_by(|a, b| match (a.best_val_loss(), b.best_val_loss()) {
            (Some(x), Some(y)) => x.total_cmp(&y).then(a.index.cmp(&b.index)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.index.cmp(&b.index),
        });
        v
    }

    pub fn failed(&self) -> impl Iterator<Item = &AblationCell> {
        self.cells.iter().filter(|c| c.best_val_loss().is_none())
    }
}

fn beats(candidate: (f64, usize), incumbent: Option<(f64, usize)>) -> bool {
    match incumbent {
        None => true,
        Some((loss, idx)) => candidate.0 < loss || (candidate.0 == loss && candidate.1 < idx),
    }
}

/// Trains every grid cell for `base.family` and picks the lowest best-epoch
/// validation loss, ties going to the earlier cell.
///
/// Cells run on up to `workers` threads in `order` (canonical when `None`);
/// the result does not depend on either.
#[allow(clippy::too_many_arguments)]
pub fn ablate<T: Scalar>(
    base: &ModelConfig,
    train_set: &[Datapoint],
    val_set: &[Datapoint],
    table: Option<&EmbeddingTable>,
    opts: &TrainOptions,
    workers: usize,
    order: Option<&[usize]>,
) -> Result<AblationResult<T>> {
    let grid = ablation_grid(base);
    let order: Vec<usize> = match order {
        Some(o) => {
            let mut sorted = o.to_vec();
            sorted.sort_unstable();
            if sorted != (0..grid.len()).collect::<Vec<_>>() {
                return Err(Error::Config(format!("execution order must permute 0..{}", grid.len())));
            }
            o.to_vec()
        }
        None => (0..grid.len()).collect(),
    };
    let best: Mutex<Option<(f64, usize, TrainedModel<T>)>> = Mutex::new(None);
    let run = |&idx: &usize| -> Result<AblationCell> {
        let config = grid[idx].clone();
        let label = config.cell_label();
        let status = match train::<T>(config.clone(), train_set, val_set, table, opts) {
            Ok(trained) => match trained.best().cloned() {
                Some(rec) => {
                    let mut slot = best.lock().unwrap();
                    if beats((rec.val_loss, idx), slot.as_ref().map(|(l, i, _)| (*l, *i))) {
                        *slot = Some((rec.val_loss, idx, trained));
                    }
                    CellStatus::Trained {
                        best_epoch: rec.epoch,
                        best_val_loss: rec.val_loss,
                        val_accuracy: rec.val_accuracy,
                    }
                }
                None => CellStatus::Failed {
                    message: "no epochs were run".into(),
                    epoch: 0,
                    step: 0,
                },
            },
            Err(TrainError::Abort(a)) => CellStatus::Failed {
                message: a.message,
                epoch: a.epoch,
                step: a.step,
            },
            Err(TrainError::Invalid(e)) => return Err(e),
        };
        Ok(AblationCell {
            index: idx,
            label,
            config,
            status,
        })
    };
    let mut cells: Vec<AblationCell> = if workers <= 1 {
        order.iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| order.par_iter().map(run).collect::<Result<_>>())?
    };
    cells.sort_by_key(|c| c.index);
    let best = best.into_inner().unwrap();
    Ok(AblationResult {
        family: base.family,
        cells,
        winner: best.as_ref().map(|(_, i, _)| *i),
        model: best.map(|(_, _, m)| m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_goes_to_earlier_cell() {
        assert!(beats((1.0, 3), None));
        assert!(beats((1.0, 3), Some((1.0, 5))));
        assert!(!beats((1.0, 5), Some((1.0, 3))));
        assert!(beats((0.5, 9), Some((1.0, 3))));
        assert!(!beats((f64::NAN, 0), Some((1.0, 3))));
    }
}
