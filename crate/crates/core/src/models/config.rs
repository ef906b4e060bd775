use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Method, OptimizerConfig};
use crate::corpus::Condition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    BowConc,
    BowSum,
    Fasttext,
    Cnn,
    Lstm,
    Bilstm,
    AttLstm,
    AttconLstm,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::BowConc,
        Family::BowSum,
        Family::Fasttext,
        Family::Cnn,
        Family::Lstm,
        Family::Bilstm,
        Family::AttLstm,
        Family::AttconLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::BowConc => "bow_conc",
            Family::BowSum => "bow_sum",
            Family::Fasttext => "fasttext",
            Family::Cnn => "cnn",
            Family::Lstm => "lstm",
            Family::Bilstm => "bilstm",
            Family::AttLstm => "att_lstm",
            Family::AttconLstm => "attcon_lstm",
        }
    }

    /// Families built on an LSTM layer.
    pub fn is_recurrent(self) -> bool {
        matches!(
            self,
            Family::Lstm | Family::Bilstm | Family::AttLstm | Family::AttconLstm
        )
    }

    /// Everything except fasttext reads the frozen pretrained table.
    pub fn uses_pretrained(self) -> bool {
        self != Family::Fasttext
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_lowercase().replace('-', "_");
        Family::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown family {s:?}")))
    }
}

pub const HIDDEN_GRID: [usize; 2] = [64, 128];
pub const DROPOUT_GRID: [f64; 3] = [0.25, 0.5, 0.75];

fn default_cnn_width() -> usize {
    5
}
fn default_cnn_pool() -> usize {
    2
}
fn default_fasttext_dim() -> usize {
    50
}
fn default_fasttext_buckets() -> u64 {
    1 << 21
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub optimizer: Method,
    pub seed: u64,
    pub condition: Condition,
    pub max_len: usize,
    /// Overrides the optimizer's default learning rate.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    /// Allows hidden/dropout values outside the ablation grid.
    #[serde(default)]
    pub off_grid: bool,
    #[serde(default = "default_cnn_width")]
    pub cnn_width: usize,
    #[serde(default = "default_cnn_pool")]
    pub cnn_pool: usize,
    #[serde(default = "default_fasttext_dim")]
    pub fasttext_dim: usize,
    #[serde(default = "default_fasttext_buckets")]
    pub fasttext_buckets: u64,
}

impl ModelConfig {
    pub fn new(family: Family, condition: Condition) -> Self {
        ModelConfig {
            family,
            hidden_units: HIDDEN_GRID[0],
            dropout_rate: DROPOUT_GRID[0],
            optimizer: Method::Adam,
            seed: 0,
            condition,
            max_len: condition.default_max_len(),
            learning_rate: None,
            off_grid: false,
            cnn_width: default_cnn_width(),
            cnn_pool: default_cnn_pool(),
            fasttext_dim: default_fasttext_dim(),
            fasttext_buckets: default_fasttext_buckets(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !self.off_grid {
            if !HIDDEN_GRID.contains(&self.hidden_units) {
                return fail(format!("hidden_units {} not in {HIDDEN_GRID:?}", self.hidden_units));
            }
            if !DROPOUT_GRID.contains(&self.dropout_rate) {
                return fail(format!("dropout_rate {} not in {DROPOUT_GRID:?}", self.dropout_rate));
            }
        }
        if self.hidden_units == 0 || self.max_len == 0 || self.cnn_width == 0 || self.cnn_pool == 0 {
            return fail("sizes must be positive".into());
        }
        if self.fasttext_dim == 0 || self.fasttext_buckets == 0 {
            return fail("fasttext sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("learning rate {lr} must be positive"));
            }
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let mut c = OptimizerConfig::defaults(self.optimizer);
        if let Some(lr) = self.learning_rate {
            c.learning_rate = lr;
        }
        c
    }

    /// Short cell label, e.g. `adam/h64/d0.25`.
    pub fn cell_label(&self) -> String {
        format!(
            "{}/h{}/d{}",
            self.optimizer.name(),
            self.hidden_units,
            self.dropout_rate
        )
    }
}

/// The 18 ablation cells in canonical order: optimizer, then hidden size, then dropout.
pub fn ablation_grid(base: &ModelConfig) -> Vec<ModelConfig> {
    let mut out = Vec::with_capacity(18);
    for opt in Method::ALL {
        for hidden in HIDDEN_GRID {
            for dropout in DROPOUT_GRID {
                out.push(ModelConfig {
                    optimizer: opt,
                    hidden_units: hidden,
                    dropout_rate: dropout,
                    off_grid: false,
                    ..base.clone()
                });
            }
        }
    }
    out
}
