use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::score;
use crate::corpus::{Condition, Datapoint, Quantifier, Split, NUM_CLASSES};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::scalar::Scalar;

/// Uniform guessing over the nine classes.
pub const CHANCE: f64 = 1.0 / NUM_CLASSES as f64;

/// Accuracy, per-class accuracy, and confusion counts of one system on one split.
///
/// Rows of `confusion` are gold classes, columns predictions. Items without a
/// prediction (human items with no majority) are counted per gold class in
/// `abstained` and count as wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub condition: Condition,
    pub split: Split,
    pub n: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the split.
    pub per_class_accuracy: [Option<f64>; NUM_CLASSES],
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub abstained: [usize; NUM_CLASSES],
    pub chance: f64,
}

impl EvalReport {
    /// Builds a report from gold labels and optional predictions (class indices).
    pub fn from_predictions(
        system: impl Into<String>,
        condition: Condition,
        split: Split,
        gold: &[usize],
        predicted: &[Option<usize>],
    ) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::invalid("evaluate", "empty split"));
        }
        if gold.len() != predicted.len() {
            return Err(Error::shape("evaluate", &[gold.len()], &[predicted.len()]));
        }
        let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
        let mut abstained = [0; NUM_CLASSES];
        for (&g, &p) in gold.iter().zip(predicted) {
            if g >= NUM_CLASSES || p.is_some_and(|p| p >= NUM_CLASSES) {
                return Err(Error::invalid(
                    "evaluate",
                    format!("class index out of range: {g}, {p:?}"),
                ));
            }
            match p {
                Some(p) => confusion[g][p] += 1,
                None => abstained[g] += 1,
            }
        }
        Ok(Self::from_counts(system.into(), condition, split, confusion, abstained))
    }

    /// Derives the rates from raw counts.
    pub fn from_counts(
        system: String,
        condition: Condition,
        split: Split,
        confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
        abstained: [usize; NUM_CLASSES],
    ) -> Self {
        let mut per_class_accuracy = [None; NUM_CLASSES];
        let mut n = 0;
        let mut trace = 0;
        for q in 0..NUM_CLASSES {
            let row = confusion[q].iter().sum::<usize>() + abstained[q];
            n += row;
            trace += confusion[q][q];
            if row > 0 {
                per_class_accuracy[q] = Some(confusion[q][q] as f64 / row as f64);
            }
        }
        EvalReport {
            system,
            condition,
            split,
            n,
            accuracy: if n == 0 { 0.0 } else { trace as f64 / n as f64 },
            per_class_accuracy,
            confusion,
            abstained,
            chance: CHANCE,
        }
    }

    pub fn correct(&self) -> usize {
        (0..NUM_CLASSES).map(|q| self.confusion[q][q]).sum()
    }

    /// Gold items per class.
    pub fn class_totals(&self) -> [usize; NUM_CLASSES] {
        std::array::from_fn(|q| self.confusion[q].iter().sum::<usize>() + self.abstained[q])
    }

    pub fn class_accuracy(&self, q: Quantifier) -> Option<f64> {
        self.per_class_accuracy[q.index()]
    }

    /// Fraction of the most frequent gold class.
    pub fn majority_chance(&self) -> f64 {
        let totals = self.class_totals();
        *totals.iter().max().unwrap_or(&0) as f64 / self.n.max(1) as f64
    }

    /// One-sided p-value of the accuracy against the given chance level.
    pub fn p_value_against(&self, chance: f64) -> f64 {
        binomial_p_value(self.correct(), self.n, chance)
    }

    /// Checks the counting identities every report must satisfy.
    pub fn check(&self) -> Result<()> {
        let fresh = Self::from_counts(
            self.system.clone(),
            self.condition,
            self.split,
            self.confusion,
            self.abstained,
        );
        let same_rates = (fresh.accuracy - self.accuracy).abs() < 1e-12
            && fresh
                .per_class_accuracy
                .iter()
                .zip(&self.per_class_accuracy)
                .all(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => (a - b).abs() < 1e-12,
                    (None, None) => true,
                    _ => false,
                });
        if fresh.n != self.n || !same_rates {
            return Err(Error::invalid(
                "report",
                format!(
                    "{} on {}/{}: counts and rates disagree",
                    self.system,
                    self.condition,
                    self.split.name()
                ),
            ));
        }
        Ok(())
    }
}

/// P(X >= k) for X ~ Binomial(n, p).
pub fn binomial_p_value(k: usize, n: usize, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    match Binomial::new(p, n as u64) {
        Ok(b) => b.sf(k as u64 - 1),
        Err(_) => f64::NAN,
    }
}

/// Scores `model` on a split with dropout off.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &[Datapoint],
    split: Split,
    table: Option<&EmbeddingTable>,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty split"));
    }
    let enc = model.encode(data, table)?;
    let (_, preds) = score(model, &enc, table, 256)?;
    let preds: Vec<Option<usize>> = preds.into_iter().map(Some).collect();
    EvalReport::from_predictions(
        model.config.family.name(),
        model.config.condition,
        split,
        &enc.labels,
        &preds,
    )
}
