//! Human cloze survey: sampling, assignment, gold screening, and majority
//! aggregation.

mod service;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use service::{
    AnnotationService, Event, ItemPayload, JudgmentLog, NextItems, NextStatus, Progress, SubmitError, Survey,
};

use crate::corpus::{Condition, Datapoint, Quantifier, Split, MASK, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::train::EvalReport;

/// Rendered in place of the hidden quantifier.
pub const BLANK: &str = "_____";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub condition: Condition,
    pub item_count: usize,
    pub judgments_per_item: usize,
    pub max_items_per_annotator: usize,
    pub gold_item_count: usize,
    pub gold_pass_threshold: f64,
    /// Real items served between consecutive gold items.
    pub real_per_gold: usize,
    /// Items handed out per request.
    pub batch_size: usize,
    /// Unanswered assignments lapse after this many seconds.
    #[serde(default)]
    pub reservation_ttl_secs: Option<u64>,
}

impl SurveyConfig {
    pub fn new(condition: Condition) -> Self {
        SurveyConfig {
            condition,
            item_count: 506,
            judgments_per_item: 3,
            max_items_per_annotator: 25,
            gold_item_count: 50,
            gold_pass_threshold: 0.7,
            real_per_gold: 5,
            batch_size: 1,
            reservation_ttl_secs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.item_count == 0
            || self.judgments_per_item == 0
            || self.max_items_per_annotator == 0
            || self.gold_item_count == 0
            || self.real_per_gold == 0
            || self.batch_size == 0
        {
            return Err(Error::Config("survey counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gold_pass_threshold) {
            return Err(Error::Config(format!(
                "gold threshold {} outside [0, 1]",
                self.gold_pass_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Judgment {
    pub annotator_id: String,
    pub item_id: String,
    pub choice: Quantifier,
    pub condition: Condition,
    /// Unix milliseconds.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub item_id: String,
    pub gold: Quantifier,
    pub judgments: Vec<Judgment>,
    pub majority_choice: Option<Quantifier>,
    pub agreement: f64,
    pub correct: bool,
}

/// Seeded uniform sample of `count` items, independent of input order.
pub fn sample_items(pool: &[Datapoint], count: usize, seed: u64) -> Result<Vec<Datapoint>> {
    if count > pool.len() {
        return Err(Error::invalid(
            "sample_survey",
            format!("{count} items requested, {} available", pool.len()),
        ));
    }
    let mut sorted: Vec<&Datapoint> = pool.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if sorted.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::invalid("sample_survey", "duplicate item ids"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, sorted.len(), count)
        .into_iter()
        .map(|i| sorted[i].clone())
        .collect())
}

/// Draws the survey items and, from the remaining items, the gold items.
///
/// Only ids matter for reuse across conditions: a one_sent and a three_sent
/// copy of the same split yield the same id sets.
pub fn sample_survey(val: &[Datapoint], config: &SurveyConfig, seed: u64) -> Result<Survey> {
    config.validate()?;
    let items = sample_items(val, config.item_count, seed)?;
    let taken: HashSet<&str> = items.iter().map(|d| d.id.as_str()).collect();
    let rest: Vec<Datapoint> = val.iter().filter(|d| !taken.contains(d.id.as_str())).cloned().collect();
    let gold = sample_items(&rest, config.gold_item_count, seed.wrapping_add(1))?;
    Survey::new(config.clone(), items, gold)
}

/// Share of the most frequent gold class.
pub fn majority_class_chance(items: &[Datapoint]) -> f64 {
    let mut counts = [0usize; NUM_CLASSES];
    for d in items {
        counts[d.label.index()] += 1;
    }
    counts.iter().copied().max().unwrap_or(0) as f64 / items.len().max(1) as f64
}

/// Text shown to annotators: tokens joined, the mask replaced by a blank.
pub fn render_context(dp: &Datapoint, condition: Condition) -> String {
    let mut out = String::new();
    for tok in dp.tokens(condition) {
        let tok = if tok == MASK { BLANK } else { tok.as_str() };
        let glue = matches!(tok, "." | "," | ";" | ":" | "!" | "?" | ")" | "'s" | "n't")
            || tok.starts_with('\'')
            || out.ends_with('(')
            || out.is_empty();
        if !glue {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// The answer options, always in alphabetical order.
pub fn options() -> Vec<&'static str> {
    Quantifier::ALL.iter().map(|q| q.display()).collect()
}

/// Majority choice (at least two thirds of the votes) and agreement of the
/// most frequent choice.
pub fn majority(choices: &[Quantifier]) -> (Option<Quantifier>, f64) {
    if choices.is_empty() {
        return (None, 0.0);
    }
    let mut counts = [0usize; NUM_CLASSES];
    for c in choices {
        counts[c.index()] += 1;
    }
    let top = *counts.iter().max().unwrap();
    let agreement = top as f64 / choices.len() as f64;
    let winners: Vec<usize> = (0..NUM_CLASSES).filter(|&q| counts[q] == top).collect();
    let majority = (3 * top >= 2 * choices.len() && winners.len() == 1).then(|| Quantifier::ALL[winners[0]]);
    (majority, agreement)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Screening {
    pub correct: usize,
    pub total: usize,
    pub pass: bool,
}

/// Gold accuracy per annotator; pass iff accuracy reaches `threshold`.
///
/// Judgments on items missing from `gold` are ignored.
pub fn screen_annotators(
    judgments: &[Judgment],
    gold: &HashMap<String, Quantifier>,
    threshold: f64,
) -> BTreeMap<String, Screening> {
    let mut out: BTreeMap<String, Screening> = BTreeMap::new();
    for j in judgments {
        let Some(&label) = gold.get(&j.item_id) else { continue };
        let s = out.entry(j.annotator_id.clone()).or_insert(Screening {
            correct: 0,
            total: 0,
            pass: false,
        });
        s.total += 1;
        s.correct += usize::from(j.choice == label);
    }
    for s in out.values_mut() {
        s.pass = threshold <= 0.0 || s.correct as f64 >= threshold * s.total as f64;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub verdicts: Vec<ItemVerdict>,
    /// Items with fewer than the required passing judgments.
    pub under_judged: Vec<String>,
    pub screening: BTreeMap<String, Screening>,
    /// Annotators whose judgments were discarded.
    pub failed_annotators: Vec<String>,
    /// Majority choices only; no-majority items are abstentions.
    pub majority_report: EvalReport,
    /// Every individual judgment of a fully judged item.
    pub judgment_report: EvalReport,
    pub majority_class_chance: f64,
}

/// Screens annotators on gold items and aggregates the survivors' judgments
/// by majority. A pure function of its inputs.
///
/// With `strict`, any under-judged item is an error; otherwise such items are
/// listed and left out of the accuracy.
pub fn aggregate(survey: &Survey, judgments: &[Judgment], strict: bool) -> Result<Aggregate> {
    let cfg = &survey.config;
    if let Some(j) = judgments.iter().find(|j| j.condition != cfg.condition) {
        return Err(Error::Annotation(format!(
            "judgment by {} on {} is for {}, survey is {}",
            j.annotator_id, j.item_id, j.condition, cfg.condition
        )));
    }
    let mut pairs = HashSet::new();
    for j in judgments {
        if !pairs.insert((&j.annotator_id, &j.item_id)) {
            return Err(Error::Annotation(format!(
                "{} judged {} twice",
                j.annotator_id, j.item_id
            )));
        }
    }
    let gold: HashMap<String, Quantifier> = survey.gold.iter().map(|d| (d.id.clone(), d.label)).collect();
    let screening = screen_annotators(judgments, &gold, cfg.gold_pass_threshold);
    let passes = |a: &str| cfg.gold_pass_threshold <= 0.0 || screening.get(a).is_some_and(|s| s.pass);
    let mut by_item: HashMap<&str, Vec<&Judgment>> = HashMap::new();
    let mut failed = BTreeMap::new();
    for j in judgments {
        if gold.contains_key(&j.item_id) {
            continue;
        }
        if passes(&j.annotator_id) {
            by_item.entry(&j.item_id).or_default().push(j);
        } else {
            failed.insert(j.annotator_id.clone(), ());
        }
    }
    let known: HashSet<&str> = survey.items.iter().map(|d| d.id.as_str()).collect();
    if let Some(id) = by_item.keys().find(|id| !known.contains(*id)) {
        return Err(Error::Annotation(format!("judgment for unknown item {id}")));
    }

    let need = cfg.judgments_per_item;
    let mut verdicts = Vec::new();
    let mut under_judged = Vec::new();
    let (mut gold_idx, mut maj_pred, mut all_gold, mut all_pred) = (vec![], vec![], vec![], vec![]);
    for dp in &survey.items {
        let js: Vec<Judgment> = by_item
            .get(dp.id.as_str())
            .map(|v| v.iter().map(|j| (*j).clone()).collect())
            .unwrap_or_default();
        if js.len() > need {
            return Err(Error::Annotation(format!(
                "{} has {} passing judgments, at most {need} allowed",
                dp.id,
                js.len()
            )));
        }
        if js.len() < need {
            under_judged.push(dp.id.clone());
            continue;
        }
        let choices: Vec<Quantifier> = js.iter().map(|j| j.choice).collect();
        let (maj, agreement) = majority(&choices);
        gold_idx.push(dp.label.index());
        maj_pred.push(maj.map(Quantifier::index));
        for c in &choices {
            all_gold.push(dp.label.index());
            all_pred.push(Some(c.index()));
        }
        verdicts.push(ItemVerdict {
            item_id: dp.id.clone(),
            gold: dp.label,
            judgments: js,
            majority_choice: maj,
            agreement,
            correct: maj == Some(dp.label),
        });
    }
    if strict && !under_judged.is_empty() {
        return Err(Error::Annotation(format!(
            "{} items are under-judged: {}",
            under_judged.len(),
            under_judged.join(", ")
        )));
    }
    if verdicts.is_empty() {
        return Err(Error::Annotation("no item has enough judgments".into()));
    }
    let majority_report = EvalReport::from_predictions("Humans", cfg.condition, Split::Val, &gold_idx, &maj_pred)?;
    let judgment_report = EvalReport::from_predictions(
        "Humans (all judgments)",
        cfg.condition,
        Split::Val,
        &all_gold,
        &all_pred,
    )?;
    Ok(Aggregate {
        verdicts,
        under_judged,
        screening,
        failed_annotators: failed.into_keys().collect(),
        majority_report,
        judgment_report,
        majority_class_chance: majority_class_chance(&survey.items),
    })
}
