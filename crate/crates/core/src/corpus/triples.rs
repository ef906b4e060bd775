use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::datapoint::{Datapoint, MAX_SENTENCE_TOKENS};
use super::mask::{classify_target, TargetMatch};
use super::quantifier::Quantifier;
use super::text::{split_sentences, tokenize, MASK};

/// A document as an ordered list of sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub source_ref: String,
    pub sentences: Vec<String>,
}

impl Document {
    pub fn from_text(source_ref: impl Into<String>, text: &str) -> Self {
        Document {
            source_ref: source_ref.into(),
            sentences: split_sentences(text),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    QuantifierRecurs,
    MaskInText,
    TargetTooLong,
    NoPreceding,
    NoFollowing,
    PrecedingTooLong,
    FollowingTooLong,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub id: String,
    pub label: Quantifier,
    pub reason: SkipReason,
}

/// Why partitive-initial candidates were dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub candidates: usize,
    pub kept: usize,
    pub counts: BTreeMap<SkipReason, usize>,
    pub skipped: Vec<Skip>,
}

impl SkipReport {
    fn skip(&mut self, id: String, label: Quantifier, reason: SkipReason) {
        *self.counts.entry(reason).or_default() += 1;
        self.skipped.push(Skip { id, label, reason });
    }

    pub fn count(&self, reason: SkipReason) -> usize {
        self.counts.get(&reason).copied().unwrap_or(0)
    }
}

enum Candidate {
    Keep(Datapoint),
    Drop(String, Quantifier, SkipReason),
}

fn document_candidates(doc: &Document, quantifiers: &[Quantifier]) -> Vec<Candidate> {
    let tokens: Vec<Vec<String>> = doc.sentences.iter().map(|s| tokenize(s)).collect();
    let fits = |t: &Vec<String>| t.len() <= MAX_SENTENCE_TOKENS;
    let mut out = Vec::new();
    for (i, sent) in tokens.iter().enumerate() {
        let id = format!("{}#{}", doc.source_ref, i);
        let (label, masked) = match classify_target(sent, quantifiers) {
            TargetMatch::NotPartitive => continue,
            TargetMatch::Recurs(q) => {
                out.push(Candidate::Drop(id, q, SkipReason::QuantifierRecurs));
                continue;
            }
            TargetMatch::MaskCollision(q) => {
                out.push(Candidate::Drop(id, q, SkipReason::MaskInText));
                continue;
            }
            TargetMatch::Masked(q, m) => (q, m),
        };
        let reason = if masked.len() > MAX_SENTENCE_TOKENS {
            Some(SkipReason::TargetTooLong)
        } else if i == 0 {
            Some(SkipReason::NoPreceding)
        } else if i + 1 == tokens.len() {
            Some(SkipReason::NoFollowing)
        } else if !fits(&tokens[i - 1]) {
            Some(SkipReason::PrecedingTooLong)
        } else if !fits(&tokens[i + 1]) {
            Some(SkipReason::FollowingTooLong)
        } else if tokens[i - 1].iter().chain(&tokens[i + 1]).any(|t| t == MASK) {
            Some(SkipReason::MaskInText)
        } else {
            None
        };
        match reason {
            Some(r) => out.push(Candidate::Drop(id, label, r)),
            None => out.push(Candidate::Keep(Datapoint {
                id,
                s_p: tokens[i - 1].clone(),
                s_t: masked,
                s_f: tokens[i + 1].clone(),
                label,
                source_ref: doc.source_ref.clone(),
            })),
        }
    }
    out
}

/// Extracts every valid `(preceding, target, following)` triple.
///
/// Documents are processed in parallel and merged in input order; duplicate
/// triples keep their first occurrence.
pub fn build_triples(docs: &[Document], quantifiers: &[Quantifier]) -> (Vec<Datapoint>, SkipReport) {
    let per_doc: Vec<Vec<Candidate>> = docs.par_iter().map(|d| document_candidates(d, quantifiers)).collect();
    let mut report = SkipReport::default();
    let mut seen = HashSet::new();
    let mut pool = Vec::new();
    for cand in per_doc.into_iter().flatten() {
        report.candidates += 1;
        match cand {
            Candidate::Drop(id, q, r) => report.skip(id, q, r),
            Candidate::Keep(dp) => {
                let key = (dp.s_p.clone(), dp.s_t.clone(), dp.s_f.clone());
                if seen.insert(key) {
                    pool.push(dp);
                } else {
                    report.skip(dp.id, dp.label, SkipReason::Duplicate);
                }
            }
        }
    }
    report.kept = pool.len();
    (pool, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Condition;

    fn doc(text: &str) -> Document {
        Document::from_text("d", text)
    }

    #[test]
    fn target_at_document_start_is_dropped() {
        let (pool, rep) = build_triples(&[doc("Some of us left. It rained. Fine.")], &Quantifier::ALL);
        assert!(pool.is_empty());
        assert_eq!(rep.count(SkipReason::NoPreceding), 1);
        let (_, rep) = build_triples(&[doc("It rained. Some of us left.")], &Quantifier::ALL);
        assert_eq!(rep.count(SkipReason::NoFollowing), 1);
    }

    #[test]
    fn fifty_one_token_target_is_dropped() {
        // "<qnt>" + 49 words + "." = 51 tokens after masking
        let body = vec!["word"; 49].join(" ");
        let text = format!("Before. Some of {body}. After.");
        let (pool, rep) = build_triples(&[doc(&text)], &Quantifier::ALL);
        assert!(pool.is_empty());
        assert_eq!(rep.skipped[0].reason, SkipReason::TargetTooLong);

        let body = vec!["word"; 48].join(" ");
        let text = format!("Before. Some of {body}. After.");
        let (pool, _) = build_triples(&[doc(&text)], &Quantifier::ALL);
        assert_eq!(pool[0].s_t.len(), 50);
    }

    #[test]
    fn long_neighbours_are_dropped() {
        let long = vec!["word"; 50].join(" ");
        let text = format!("Start {long}. Some of us left. End.");
        let (pool, rep) = build_triples(&[doc(&text)], &Quantifier::ALL);
        assert!(pool.is_empty());
        assert_eq!(rep.count(SkipReason::PrecedingTooLong), 1);
    }

    #[test]
    fn duplicates_keep_first_occurrence() {
        let d1 = Document::from_text("a", "Intro. Some of us left. Outro.");
        let d2 = Document::from_text("b", "Intro. Some of us left. Outro.");
        let (pool, rep) = build_triples(&[d1, d2], &Quantifier::ALL);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool[0].id, "a#1");
        assert_eq!(rep.count(SkipReason::Duplicate), 1);
        assert_eq!(rep.candidates, 2);
        assert_eq!(rep.kept, 1);
    }

    #[test]
    fn emitted_points_satisfy_invariants() {
        let (pool, _) = build_triples(
            &[doc("Ab cd. None of these stories have ever been substantiated. Ef gh.")],
            &Quantifier::ALL,
        );
        assert_eq!(pool.len(), 1);
        pool[0].validate(Condition::ThreeSent).unwrap();
        assert_eq!(pool[0].s_p, ["ab", "cd", "."]);
        assert_eq!(pool[0].s_f, ["ef", "gh", "."]);
    }
}
