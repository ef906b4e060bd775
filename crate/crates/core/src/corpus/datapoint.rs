use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::quantifier::Quantifier;
use super::text::MASK;
use crate::error::{Error, Result};

/// Maximum tokens per sentence in a datapoint.
pub const MAX_SENTENCE_TOKENS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Target sentence only.
    OneSent,
    /// Preceding, target and following sentence.
    ThreeSent,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::OneSent, Condition::ThreeSent];

    pub fn name(self) -> &'static str {
        match self {
            Condition::OneSent => "one_sent",
            Condition::ThreeSent => "three_sent",
        }
    }

    /// Encoded sequence length that fits every datapoint of the condition.
    pub fn default_max_len(self) -> usize {
        match self {
            Condition::OneSent => MAX_SENTENCE_TOKENS,
            Condition::ThreeSent => 3 * MAX_SENTENCE_TOKENS,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_sent" | "1-sent" | "1" => Ok(Condition::OneSent),
            "three_sent" | "3-sent" | "3" => Ok(Condition::ThreeSent),
            _ => Err(Error::Config(format!("unknown condition {s:?}"))),
        }
    }
}

/// One cloze item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Datapoint {
    pub id: String,
    pub s_p: Vec<String>,
    pub s_t: Vec<String>,
    pub s_f: Vec<String>,
    pub label: Quantifier,
    pub source_ref: String,
}

impl Datapoint {
    /// Tokens the model sees under `condition`, in order.
    pub fn tokens(&self, condition: Condition) -> impl Iterator<Item = &String> {
        let context = condition == Condition::ThreeSent;
        let before: &[String] = if context { &self.s_p } else { &[] };
        let after: &[String] = if context { &self.s_f } else { &[] };
        before.iter().chain(&self.s_t).chain(after)
    }

    pub fn triple_key(&self) -> (&[String], &[String], &[String]) {
        (&self.s_p, &self.s_t, &self.s_f)
    }

    /// Checks the per-item invariants.
    pub fn validate(&self, condition: Condition) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid("datapoint", format!("{}: {msg}", self.id)));
        if self.s_t.first().map(String::as_str) != Some(MASK) {
            return fail("target does not start with the mask".into());
        }
        if self.s_t.iter().filter(|t| *t == MASK).count() != 1 {
            return fail("mask occurs more than once in the target".into());
        }
        if self.s_p.iter().chain(&self.s_f).any(|t| t == MASK) {
            return fail("mask occurs in the context".into());
        }
        let lower: Vec<String> = self.s_t[1..].iter().map(|t| t.to_lowercase()).collect();
        let words = self.label.words();
        if lower
            .windows(words.len())
            .any(|w| w.iter().zip(&words).all(|(a, b)| a == b))
        {
            return fail(format!("gold quantifier {} recurs in the target", self.label));
        }
        for (name, s) in [("s_p", &self.s_p), ("s_t", &self.s_t), ("s_f", &self.s_f)] {
            if s.len() > MAX_SENTENCE_TOKENS {
                return fail(format!("{name} has {} tokens", s.len()));
            }
        }
        match condition {
            Condition::OneSent if !(self.s_p.is_empty() && self.s_f.is_empty()) => {
                fail("context present in one_sent condition".into())
            }
            Condition::ThreeSent if self.s_p.is_empty() || self.s_f.is_empty() => {
                fail("context missing in three_sent condition".into())
            }
            _ => Ok(()),
        }
    }
}
