use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The nine partitive quantifiers, in alphabetical (class index) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantifier {
    AFew,
    All,
    AlmostAll,
    Few,
    Many,
    MoreThanHalf,
    Most,
    None,
    Some,
}

pub const NUM_CLASSES: usize = 9;

impl Quantifier {
    /// Alphabetical order; position is the class index.
    pub const ALL: [Quantifier; NUM_CLASSES] = [
        Quantifier::AFew,
        Quantifier::All,
        Quantifier::AlmostAll,
        Quantifier::Few,
        Quantifier::Many,
        Quantifier::MoreThanHalf,
        Quantifier::Most,
        Quantifier::None,
        Quantifier::Some,
    ];

    /// Rough scale from "none" to "all".
    pub const BY_MAGNITUDE: [Quantifier; NUM_CLASSES] = [
        Quantifier::None,
        Quantifier::Few,
        Quantifier::AFew,
        Quantifier::Some,
        Quantifier::Many,
        Quantifier::MoreThanHalf,
        Quantifier::Most,
        Quantifier::AlmostAll,
        Quantifier::All,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Quantifier::AFew => "a_few",
            Quantifier::All => "all",
            Quantifier::AlmostAll => "almost_all",
            Quantifier::Few => "few",
            Quantifier::Many => "many",
            Quantifier::MoreThanHalf => "more_than_half",
            Quantifier::Most => "most",
            Quantifier::None => "none",
            Quantifier::Some => "some",
        }
    }

    /// Human-facing name, e.g. "more than half".
    pub fn display(self) -> &'static str {
        match self {
            Quantifier::AFew => "a few",
            Quantifier::All => "all",
            Quantifier::AlmostAll => "almost all",
            Quantifier::Few => "few",
            Quantifier::Many => "many",
            Quantifier::MoreThanHalf => "more than half",
            Quantifier::Most => "most",
            Quantifier::None => "none",
            Quantifier::Some => "some",
        }
    }

    /// Partitive surface string, e.g. "more than half of".
    pub fn surface(self) -> String {
        format!("{} of", self.display())
    }

    /// Quantifier words without the trailing "of".
    pub fn words(self) -> Vec<&'static str> {
        self.display().split(' ').collect()
    }

    /// Partitive surface as tokens.
    pub fn surface_tokens(self) -> Vec<&'static str> {
        let mut w = self.words();
        w.push("of");
        w
    }
}

impl fmt::Display for Quantifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Quantifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let norm = s.trim().to_lowercase().replace(' ', "_");
        Quantifier::ALL
            .into_iter()
            .find(|q| q.label() == norm)
            .ok_or_else(|| Error::invalid("quantifier", format!("unknown label {s:?}")))
    }
}
