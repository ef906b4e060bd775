use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kinds of contextual evidence for the hidden quantifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cue {
    Meaning,
    Pis,
    ContrastQ,
    SupportQ,
    Quantity,
    Lexicalized,
    List,
    Syntax,
}

impl Cue {
    pub const ALL: [Cue; 8] = [
        Cue::Meaning,
        Cue::Pis,
        Cue::ContrastQ,
        Cue::SupportQ,
        Cue::Quantity,
        Cue::Lexicalized,
        Cue::List,
        Cue::Syntax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Cue::Meaning => "meaning",
            Cue::Pis => "pis",
            Cue::ContrastQ => "contrast_q",
            Cue::SupportQ => "support_q",
            Cue::Quantity => "quantity",
            Cue::Lexicalized => "lexicalized",
            Cue::List => "list",
            Cue::Syntax => "syntax",
        }
    }
}

impl fmt::Display for Cue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Cue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Cue::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid("cue", format!("unknown cue {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueAnnotation {
    pub item_id: String,
    pub cue: Cue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueDistribution {
    pub n: usize,
    /// Every cue, including zero counts.
    pub counts: BTreeMap<Cue, usize>,
}

impl CueDistribution {
    fn of<'a>(ids: impl Iterator<Item = &'a String>, cues: &HashMap<&str, Cue>) -> Self {
        let mut counts: BTreeMap<Cue, usize> = Cue::ALL.iter().map(|&c| (c, 0)).collect();
        let mut n = 0;
        for id in ids {
            *counts.get_mut(&cues[id.as_str()]).unwrap() += 1;
            n += 1;
        }
        CueDistribution { n, counts }
    }

    pub fn share(&self, cue: Cue) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.counts[&cue] as f64 / self.n as f64
        }
    }

    /// Fraction of items whose cue is anything but meaning.
    pub fn non_meaning_share(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            1.0 - self.share(Cue::Meaning)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueAnalysis {
    /// Items guessed correctly with the target sentence alone.
    pub one_sent: CueDistribution,
    /// Items guessed correctly only once the neighbours were shown.
    pub gained_in_three: CueDistribution,
}

/// Cue distributions over items guessed correctly in 1-Sent and over items
/// that became correct only with the wider context.
pub fn cue_analysis(
    correct_one: &BTreeSet<String>,
    correct_three: &BTreeSet<String>,
    annotations: &[CueAnnotation],
) -> Result<CueAnalysis> {
    let mut cues: HashMap<&str, Cue> = HashMap::new();
    for a in annotations {
        if let Some(prev) = cues.insert(&a.item_id, a.cue) {
            if prev != a.cue {
                return Err(Error::invalid(
                    "cue_analysis",
                    format!("item {} annotated as both {prev} and {}", a.item_id, a.cue),
                ));
            }
        }
    }
    let missing: Vec<&str> = correct_one
        .union(correct_three)
        .filter(|id| !cues.contains_key(id.as_str()))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(
            "cue_analysis",
            format!("{} items lack a cue annotation: {}", missing.len(), missing.join(", ")),
        ));
    }
    Ok(CueAnalysis {
        one_sent: CueDistribution::of(correct_one.iter(), &cues),
        gained_in_three: CueDistribution::of(correct_three.difference(correct_one), &cues),
    })
}
