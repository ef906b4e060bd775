//! Planted-cue synthetic corpus: every target carries a lexical cue of one
//! of the annotated cue types, so a working classifier can reach high
//! accuracy on it.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Condition, Datapoint, Quantifier, MASK, NUM_CLASSES};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::train::{Cue, CueAnnotation};

/// The bundled template set.
pub const BUNDLED_TEMPLATES: &str = include_str!("../data/synth_templates_v1.json");

const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTemplate {
    pub cue: Cue,
    pub text: String,
}

/// Sentence templates with `{slot}` placeholders. Text is pre-tokenised:
/// lowercase, space separated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTemplates {
    pub version: u32,
    pub slots: BTreeMap<String, Vec<String>>,
    pub preceding: Vec<String>,
    pub following: Vec<String>,
    pub targets: BTreeMap<Quantifier, Vec<TargetTemplate>>,
}

impl SynthTemplates {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TEMPLATES).expect("bundled templates are valid")
    }

    pub fn parse(json: &str) -> Result<Self> {
        let t: SynthTemplates = serde_json::from_str(json)?;
        t.check()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid("synth templates", m));
        if self.preceding.is_empty() || self.following.is_empty() {
            return fail("context pools must be non-empty".into());
        }
        for q in Quantifier::ALL {
            let Some(ts) = self.targets.get(&q).filter(|ts| !ts.is_empty()) else {
                return fail(format!("no templates for {q}"));
            };
            for t in ts {
                if !t.text.starts_with(MASK) || t.text.matches(MASK).count() != 1 {
                    return fail(format!("target template must start with the single mask: {:?}", t.text));
                }
            }
        }
        for text in self.all_texts() {
            for slot in slot_names(text) {
                if self.slots.get(slot).is_none_or(|v| v.is_empty()) {
                    return fail(format!("unknown or empty slot {{{slot}}} in {text:?}"));
                }
            }
        }
        Ok(())
    }

    fn all_texts(&self) -> impl Iterator<Item = &String> {
        self.preceding
            .iter()
            .chain(&self.following)
            .chain(self.targets.values().flatten().map(|t| &t.text))
    }

    fn fill(&self, text: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
        text.split_whitespace()
            .map(|tok| match tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
                Some(slot) => self.slots[slot].choose(rng).expect("checked non-empty").clone(),
                None => tok.to_string(),
            })
            .collect()
    }
}

fn slot_names(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
        .filter_map(|tok| tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')))
}

/// Generated items (three_sent) and the cue each one was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub version: u32,
    pub pool: Vec<Datapoint>,
    pub cues: Vec<CueAnnotation>,
}

/// Generates `n / 9` items per quantifier, cycling through each class's templates.
pub fn generate(templates: &SynthTemplates, n: usize, seed: u64) -> Result<SynthCorpus> {
    if n == 0 || !n.is_multiple_of(NUM_CLASSES) {
        return Err(Error::Config(format!(
            "n must be a positive multiple of {NUM_CLASSES}, got {n}"
        )));
    }
    let per_class = n / NUM_CLASSES;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut pool = Vec::with_capacity(n);
    let mut cues = Vec::with_capacity(n);
    let source_ref = format!("synth-v{}", templates.version);
    for q in Quantifier::ALL {
        let ts = &templates.targets[&q];
        for j in 0..per_class {
            let t = &ts[j % ts.len()];
            let mut attempts = 0;
            let dp = loop {
                let dp = Datapoint {
                    id: format!("{source_ref}:{}:{j}", q.label()),
                    s_p: templates.fill(templates.preceding.choose(&mut rng).unwrap(), &mut rng),
                    s_t: templates.fill(&t.text, &mut rng),
                    s_f: templates.fill(templates.following.choose(&mut rng).unwrap(), &mut rng),
                    label: q,
                    source_ref: source_ref.clone(),
                };
                let (a, b, c) = dp.triple_key();
                if seen.insert((a.to_vec(), b.to_vec(), c.to_vec())) {
                    break dp;
                }
                attempts += 1;
                if attempts == MAX_ATTEMPTS {
                    return Err(Error::invalid(
                        "synth",
                        format!("templates for {q} cannot yield {per_class} distinct items"),
                    ));
                }
            };
            dp.validate(Condition::ThreeSent)?;
            cues.push(CueAnnotation {
                item_id: dp.id.clone(),
                cue: t.cue,
            });
            pool.push(dp);
        }
    }
    Ok(SynthCorpus {
        version: templates.version,
        pool,
        cues,
    })
}

/// Seeded Gaussian vectors for every token of `data`, in sorted token order.
pub fn synth_vectors(data: &[Datapoint], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let vocab: BTreeSet<&String> = data
        .iter()
        .flat_map(|dp| dp.tokens(Condition::ThreeSent))
        .filter(|t| *t != MASK)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim as f32).sqrt();
    let entries: Vec<(String, Vec<f32>)> = vocab
        .into_iter()
        .map(|t| {
            let v = (0..dim).map(|_| scale * rng.sample::<f32, _>(StandardNormal)).collect();
            (t.clone(), v)
        })
        .collect();
    EmbeddingTable::from_entries(dim, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_templates_are_pinned() {
        let t = SynthTemplates::bundled();
        assert_eq!(t.version, 1);
        assert_eq!(t.targets.len(), 9);
        let used: BTreeSet<Cue> = t.targets.values().flatten().map(|t| t.cue).collect();
        assert!(used.len() >= 7);
        assert!(t.targets[&Quantifier::None]
            .iter()
            .any(|t| t.cue == Cue::Pis && t.text.contains("ever")));
        assert!(t.targets[&Quantifier::Most]
            .iter()
            .any(|t| t.text.starts_with("<qnt> the time")));
        assert!(t.slots["pct"].iter().all(|p| p.parse::<u32>().unwrap() > 50));
    }

    #[test]
    fn nine_hundred_items_one_hundred_per_class() {
        let c = generate(&SynthTemplates::bundled(), 900, 7).unwrap();
        assert_eq!(c.pool.len(), 900);
        for q in Quantifier::ALL {
            assert_eq!(c.pool.iter().filter(|d| d.label == q).count(), 100);
        }
        let ids: HashSet<&str> = c.pool.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids.len(), 900);
        for dp in &c.pool {
            dp.validate(Condition::ThreeSent).unwrap();
        }
        assert_eq!(c.cues.len(), 900);
    }

    #[test]
    fn deterministic_in_seed() {
        let t = SynthTemplates::bundled();
        assert_eq!(generate(&t, 90, 7).unwrap(), generate(&t, 90, 7).unwrap());
        assert_ne!(generate(&t, 90, 7).unwrap().pool, generate(&t, 90, 8).unwrap().pool);
        let pool = generate(&t, 90, 7).unwrap().pool;
        assert_eq!(
            synth_vectors(&pool, 50, 1).unwrap(),
            synth_vectors(&pool, 50, 1).unwrap()
        );
    }

    #[test]
    fn vectors_cover_the_vocabulary() {
        let pool = generate(&SynthTemplates::bundled(), 90, 7).unwrap().pool;
        let table = synth_vectors(&pool, 50, 7).unwrap();
        assert_eq!(table.dim(), 50);
        for dp in &pool {
            for t in dp.tokens(Condition::ThreeSent).filter(|t| *t != MASK) {
                assert!(table.get_exact(t).is_some(), "{t}");
            }
        }
    }

    #[test]
    fn bad_templates_are_rejected() {
        let mut t = SynthTemplates::bundled();
        t.targets.get_mut(&Quantifier::All).unwrap()[0].text = "all of the {noun} left .".into();
        assert!(SynthTemplates::parse(&serde_json::to_string(&t).unwrap()).is_err());
        let mut t = SynthTemplates::bundled();
        t.preceding.push("the {nothing} .".into());
        assert!(SynthTemplates::parse(&serde_json::to_string(&t).unwrap()).is_err());
        assert!(generate(&SynthTemplates::bundled(), 10, 1).is_err());
    }
}
