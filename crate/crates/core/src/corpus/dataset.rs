use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::datapoint::{Condition, Datapoint};
use super::quantifier::{Quantifier, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub condition: Condition,
    pub train: Vec<Datapoint>,
    pub val: Vec<Datapoint>,
    pub test: Vec<Datapoint>,
}

impl DatasetSplits {
    pub fn split(&self, s: Split) -> &[Datapoint] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks every datapoint and the triple uniqueness across splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in Split::ALL {
            for dp in self.split(s) {
                dp.validate(self.condition)?;
                if !seen.insert(dp.triple_key()) {
                    return Err(Error::invalid("dataset", format!("duplicate triple {}", dp.id)));
                }
            }
        }
        Ok(())
    }

    /// Items per class in one split.
    pub fn class_counts(&self, s: Split) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for dp in self.split(s) {
            c[dp.label.index()] += 1;
        }
        c
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for s in Split::ALL {
            write_jsonl(&dir.join(format!("{}.jsonl", s.name())), self.split(s))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path, condition: Condition) -> Result<Self> {
        let load = |s: Split| read_jsonl(&dir.join(format!("{}.jsonl", s.name())));
        Ok(DatasetSplits {
            condition,
            train: load(Split::Train)?,
            val: load(Split::Val)?,
            test: load(Split::Test)?,
        })
    }
}

fn sort_key(dp: &Datapoint) -> (String, String, String) {
    let text = dp
        .s_p
        .iter()
        .chain(&dp.s_t)
        .chain(&dp.s_f)
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" ");
    (dp.source_ref.clone(), text, dp.id.clone())
}

/// Samples `per_class` items of every quantifier and splits each class 80/10/10.
///
/// The pool is sorted by (source_ref, text, id) before sampling, so the result
/// depends only on the pool's contents and the seed.
pub fn balance_and_split(pool: &[Datapoint], per_class: usize, seed: u64) -> Result<DatasetSplits> {
    if per_class == 0 || !per_class.is_multiple_of(10) {
        return Err(Error::Config(format!(
            "per_class must be a positive multiple of 10, got {per_class}"
        )));
    }
    let mut sorted: Vec<&Datapoint> = pool.iter().collect();
    sorted.sort_by_cached_key(|dp| sort_key(dp));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = per_class * 8 / 10;
    let n_val = per_class / 10;
    let mut out = DatasetSplits {
        condition: Condition::ThreeSent,
        train: Vec::with_capacity(n_train * NUM_CLASSES),
        val: Vec::with_capacity(n_val * NUM_CLASSES),
        test: Vec::with_capacity(n_val * NUM_CLASSES),
    };
    for q in Quantifier::ALL {
        let members: Vec<&Datapoint> = sorted.iter().copied().filter(|dp| dp.label == q).collect();
        if members.len() < per_class {
            return Err(Error::InsufficientClass {
                class: q.label(),
                available: members.len(),
                required: per_class,
            });
        }
        let chosen: Vec<Datapoint> = sample(&mut rng, members.len(), per_class)
            .into_iter()
            .map(|i| members[i].clone())
            .collect();
        let (train, rest) = chosen.split_at(n_train);
        let (val, test) = rest.split_at(n_val);
        out.train.extend_from_slice(train);
        out.val.extend_from_slice(val);
        out.test.extend_from_slice(test);
    }
    Ok(out)
}

/// The same items and split membership with the context sentences dropped.
pub fn extract_one_sent(three: &DatasetSplits) -> Result<DatasetSplits> {
    if three.condition != Condition::ThreeSent {
        return Err(Error::invalid("extract_one_sent", "input is not a three_sent dataset"));
    }
    let strip = |v: &[Datapoint]| {
        v.iter()
            .map(|dp| Datapoint {
                s_p: Vec::new(),
                s_f: Vec::new(),
                ..dp.clone()
            })
            .collect()
    };
    Ok(DatasetSplits {
        condition: Condition::OneSent,
        train: strip(&three.train),
        val: strip(&three.val),
        test: strip(&three.test),
    })
}

pub fn write_jsonl<S: Serialize>(path: &Path, records: &[S]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<D: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<D>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
