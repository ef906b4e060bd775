use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{Condition, Datapoint, MASK};
use crate::embeddings::{encode_with, EncodedBatch};
use crate::error::Result;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
/// Joins the two tokens of a bigram; never produced by the tokenizer.
pub const BIGRAM_SEPARATOR: u8 = 0;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Hash bucket of the bigram `(a, b)`.
pub fn bigram_bucket(a: &str, b: &str, buckets: u64) -> u64 {
    let mut bytes = Vec::with_capacity(a.len() + b.len() + 1);
    bytes.extend_from_slice(a.as_bytes());
    bytes.push(BIGRAM_SEPARATOR);
    bytes.extend_from_slice(b.as_bytes());
    fnv1a(&bytes) % buckets
}

/// Word and bigram-bucket rows of the fasttext embedding table.
///
/// Row 0 holds unknown words and the mask; words follow; then one row per
/// bucket seen in training; the last row stands for every unseen bucket.
/// Bucket rows start at zero, so storing only seen buckets is equivalent to
/// the full bucket table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FastTextVocab {
    pub buckets: u64,
    pub words: Vec<String>,
    pub seen_buckets: Vec<u64>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    bucket_index: HashMap<u64, usize>,
}

impl FastTextVocab {
    pub fn build(train: &[Datapoint], condition: Condition, buckets: u64) -> Self {
        let mut words = BTreeSet::new();
        let mut seen = BTreeSet::new();
        for dp in train {
            let toks: Vec<&String> = dp.tokens(condition).collect();
            for t in &toks {
                if *t != MASK {
                    words.insert((*t).clone());
                }
            }
            for w in toks.windows(2) {
                seen.insert(bigram_bucket(w[0], w[1], buckets));
            }
        }
        Self::from_parts(buckets, words.into_iter().collect(), seen.into_iter().collect())
    }

    pub fn from_parts(buckets: u64, words: Vec<String>, seen_buckets: Vec<u64>) -> Self {
        let mut v = FastTextVocab {
            buckets,
            words,
            seen_buckets,
            word_index: HashMap::new(),
            bucket_index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds lookup maps after deserialisation.
    pub fn reindex(&mut self) {
        self.word_index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        let base = self.words.len() + 1;
        self.bucket_index = self
            .seen_buckets
            .iter()
            .enumerate()
            .map(|(i, &b)| (b, base + i))
            .collect();
    }

    pub fn rows(&self) -> usize {
        self.words.len() + self.seen_buckets.len() + 2
    }

    pub fn first_bucket_row(&self) -> usize {
        self.words.len() + 1
    }

    pub fn unseen_row(&self) -> usize {
        self.rows() - 1
    }

    pub fn word_row(&self, t: &str) -> usize {
        self.word_index.get(t).copied().unwrap_or(0)
    }

    pub fn bigram_row(&self, a: &str, b: &str) -> usize {
        let bucket = bigram_bucket(a, b, self.buckets);
        self.bucket_index
            .get(&bucket)
            .copied()
            .unwrap_or_else(|| self.unseen_row())
    }

    pub fn encode(&self, data: &[Datapoint], condition: Condition, max_len: usize) -> Result<EncodedBatch> {
        let mut batch = encode_with(data, condition, max_len, |t| self.word_row(t))?;
        let bigrams = data
            .iter()
            .map(|dp| {
                let toks: Vec<&String> = dp.tokens(condition).collect();
                toks.windows(2).map(|w| self.bigram_row(w[0], w[1])).collect()
            })
            .collect();
        batch.bigrams = Some(bigrams);
        Ok(batch)
    }
}
