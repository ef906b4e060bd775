//! Raw text to balanced, masked cloze datasets.

mod datapoint;
mod dataset;
mod mask;
mod quantifier;
mod reader;
mod text;
mod triples;

pub use datapoint::{Condition, Datapoint, MAX_SENTENCE_TOKENS};
pub use dataset::{balance_and_split, extract_one_sent, read_jsonl, write_jsonl, DatasetSplits, Split};
pub use mask::{classify_target, detect_and_mask, TargetMatch};
pub use quantifier::{Quantifier, NUM_CLASSES};
pub use reader::{corpus_files, read_corpus, DocumentMode};
pub use text::{split_sentences, tokenize, ABBREVIATIONS, MASK};
pub use triples::{build_triples, Document, Skip, SkipReason, SkipReport};
