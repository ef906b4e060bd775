use std::path::PathBuf;

use proptest::prelude::*;
use qcloze::corpus::*;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

#[test]
fn three_document_fixture_yields_the_enumerated_points() {
    let docs = read_corpus(&fixture_dir().join("three_docs.txt"), DocumentMode::Line).unwrap();
    assert_eq!(docs.len(), 3);
    let (pool, report) = build_triples(&docs, &Quantifier::ALL);
    let expected: Vec<Datapoint> = read_jsonl(&fixture_dir().join("three_docs.expected.jsonl")).unwrap();
    assert_eq!(pool, expected);
    assert_eq!(report.candidates, 12);
    assert_eq!(report.kept, 9);
    let skipped: Vec<_> = report
        .skipped
        .iter()
        .map(|s| (s.id.as_str(), s.label, s.reason))
        .collect();
    assert_eq!(
        skipped,
        [
            ("three_docs.txt:1#0", Quantifier::Some, SkipReason::NoPreceding),
            ("three_docs.txt:2#3", Quantifier::All, SkipReason::QuantifierRecurs),
            ("three_docs.txt:2#8", Quantifier::AlmostAll, SkipReason::NoFollowing),
        ]
    );
}

#[test]
fn file_mode_uses_file_names() {
    let docs = read_corpus(&fixture_dir().join("three_docs.txt"), DocumentMode::File).unwrap();
    assert_eq!(docs.len(), 1);
    assert_eq!(docs[0].source_ref, "three_docs.txt");
}

const WORDS: &[&str] = &[
    "the", "cat", "ran", "Some", "of", "All", "few", "ever", "many", "Most", "A", "<qnt>", "dog", "it's", "More",
    "than", "half", "3.5",
];

fn sentence() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(prop::sample::select(WORDS), 1..60),
        prop::sample::select(&[".", "!", "?"][..]),
    )
        .prop_map(|(w, end)| {
            let mut s = w.join(" ");
            s.push_str(end);
            let mut c = s.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => s,
            }
        })
}

fn document() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(sentence(), 1..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn builder_output_satisfies_datapoint_invariants(docs in prop::collection::vec(document(), 1..5)) {
        let docs: Vec<Document> = docs
            .into_iter()
            .enumerate()
            .map(|(i, sentences)| Document { source_ref: format!("d{i}"), sentences })
            .collect();
        let (pool, report) = build_triples(&docs, &Quantifier::ALL);
        let mut seen = std::collections::HashSet::new();
        for dp in &pool {
            prop_assert!(dp.validate(Condition::ThreeSent).is_ok(), "{:?}", dp);
            prop_assert!(seen.insert(dp.triple_key()));
        }
        prop_assert_eq!(report.kept, pool.len());
        prop_assert_eq!(report.candidates, pool.len() + report.skipped.len());
    }
}
