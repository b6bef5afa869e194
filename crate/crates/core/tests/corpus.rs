use std::path::Path;

use lbc_core::corpus::{read_annotations, read_samples, write_annotations, write_samples, AnnotationRecord, Sample};
use lbc_core::harness::{self, ingest_dir};
use lbc_core::synthgen::SynthSpec;
use lbc_core::Error;
use proptest::prelude::*;

fn sample_strategy() -> impl Strategy<Value = Sample<f64>> {
    ("[a-z0-9-]{1,12}", prop::collection::vec(-1e6f64..1e6, 1..6), 1usize..5, prop::option::of(0usize..8))
        .prop_map(|(id, features, label, group)| Sample { id, features, label, attributes: vec![], group })
}

proptest! {
    #[test]
    fn samples_round_trip_through_jsonl(samples in prop::collection::vec(sample_strategy(), 0..20)) {
        let mut buf = Vec::new();
        write_samples(&samples, &mut buf).unwrap();
        let back: Vec<Sample<f64>> = read_samples(buf.as_slice(), Path::new("mem")).unwrap();
        prop_assert_eq!(back, samples);
    }

    #[test]
    fn annotations_round_trip_through_jsonl(
        words in prop::collection::btree_set("[a-z]{1,6}( [a-z]{1,6})?", 0..6),
        id in "[a-z0-9]{1,8}",
    ) {
        let records = vec![AnnotationRecord::new(id, words.into_iter().collect()).unwrap()];
        let mut buf = Vec::new();
        write_annotations(&records, &mut buf).unwrap();
        prop_assert_eq!(read_annotations(buf.as_slice(), Path::new("mem")).unwrap(), records);
    }
}

#[test]
fn captioner_style_records_parse() {
    let line = br#"{"sample_id": "img-0007", "attributes": ["bird", "top", "tree branch"]}"#;
    let records = read_annotations(&line[..], Path::new("ann.jsonl")).unwrap();
    assert_eq!(records[0].words, ["bird", "top", "tree branch"]);
}

#[test]
fn synthetic_directory_ingests_back_to_the_same_splits() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { seed: 3, ..Default::default() };
    let written = harness::cmd_synth(&spec, dir.path()).unwrap();
    let read = ingest_dir(dir.path(), spec.min_frequency).unwrap();
    assert_eq!(read, written);
}

#[test]
fn unknown_annotation_id_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    harness::cmd_synth(&SynthSpec::default(), dir.path()).unwrap();
    let path = dir.path().join("val_annotations.jsonl");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"sample_id\":\"ghost\",\"attributes\":[\"land\"]}\n");
    std::fs::write(&path, text).unwrap();
    match ingest_dir(dir.path(), 10) {
        Err(Error::UnknownSample(id)) => assert_eq!(id, "ghost"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn rare_words_are_dropped_and_frequent_ones_kept() {
    let dir = tempfile::tempdir().unwrap();
    harness::cmd_synth(&SynthSpec::default(), dir.path()).unwrap();
    let path = dir.path().join("train_annotations.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    // a word on exactly nine records stays below the default threshold of ten
    let edited: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i < 9 { l.replacen("\"attributes\":[", "\"attributes\":[\"rare\",", 1) } else { l.to_owned() })
        .map(|l| l.replace(",]", "]") + "\n")
        .collect();
    std::fs::write(&path, edited).unwrap();
    let splits = ingest_dir(dir.path(), 10).unwrap();
    assert!(splits.train.vocabulary().index_of("rare").is_none());
    assert!(splits.train.vocabulary().index_of("land").is_some());
    let splits = ingest_dir(dir.path(), 9).unwrap();
    assert!(splits.train.vocabulary().index_of("rare").is_some());
}
