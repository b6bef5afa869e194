//! Samples, attribute vocabularies and annotation ingestion.
//!
//! Class labels are 1-based throughout (`1..=num_classes`), attribute indices
//! are 0-based positions in the vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_MIN_FREQUENCY: usize = 10;

/// Ordered set of attribute words with dense, stable indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeVocabulary {
    attributes: Vec<String>,
    index: HashMap<String, usize>,
    min_frequency: usize,
}

impl AttributeVocabulary {
    /// Builds a vocabulary from an already ordered list of distinct words.
    pub fn from_words(words: Vec<String>, min_frequency: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::DuplicateAttribute(w.clone()));
            }
        }
        Ok(Self { attributes: words, index, min_frequency })
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.attributes[index]
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    /// One attribute per line, in index order.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for a in &self.attributes {
            writeln!(out, "{a}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_text(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, min_frequency: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect();
        Self::from_words(words, min_frequency)
    }
}

/// One labelled sample. `attributes` is sorted and duplicate-free.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<F> {
    pub id: String,
    pub features: Vec<F>,
    pub label: usize,
    pub attributes: Vec<usize>,
    pub group: Option<usize>,
}

impl<F> Sample<F> {
    pub fn has_attribute(&self, attribute: usize) -> bool {
        self.attributes.binary_search(&attribute).is_ok()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedDataset<F> {
    samples: Vec<Sample<F>>,
    vocabulary: AttributeVocabulary,
    num_classes: usize,
}

impl<F: Scalar> AnnotatedDataset<F> {
    /// Validates labels, feature dimensions, ids and attribute indices.
    pub fn new(samples: Vec<Sample<F>>, vocabulary: AttributeVocabulary, num_classes: usize) -> Result<Self> {
        let dim = samples.first().map(|s| s.features.len());
        let mut seen = BTreeSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateSample(s.id.clone()));
            }
            if s.label == 0 || s.label > num_classes {
                return Err(Error::LabelOutOfRange { sample_id: s.id.clone(), label: s.label, num_classes });
            }
            if let Some(d) = dim {
                if s.features.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: s.features.len() });
                }
            }
            if let Some(&bad) = s.attributes.iter().find(|&&a| a >= vocabulary.len()) {
                return Err(Error::DimensionMismatch { expected: vocabulary.len(), got: bad + 1 });
            }
            if s.attributes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig(format!("attribute set of `{}` is not sorted and distinct", s.id)));
            }
        }
        Ok(Self { samples, vocabulary, num_classes })
    }

    /// Checks that every class is represented, as required of a training split.
    pub fn require_all_classes(&self) -> Result<()> {
        let counts = self.class_counts();
        match counts.iter().position(|&n| n == 0) {
            Some(c) => Err(Error::EmptyClass(c + 1)),
            None => Ok(()),
        }
    }

    pub fn samples(&self) -> &[Sample<F>] {
        &self.samples
    }

    pub fn vocabulary(&self) -> &AttributeVocabulary {
        &self.vocabulary
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features.len())
    }

    /// Number of samples per class, indexed by `label - 1`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label - 1] += 1;
        }
        counts
    }

    pub fn into_parts(self) -> (Vec<Sample<F>>, AttributeVocabulary, usize) {
        (self.samples, self.vocabulary, self.num_classes)
    }
}

/// Attribute words extracted for one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct AnnotationRecord {
    pub sample_id: String,
    #[serde(rename = "attributes")]
    pub words: Vec<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    sample_id: String,
    attributes: Vec<String>,
}

impl TryFrom<RawRecord> for AnnotationRecord {
    type Error = Error;

    fn try_from(raw: RawRecord) -> Result<Self> {
        AnnotationRecord::new(raw.sample_id, raw.attributes)
    }
}

impl AnnotationRecord {
    pub fn new(sample_id: impl Into<String>, words: Vec<String>) -> Result<Self> {
        let sample_id = sample_id.into();
        let mut seen = BTreeSet::new();
        for w in &words {
            if !seen.insert(w.as_str()) {
                return Err(Error::DuplicateWord { sample_id, word: w.clone() });
            }
        }
        Ok(Self { sample_id, words })
    }
}

/// Keeps every word contained in at least `min_frequency` records, sorted
/// lexicographically. A word counts once per record.
pub fn build_vocabulary(records: &[AnnotationRecord], min_frequency: usize) -> Result<AttributeVocabulary> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("no annotation records".into()));
    }
    if min_frequency == 0 {
        return Err(Error::InvalidConfig("min_frequency must be at least 1".into()));
    }
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        for w in &r.words {
            *freq.entry(w.as_str()).or_default() += 1;
        }
    }
    let words: Vec<String> = freq.into_iter().filter(|&(_, n)| n >= min_frequency).map(|(w, _)| w.to_owned()).collect();
    if words.is_empty() {
        return Err(Error::EmptyVocabulary { min_frequency });
    }
    AttributeVocabulary::from_words(words, min_frequency)
}

/// Replaces every sample's attribute set with the in-vocabulary words of its
/// record. Samples without a record end up with no attributes.
pub fn attach_annotations<F: Scalar>(
    dataset: AnnotatedDataset<F>,
    records: &[AnnotationRecord],
) -> Result<AnnotatedDataset<F>> {
    let (mut samples, vocabulary, num_classes) = dataset.into_parts();
    let position: HashMap<&str, usize> = samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut attached: Vec<Vec<usize>> = vec![Vec::new(); samples.len()];
    for r in records {
        let &i = position.get(r.sample_id.as_str()).ok_or_else(|| Error::UnknownSample(r.sample_id.clone()))?;
        let mut attrs: Vec<usize> = r.words.iter().filter_map(|w| vocabulary.index_of(w)).collect();
        attrs.sort_unstable();
        attrs.dedup();
        attached[i] = attrs;
    }
    for (s, attrs) in samples.iter_mut().zip(attached) {
        s.attributes = attrs;
    }
    AnnotatedDataset::new(samples, vocabulary, num_classes)
}

/// Splits class `class` into samples with and without `attribute`.
pub fn partition<F: Scalar>(
    dataset: &AnnotatedDataset<F>,
    class: usize,
    attribute: usize,
) -> (Vec<&Sample<F>>, Vec<&Sample<F>>) {
    dataset.samples().iter().filter(|s| s.label == class).partition(|s| s.has_attribute(attribute))
}

// ---------------------------------------------------------------------------
// JSON-lines formats

#[derive(Serialize, Deserialize)]
struct DatasetRow<F> {
    sample_id: String,
    features: Vec<F>,
    label: usize,
    group: Option<usize>,
}

fn parse_jsonl<T, R>(reader: R, path: &Path) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned,
    R: Read,
{
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: n + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_jsonl<T: Serialize, W: Write>(rows: impl IntoIterator<Item = T>, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for row in rows {
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    out.flush().map_err(|e| Error::io("<jsonl>", e))
}

pub fn read_samples<F: Scalar, R: Read>(reader: R, path: &Path) -> Result<Vec<Sample<F>>> {
    let rows: Vec<DatasetRow<F>> = parse_jsonl(reader, path)?;
    Ok(rows
        .into_iter()
        .map(|r| Sample {
            id: r.sample_id,
            features: r.features,
            label: r.label,
            attributes: Vec::new(),
            group: r.group,
        })
        .collect())
}

pub fn write_samples<F: Scalar, W: Write>(samples: &[Sample<F>], out: W) -> Result<()> {
    write_jsonl(
        samples.iter().map(|s| DatasetRow {
            sample_id: s.id.clone(),
            features: s.features.clone(),
            label: s.label,
            group: s.group,
        }),
        out,
    )
}

pub fn read_annotations<R: Read>(reader: R, path: &Path) -> Result<Vec<AnnotationRecord>> {
    parse_jsonl(reader, path)
}

pub fn write_annotations<W: Write>(records: &[AnnotationRecord], out: W) -> Result<()> {
    write_jsonl(records, out)
}

pub fn load_samples<F: Scalar>(path: &Path) -> Result<Vec<Sample<F>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_samples(file, path)
}

pub fn save_samples<F: Scalar>(samples: &[Sample<F>], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_samples(samples, file)
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_annotations(file, path)
}

pub fn save_annotations(records: &[AnnotationRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_annotations(records, file)
}

/// Annotation records reconstructed from a dataset's attached attributes.
pub fn records_of<F: Scalar>(dataset: &AnnotatedDataset<F>) -> Vec<AnnotationRecord> {
    dataset
        .samples()
        .iter()
        .map(|s| AnnotationRecord {
            sample_id: s.id.clone(),
            words: s.attributes.iter().map(|&a| dataset.vocabulary().name(a).to_owned()).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, words: &[&str]) -> AnnotationRecord {
        AnnotationRecord::new(id, words.iter().map(|w| w.to_string()).collect()).unwrap()
    }

    fn sample(id: &str, label: usize) -> Sample<f64> {
        Sample { id: id.into(), features: vec![0.0, 1.0], label, attributes: vec![], group: None }
    }

    #[test]
    fn vocabulary_threshold_exceeds_corpus() {
        let records: Vec<_> = (0..3).map(|i| rec(&format!("s{i}"), &["water"])).collect();
        assert!(matches!(build_vocabulary(&records, 10), Err(Error::EmptyVocabulary { min_frequency: 10 })));
    }

    #[test]
    fn vocabulary_keeps_frequent_words_only() {
        let mut records = Vec::new();
        for i in 0..12 {
            let words: &[&str] = if i < 3 { &["water", "frisbee"] } else { &["water"] };
            records.push(rec(&format!("s{i}"), words));
        }
        let vocab = build_vocabulary(&records, 10).unwrap();
        assert_eq!(vocab.attributes(), ["water"]);
        assert_eq!(vocab.index_of("water"), Some(0));
        assert_eq!(vocab.index_of("frisbee"), None);
    }

    #[test]
    fn vocabulary_is_lexicographic() {
        let records = vec![rec("a", &["zebra", "apple"]), rec("b", &["mango", "apple"])];
        let vocab = build_vocabulary(&records, 1).unwrap();
        assert_eq!(vocab.attributes(), ["apple", "mango", "zebra"]);
    }

    #[test]
    fn duplicate_word_rejected_at_parse() {
        let line = r#"{"sample_id":"s1","attributes":["water","water"]}"#;
        let err = read_annotations(line.as_bytes(), Path::new("x.jsonl")).unwrap_err();
        assert!(err.to_string().contains("more than once"), "{err}");
    }

    #[test]
    fn attach_drops_out_of_vocabulary_words() {
        let vocab = AttributeVocabulary::from_words(vec!["water".into()], 1).unwrap();
        let ds = AnnotatedDataset::new(vec![sample("s1", 1), sample("s2", 1)], vocab, 1).unwrap();
        let ds = attach_annotations(ds, &[rec("s1", &["water", "frisbee"])]).unwrap();
        assert_eq!(ds.samples()[0].attributes, vec![0]);
        assert!(ds.samples()[1].attributes.is_empty());
    }

    #[test]
    fn attach_unknown_id_is_named() {
        let vocab = AttributeVocabulary::from_words(vec!["water".into()], 1).unwrap();
        let ds = AnnotatedDataset::new(vec![sample("s1", 1)], vocab, 1).unwrap();
        let err = attach_annotations(ds, &[rec("ghost", &["water"])]).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn partition_counts() {
        let vocab = AttributeVocabulary::from_words(vec!["a".into(), "b".into()], 1).unwrap();
        let mut samples = Vec::new();
        for i in 0..10 {
            let mut s = sample(&format!("s{i}"), 1);
            s.attributes = if i < 4 { vec![0, 1] } else { vec![1] };
            samples.push(s);
        }
        samples.push(sample("other", 2));
        let ds = AnnotatedDataset::new(samples, vocab, 2).unwrap();
        let (with, without) = partition(&ds, 1, 0);
        assert_eq!((with.len(), without.len()), (4, 6));
        let (with, without) = partition(&ds, 1, 1);
        assert_eq!((with.len(), without.len()), (10, 0));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let vocab = AttributeVocabulary::from_words(vec![], 1).unwrap();
        let err = AnnotatedDataset::new(vec![sample("s", 3)], vocab, 2).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 3, .. }));
    }

    #[test]
    fn jsonl_parse_error_names_line() {
        let text = "{\"sample_id\":\"a\",\"features\":[1.0],\"label\":1,\"group\":null}\nnot json\n";
        let err = read_samples::<f64, _>(text.as_bytes(), Path::new("d.jsonl")).unwrap_err();
        assert!(err.to_string().starts_with("d.jsonl:2:"), "{err}");
    }
}
