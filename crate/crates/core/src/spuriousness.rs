//! Spuriousness scores for class-attribute pairs and per-sample
//! spuriousness embeddings.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{partition, AnnotatedDataset, AttributeVocabulary, Sample};
use crate::error::{Error, Result};
use crate::grouping::class_of_output;
use crate::nnet::Classifier;
use crate::scalar::Scalar;

/// Floor applied to both accuracies before a log-ratio is taken.
pub const ACCURACY_FLOOR: f64 = 1e-6;

/// Functional form applied to the accuracies with (`m_with`) and without
/// (`m_without`) an attribute. `ratio = m_with / m_without`,
/// `diff = m_with - m_without`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    /// `tanh(|ln ratio|)`, bounded in `[0, 1)`.
    #[default]
    TanhAbsLog,
    TanhLog,
    AbsLog,
    Log,
    AbsDiff,
    Diff,
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 6] = [
        ScoreVariant::TanhAbsLog,
        ScoreVariant::TanhLog,
        ScoreVariant::AbsLog,
        ScoreVariant::Log,
        ScoreVariant::AbsDiff,
        ScoreVariant::Diff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreVariant::TanhAbsLog => "tanh_abs_log",
            ScoreVariant::TanhLog => "tanh_log",
            ScoreVariant::AbsLog => "abs_log",
            ScoreVariant::Log => "log",
            ScoreVariant::AbsDiff => "abs_diff",
            ScoreVariant::Diff => "diff",
        }
    }

    /// Score of two non-empty partitions' accuracies.
    pub fn apply<F: Scalar>(self, m_with: F, m_without: F) -> F {
        let floor = F::lit(ACCURACY_FLOOR);
        let (w, wo) = (m_with.max(floor), m_without.max(floor));
        let (hi, lo) = (w.max(wo), w.min(wo));
        match self {
            ScoreVariant::TanhAbsLog => tanh_log_ratio(hi, lo),
            ScoreVariant::TanhLog if w >= wo => tanh_log_ratio(hi, lo),
            ScoreVariant::TanhLog => -tanh_log_ratio(hi, lo),
            ScoreVariant::AbsLog => (hi / lo).ln(),
            ScoreVariant::Log if w >= wo => (hi / lo).ln(),
            ScoreVariant::Log => -(hi / lo).ln(),
            ScoreVariant::AbsDiff => (m_with - m_without).abs(),
            ScoreVariant::Diff => m_with - m_without,
        }
    }
}

/// `tanh(ln(a/b))` for `a >= b > 0`, through `(r^2 - 1)/(r^2 + 1)`.
fn tanh_log_ratio<F: Scalar>(a: F, b: F) -> F {
    let r = a / b;
    let r2 = r * r;
    if r2.is_infinite() {
        return F::one();
    }
    (r2 - F::one()) / (r2 + F::one())
}

impl fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown score variant `{s}`")))
    }
}

/// Number of behaviour outputs per class implied by the head width.
pub fn behaviors_per_class<F: Scalar>(model: &Classifier<F>, num_classes: usize) -> Result<usize> {
    let width = model.head_width();
    if num_classes == 0 || width % num_classes != 0 {
        return Err(Error::HeadMismatch { width, num_classes });
    }
    Ok(width / num_classes)
}

/// Class predicted by a head with `k` outputs per class.
pub fn predicted_class<F: Scalar>(model: &Classifier<F>, x: &[F], k: usize) -> Result<usize> {
    Ok(class_of_output(model.predict(x)?, k))
}

/// Counts behind one matrix entry.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PairStats<F> {
    pub with: usize,
    pub without: usize,
    pub m_with: Option<F>,
    pub m_without: Option<F>,
}

impl<F: Scalar> PairStats<F> {
    pub fn is_corner(&self) -> bool {
        self.with == 0 || self.without == 0
    }
}

/// Scores for every (class, attribute) pair, row-major `C x N_A`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpuriousnessMatrix<F> {
    num_classes: usize,
    num_attributes: usize,
    values: Vec<F>,
    stats: Vec<PairStats<F>>,
    pub variant: ScoreVariant,
    pub epoch_tag: usize,
}

impl<F: Scalar> SpuriousnessMatrix<F> {
    /// Builds a matrix from per-pair statistics; corner pairs score 0.
    pub fn from_stats(
        num_classes: usize,
        num_attributes: usize,
        stats: Vec<PairStats<F>>,
        variant: ScoreVariant,
    ) -> Self {
        assert_eq!(stats.len(), num_classes * num_attributes);
        let values = stats
            .iter()
            .map(|s| match (s.is_corner(), s.m_with, s.m_without) {
                (false, Some(w), Some(wo)) => variant.apply(w, wo),
                _ => F::zero(),
            })
            .collect();
        Self { num_classes, num_attributes, values, stats, variant, epoch_tag: 0 }
    }

    /// Matrix with explicit values (no statistics).
    pub fn from_values(num_classes: usize, num_attributes: usize, values: Vec<F>, variant: ScoreVariant) -> Self {
        assert_eq!(values.len(), num_classes * num_attributes);
        let stats = vec![PairStats::default(); values.len()];
        Self { num_classes, num_attributes, values, stats, variant, epoch_tag: 0 }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    /// `gamma(a, c)` with 1-based class.
    pub fn get(&self, class: usize, attribute: usize) -> F {
        self.values[(class - 1) * self.num_attributes + attribute]
    }

    pub fn stats(&self, class: usize, attribute: usize) -> &PairStats<F> {
        &self.stats[(class - 1) * self.num_attributes + attribute]
    }

    pub fn row(&self, class: usize) -> &[F] {
        &self.values[(class - 1) * self.num_attributes..class * self.num_attributes]
    }

    /// Attributes that hit a corner case for every class.
    pub fn excluded_attributes(&self) -> Vec<usize> {
        (0..self.num_attributes).filter(|&a| (1..=self.num_classes).all(|c| self.stats(c, a).is_corner())).collect()
    }

    /// Full score report with one row per pair.
    pub fn write_csv<W: Write>(&self, vocabulary: &AttributeVocabulary, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "attribute", "variant", "score", "with", "without", "m_with", "m_without"])?;
        let fmt_opt = |v: Option<F>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in 1..=self.num_classes {
            for a in 0..self.num_attributes {
                let s = self.stats(c, a);
                w.write_record([
                    c.to_string(),
                    vocabulary.name(a).to_owned(),
                    self.variant.to_string(),
                    self.get(c, a).to_string(),
                    s.with.to_string(),
                    s.without.to_string(),
                    fmt_opt(s.m_with),
                    fmt_opt(s.m_without),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<scores.csv>", e))
    }
}

/// Class accuracy of `model` on a sample subset.
fn class_accuracy<'a, F: Scalar>(
    model: &Classifier<F>,
    samples: impl IntoIterator<Item = &'a Sample<F>>,
    k: usize,
) -> Result<F> {
    let mut n = 0usize;
    let mut correct = 0usize;
    for s in samples {
        n += 1;
        if predicted_class(model, &s.features, k)? == s.label {
            correct += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptySampleSet);
    }
    Ok(F::from_count(correct) / F::from_count(n))
}

/// Spuriousness of `(class, attribute)` under `model` on `dataset`.
pub fn score<F: Scalar>(
    model: &Classifier<F>,
    dataset: &AnnotatedDataset<F>,
    class: usize,
    attribute: usize,
    variant: ScoreVariant,
) -> Result<F> {
    let k = behaviors_per_class(model, dataset.num_classes())?;
    let (with, without) = partition(dataset, class, attribute);
    if with.is_empty() || without.is_empty() {
        return Ok(F::zero());
    }
    let m_with = class_accuracy(model, with, k)?;
    let m_without = class_accuracy(model, without, k)?;
    Ok(variant.apply(m_with, m_without))
}

/// Scores of all pairs from a single prediction pass over `dataset`.
pub fn score_matrix<F: Scalar>(
    model: &Classifier<F>,
    dataset: &AnnotatedDataset<F>,
    variant: ScoreVariant,
) -> Result<SpuriousnessMatrix<F>> {
    let k = behaviors_per_class(model, dataset.num_classes())?;
    let (nc, na) = (dataset.num_classes(), dataset.vocabulary().len());
    let mut class_total = vec![0usize; nc];
    let mut class_correct = vec![0usize; nc];
    let mut with_total = vec![0usize; nc * na];
    let mut with_correct = vec![0usize; nc * na];
    for s in dataset.samples() {
        let c = s.label - 1;
        let hit = predicted_class(model, &s.features, k)? == s.label;
        class_total[c] += 1;
        class_correct[c] += hit as usize;
        for &a in &s.attributes {
            with_total[c * na + a] += 1;
            with_correct[c * na + a] += hit as usize;
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| F::from_count(num) / F::from_count(den));
    let mut stats = Vec::with_capacity(nc * na);
    for c in 0..nc {
        for a in 0..na {
            let i = c * na + a;
            let without = class_total[c] - with_total[i];
            stats.push(PairStats {
                with: with_total[i],
                without,
                m_with: ratio(with_correct[i], with_total[i]),
                m_without: ratio(class_correct[c] - with_correct[i], without),
            });
        }
    }
    Ok(SpuriousnessMatrix::from_stats(nc, na, stats, variant))
}

/// Per-sample spuriousness embedding, dimension `N_A`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpuriousnessEmbedding<F>(pub Vec<F>);

impl<F> AsRef<[F]> for SpuriousnessEmbedding<F> {
    fn as_ref(&self) -> &[F] {
        &self.0
    }
}

impl<F: Scalar> SpuriousnessEmbedding<F> {
    pub fn norm(&self) -> F {
        self.0.iter().map(|&v| v * v).sum::<F>().sqrt()
    }
}

/// `gamma(a, y)` at every attribute the sample carries, zero elsewhere.
pub fn embed<F: Scalar>(sample: &Sample<F>, matrix: &SpuriousnessMatrix<F>) -> SpuriousnessEmbedding<F> {
    let mut v = vec![F::zero(); matrix.num_attributes()];
    let row = matrix.row(sample.label);
    for &a in &sample.attributes {
        v[a] = row[a];
    }
    SpuriousnessEmbedding(v)
}

/// `n` highest-scoring attributes of `class`, ties broken by attribute name.
pub fn top_attributes<F: Scalar>(
    matrix: &SpuriousnessMatrix<F>,
    vocabulary: &AttributeVocabulary,
    class: usize,
    n: usize,
) -> Vec<usize> {
    let row = matrix.row(class);
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| vocabulary.name(a).cmp(vocabulary.name(b)))
    });
    order.truncate(n);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AttributeVocabulary;
    use crate::nnet::{Activation, Dense};
    use proptest::prelude::*;

    fn vocab(words: &[&str]) -> AttributeVocabulary {
        AttributeVocabulary::from_words(words.iter().map(|w| w.to_string()).collect(), 1).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let v = ScoreVariant::TanhAbsLog;
        assert_eq!(v.apply(0.9, 0.45), 0.6);
        assert_eq!(v.apply(0.3, 0.9), 0.8);
        assert_eq!(v.apply(0.8, 0.8), 0.0);
        assert!((v.apply(0.9_f64, 0.45) - 2f64.ln().tanh()).abs() < 1e-15);
    }

    #[test]
    fn zero_accuracy_is_clamped() {
        let s: f64 = ScoreVariant::TanhAbsLog.apply(0.5, 0.0);
        assert!(s < 1.0 && s > 0.999_999);
        let l: f64 = ScoreVariant::Log.apply(0.0, 0.5);
        assert!((l - (1e-6f64 / 0.5).ln()).abs() < 1e-12);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ScoreVariant::ALL {
            assert_eq!(v.name().parse::<ScoreVariant>().unwrap(), v);
        }
        assert!("tanh".parse::<ScoreVariant>().is_err());
    }

    /// Head predicting class 1 iff the first feature is positive.
    fn sign_model() -> Classifier<f64> {
        let mut head = Dense::zeros(1, 2, Activation::Identity);
        head.weights = vec![1.0, -1.0];
        Classifier::from_layers(vec![], head, 0).unwrap()
    }

    fn ds(rows: &[(f64, usize, &[usize])], words: &[&str]) -> AnnotatedDataset<f64> {
        let samples = rows
            .iter()
            .enumerate()
            .map(|(i, &(x, y, attrs))| Sample {
                id: format!("s{i:02}"),
                features: vec![x],
                label: y,
                attributes: attrs.to_vec(),
                group: None,
            })
            .collect();
        AnnotatedDataset::new(samples, vocab(words), 2).unwrap()
    }

    #[test]
    fn corner_cases_score_zero() {
        // attribute 0 on every class-1 sample; attribute 1 on none of class 1
        let d = ds(&[(1.0, 1, &[0]), (-1.0, 1, &[0]), (-1.0, 2, &[1]), (1.0, 2, &[])], &["a", "b"]);
        let m = sign_model();
        assert_eq!(score(&m, &d, 1, 0, ScoreVariant::TanhAbsLog).unwrap(), 0.0);
        assert_eq!(score(&m, &d, 1, 1, ScoreVariant::TanhAbsLog).unwrap(), 0.0);
        let mat = score_matrix(&m, &d, ScoreVariant::TanhAbsLog).unwrap();
        assert_eq!(mat.get(1, 0), 0.0);
        assert_eq!(mat.get(1, 1), 0.0);
        assert!(mat.get(2, 1) > 0.0);
    }

    #[test]
    fn matrix_agrees_with_pairwise_score() {
        let rows: Vec<(f64, usize, &[usize])> = vec![
            (1.0, 1, &[0]),
            (1.0, 1, &[0, 1]),
            (-1.0, 1, &[1]),
            (0.5, 1, &[]),
            (-0.5, 2, &[0]),
            (0.5, 2, &[0, 1]),
            (-2.0, 2, &[]),
            (3.0, 2, &[1]),
        ];
        let d = ds(&rows, &["a", "b"]);
        let m = sign_model();
        for variant in ScoreVariant::ALL {
            let mat = score_matrix(&m, &d, variant).unwrap();
            for c in 1..=2 {
                for a in 0..2 {
                    assert_eq!(mat.get(c, a), score(&m, &d, c, a, variant).unwrap(), "{variant} {c} {a}");
                }
            }
        }
    }

    #[test]
    fn embedding_masks_by_attribute_presence() {
        let mat = SpuriousnessMatrix::from_values(2, 3, vec![0.1, 0.6, 0.3, 0.9, 0.0, 0.2], ScoreVariant::TanhAbsLog);
        let empty = Sample { id: "e".into(), features: vec![], label: 1, attributes: vec![], group: None };
        assert_eq!(embed(&empty, &mat).0, vec![0.0; 3]);
        let one = Sample { attributes: vec![1], ..empty.clone() };
        assert_eq!(embed(&one, &mat).0, vec![0.0, 0.6, 0.0]);
        let two = Sample { label: 2, attributes: vec![0, 2], ..empty };
        assert_eq!(embed(&two, &mat).0, vec![0.9, 0.0, 0.2]);
    }

    #[test]
    fn top_attributes_sorting_and_ties() {
        let v = vocab(&["a1", "a2", "a3"]);
        let mat = SpuriousnessMatrix::from_values(2, 3, vec![0.2, 0.9, 0.5, 0.0, 0.0, 0.0], ScoreVariant::TanhAbsLog);
        assert_eq!(top_attributes(&mat, &v, 1, 2), vec![1, 2]);
        assert_eq!(top_attributes(&mat, &v, 2, 2), vec![0, 1]);
    }

    #[test]
    fn excluded_attributes_require_every_class() {
        let d = ds(&[(1.0, 1, &[0, 1]), (-1.0, 1, &[0]), (1.0, 2, &[0]), (-1.0, 2, &[0, 1])], &["a", "b"]);
        let mat = score_matrix(&sign_model(), &d, ScoreVariant::TanhAbsLog).unwrap();
        assert_eq!(mat.excluded_attributes(), vec![0]);
    }

    #[test]
    fn score_csv_has_header_and_rows() {
        let d = ds(&[(1.0, 1, &[0]), (-1.0, 1, &[]), (1.0, 2, &[0]), (-1.0, 2, &[])], &["a"]);
        let mat = score_matrix(&sign_model(), &d, ScoreVariant::Diff).unwrap();
        let mut buf = Vec::new();
        mat.write_csv(d.vocabulary(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "class,attribute,variant,score,with,without,m_with,m_without");
        assert_eq!(lines[1], "1,a,diff,1,1,1,1,0");
        assert_eq!(lines[2], "2,a,diff,-1,1,1,0,1");
    }

    proptest! {
        #[test]
        fn tanh_abs_log_bounded_and_symmetric(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let v = ScoreVariant::TanhAbsLog;
            let s = v.apply(p, q);
            prop_assert!((0.0..1.0).contains(&s));
            prop_assert_eq!(s, v.apply(q, p));
            prop_assert_eq!(ScoreVariant::AbsLog.apply(p, q), ScoreVariant::AbsLog.apply(q, p));
        }

        #[test]
        fn tanh_abs_log_matches_library_tanh(p in 0.01f64..=1.0, q in 0.01f64..=1.0) {
            let direct = (p / q).ln().abs().tanh();
            prop_assert!((ScoreVariant::TanhAbsLog.apply(p, q) - direct).abs() < 1e-14);
        }

        #[test]
        fn monotone_in_log_ratio(q in 0.05f64..=1.0, a in 0.0f64..3.0, b in 0.0f64..3.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let v = ScoreVariant::TanhAbsLog;
            let s_lo = v.apply(q * lo.exp(), q);
            let s_hi = v.apply(q * hi.exp(), q);
            prop_assert!(s_lo <= s_hi + 1e-15);
        }
    }
}
