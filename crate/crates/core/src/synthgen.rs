//! Synthetic spurious-correlation benchmarks.
//!
//! Every sample belongs to a (class, planted attribute) group. Its features
//! are `core_gain * u_y + spurious_gain * v_s + noise`, with `{u_y}` and
//! `{v_s}` orthonormal directions, and its annotation record names the
//! planted attribute plus class-independent filler words.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    attach_annotations, build_vocabulary, AnnotatedDataset, AnnotationRecord, AttributeVocabulary, Sample,
    DEFAULT_MIN_FREQUENCY,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub core_gain: f64,
    pub spurious_gain: f64,
    pub noise_std: f64,
    /// Names of the planted attributes, one per column of `group_counts`.
    pub spurious_attributes: Vec<String>,
    /// Training samples per (class, planted attribute).
    pub group_counts: Vec<Vec<usize>>,
    /// Per-class validation size, spread evenly over planted attributes.
    pub val_class_sizes: Vec<usize>,
    pub test_class_sizes: Vec<usize>,
    /// Explicit validation group counts; overrides `val_class_sizes`.
    pub val_group_counts: Option<Vec<Vec<usize>>>,
    pub test_group_counts: Option<Vec<Vec<usize>>>,
    /// Number of filler words attached independently of the class.
    pub nuisance_attributes: usize,
    /// Probability that a sample carries a given filler word.
    pub nuisance_rate: f64,
    pub min_frequency: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Waterbirds-shaped benchmark: class 1 = landbird, class 2 = waterbird,
    /// group sizes taken from the Waterbirds train/val/test splits.
    fn default() -> Self {
        Self {
            num_classes: 2,
            feature_dim: 20,
            core_gain: 2.4,
            spurious_gain: 3.0,
            noise_std: 1.0,
            spurious_attributes: vec!["land".into(), "water".into()],
            group_counts: vec![vec![3498, 184], vec![56, 1057]],
            val_class_sizes: vec![933, 266],
            test_class_sizes: vec![4510, 1284],
            val_group_counts: None,
            test_group_counts: None,
            nuisance_attributes: 8,
            nuisance_rate: 0.25,
            min_frequency: DEFAULT_MIN_FREQUENCY,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn num_spurious(&self) -> usize {
        self.spurious_attributes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let (nc, ns) = (self.num_classes, self.num_spurious());
        if nc < 2 {
            return bad(format!("num_classes must be at least 2, got {nc}"));
        }
        if ns == 0 {
            return bad("spurious_attributes must not be empty".into());
        }
        if !(self.core_gain > 0.0) || !(self.spurious_gain > 0.0) || !(self.noise_std >= 0.0) {
            return bad("core_gain and spurious_gain must be > 0, noise_std >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.nuisance_rate) {
            return bad(format!("nuisance_rate {} outside [0, 1]", self.nuisance_rate));
        }
        let check_matrix = |name: &str, m: &Vec<Vec<usize>>| -> Result<()> {
            if m.len() != nc || m.iter().any(|row| row.len() != ns) {
                return Err(Error::InvalidConfig(format!("{name} must be {nc} x {ns}")));
            }
            Ok(())
        };
        check_matrix("group_counts", &self.group_counts)?;
        if let Some(c) = self.group_counts.iter().position(|row| row.iter().sum::<usize>() == 0) {
            return bad(format!("class {} has no training samples", c + 1));
        }
        for (name, sizes, explicit) in [
            ("val", &self.val_class_sizes, &self.val_group_counts),
            ("test", &self.test_class_sizes, &self.test_group_counts),
        ] {
            match explicit {
                Some(m) => check_matrix(&format!("{name}_group_counts"), m)?,
                None if sizes.len() != nc => return bad(format!("{name}_class_sizes must have {nc} entries")),
                None => {}
            }
        }
        let mut names = self.spurious_attributes.clone();
        names.extend(self.nuisance_names());
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return bad("attribute names must be distinct".into());
        }
        let needed = nc + ns;
        if self.feature_dim < needed {
            return Err(Error::InsufficientDimension { needed, got: self.feature_dim });
        }
        Ok(())
    }

    pub fn nuisance_names(&self) -> Vec<String> {
        (0..self.nuisance_attributes).map(|i| format!("filler{i:02}")).collect()
    }

    /// Group counts for a split, spreading class sizes evenly when no
    /// explicit counts are given.
    fn split_counts(&self, sizes: &[usize], explicit: &Option<Vec<Vec<usize>>>) -> Vec<Vec<usize>> {
        if let Some(m) = explicit {
            return m.clone();
        }
        let ns = self.num_spurious();
        sizes.iter().map(|&n| (0..ns).map(|s| n / ns + usize::from(s < n % ns)).collect()).collect()
    }

    /// Group id of (class, planted attribute), both 1-based on input.
    pub fn group_id(&self, class: usize, attribute: usize) -> usize {
        (class - 1) * self.num_spurious() + (attribute - 1)
    }
}

/// Generated splits plus the annotation records of every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus<F> {
    pub train: AnnotatedDataset<F>,
    pub val: AnnotatedDataset<F>,
    pub test: AnnotatedDataset<F>,
    pub train_records: Vec<AnnotationRecord>,
    pub val_records: Vec<AnnotationRecord>,
    pub test_records: Vec<AnnotationRecord>,
}

impl<F> SyntheticCorpus<F> {
    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.train_records.iter().chain(&self.val_records).chain(&self.test_records)
    }
}

/// Orthonormal columns from the QR factorisation of a Gaussian matrix.
fn orthonormal_directions(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let gauss = DMatrix::<f64>::from_fn(dim, count, |_, _| StandardNormal.sample(rng));
    let q = gauss.qr().q();
    (0..count).map(|j| q.column(j).iter().copied().collect()).collect()
}

struct SplitOutput<F> {
    samples: Vec<Sample<F>>,
    records: Vec<AnnotationRecord>,
}

fn generate_split<F: Scalar>(
    spec: &SynthSpec,
    name: &str,
    counts: &[Vec<usize>],
    core: &[Vec<f64>],
    spurious: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> SplitOutput<F> {
    let nuisance = spec.nuisance_names();
    let total: usize = counts.iter().flatten().sum();
    let width = total.to_string().len().max(5);
    let mut samples = Vec::with_capacity(total);
    let mut records = Vec::with_capacity(total);
    for (c, row) in counts.iter().enumerate() {
        for (s, &n) in row.iter().enumerate() {
            for _ in 0..n {
                let id = format!("{name}-{:0width$}", samples.len());
                let features = (0..spec.feature_dim)
                    .map(|d| {
                        let noise: f64 = StandardNormal.sample(rng);
                        F::lit(
                            spec.core_gain * core[c][d] + spec.spurious_gain * spurious[s][d] + spec.noise_std * noise,
                        )
                    })
                    .collect();
                let mut words = vec![spec.spurious_attributes[s].clone()];
                for w in &nuisance {
                    if rng.random::<f64>() < spec.nuisance_rate {
                        words.push(w.clone());
                    }
                }
                records.push(AnnotationRecord { sample_id: id.clone(), words });
                samples.push(Sample {
                    id,
                    features,
                    label: c + 1,
                    attributes: Vec::new(),
                    group: Some(spec.group_id(c + 1, s + 1)),
                });
            }
        }
    }
    SplitOutput { samples, records }
}

/// Deterministic function of `spec` (including its seed).
pub fn generate<F: Scalar>(spec: &SynthSpec) -> Result<SyntheticCorpus<F>> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Synth);
    let dirs = orthonormal_directions(spec.feature_dim, spec.num_classes + spec.num_spurious(), &mut rng);
    let (core, spurious) = dirs.split_at(spec.num_classes);

    let train = generate_split::<F>(spec, "train", &spec.group_counts, core, spurious, &mut rng);
    let val_counts = spec.split_counts(&spec.val_class_sizes, &spec.val_group_counts);
    let val = generate_split::<F>(spec, "val", &val_counts, core, spurious, &mut rng);
    let test_counts = spec.split_counts(&spec.test_class_sizes, &spec.test_group_counts);
    let test = generate_split::<F>(spec, "test", &test_counts, core, spurious, &mut rng);

    let vocabulary = build_vocabulary(&train.records, spec.min_frequency)?;
    let assemble =
        |split: SplitOutput<F>, vocab: &AttributeVocabulary| -> Result<(AnnotatedDataset<F>, Vec<AnnotationRecord>)> {
            let ds = AnnotatedDataset::new(split.samples, vocab.clone(), spec.num_classes)?;
            Ok((attach_annotations(ds, &split.records)?, split.records))
        };
    let (train, train_records) = assemble(train, &vocabulary)?;
    train.require_all_classes()?;
    let (val, val_records) = assemble(val, &vocabulary)?;
    let (test, test_records) = assemble(test, &vocabulary)?;
    Ok(SyntheticCorpus { train, val, test, train_records, val_records, test_records })
}
