//! Iterative score, cluster, relabel and balanced-retraining loop, with
//! attribute-based model selection and group evaluation.

use std::io::Write;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedDataset, AttributeVocabulary};
use crate::error::{Error, Result};
use crate::grouping::{class_of_output, fit_dataset, relabel};
use crate::nnet::{Classifier, Sgd, TrainConfig};
use crate::sampler::{build_index, plan, sample_batch};
use crate::scalar::Scalar;
use crate::seed::{stream_rng, Stream};
use crate::spuriousness::{score_matrix, top_attributes, ScoreVariant, SpuriousnessMatrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Start from the ERM-trained backbone.
    #[default]
    ErmCheckpoint,
    /// Redraw every parameter before adapting.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbcConfig {
    pub k: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub variant: ScoreVariant,
    /// Optimiser settings; batch size and epoch fields are ignored here.
    pub train: TrainConfig,
    pub init_mode: InitMode,
}

impl Default for LbcConfig {
    fn default() -> Self {
        Self {
            k: 3,
            epochs: 50,
            batches_per_epoch: 20,
            batch_size: 128,
            variant: ScoreVariant::TanhAbsLog,
            train: TrainConfig { learning_rate: 0.01, momentum: 0.9, weight_decay: 1e-4, ..Default::default() },
            init_mode: InitMode::ErmCheckpoint,
        }
    }
}

impl LbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!("K must be at least 2, got {}", self.k)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("LBC needs at least one epoch".into()));
        }
        if self.batches_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("batches_per_epoch and batch_size must be positive".into()));
        }
        self.train.validate()
    }
}

/// `ceil(j / K)` of the 1-based arg-max output `j`.
pub fn predict_class<F: Scalar>(model: &Classifier<F>, features: &[F], k: usize) -> Result<usize> {
    Ok(class_of_output(model.predict(features)?, k))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttributeAccuracy<F> {
    pub attribute: usize,
    pub support: usize,
    pub accuracy: F,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PseudoUnbiased<F> {
    pub value: F,
    /// Attributes with a non-empty validation subset, in index order.
    pub per_attribute: Vec<AttributeAccuracy<F>>,
}

/// Mean class accuracy over the validation subsets carrying each attribute.
/// Attributes absent from validation are left out of the mean.
pub fn pseudo_unbiased_accuracy<F: Scalar>(
    model: &Classifier<F>,
    val: &AnnotatedDataset<F>,
    k: usize,
) -> Result<PseudoUnbiased<F>> {
    let na = val.vocabulary().len();
    let mut support = vec![0usize; na];
    let mut correct = vec![0usize; na];
    for s in val.samples() {
        let hit = predict_class(model, &s.features, k)? == s.label;
        for &a in &s.attributes {
            support[a] += 1;
            correct[a] += usize::from(hit);
        }
    }
    let per_attribute: Vec<AttributeAccuracy<F>> = (0..na)
        .filter(|&a| support[a] > 0)
        .map(|a| AttributeAccuracy {
            attribute: a,
            support: support[a],
            accuracy: F::from_count(correct[a]) / F::from_count(support[a]),
        })
        .collect();
    if per_attribute.is_empty() {
        return Err(Error::NoValidationCoverage);
    }
    let value = per_attribute.iter().map(|x| x.accuracy).sum::<F>() / F::from_count(per_attribute.len());
    Ok(PseudoUnbiased { value, per_attribute })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupAccuracy<F> {
    pub group: usize,
    pub count: usize,
    pub accuracy: F,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupReport<F> {
    pub groups: Vec<GroupAccuracy<F>>,
    pub worst: F,
    pub average: F,
    pub gap: F,
}

/// Per-group, worst-group and pooled class accuracy.
pub fn evaluate_groups<F: Scalar>(
    model: &Classifier<F>,
    test: &AnnotatedDataset<F>,
    k: usize,
) -> Result<GroupReport<F>> {
    if test.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut tally: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    let mut hits = 0usize;
    for s in test.samples() {
        let g = s.group.ok_or_else(|| Error::MissingGroup(s.id.clone()))?;
        let hit = usize::from(predict_class(model, &s.features, k)? == s.label);
        let e = tally.entry(g).or_default();
        e.0 += 1;
        e.1 += hit;
        hits += hit;
    }
    let groups: Vec<GroupAccuracy<F>> = tally
        .into_iter()
        .map(|(group, (count, correct))| GroupAccuracy {
            group,
            count,
            accuracy: F::from_count(correct) / F::from_count(count),
        })
        .collect();
    let worst = groups.iter().map(|g| g.accuracy).fold(F::infinity(), F::min);
    let average = F::from_count(hits) / F::from_count(test.len());
    Ok(GroupReport { groups, worst, average, gap: average - worst })
}

/// Everything recorded about one LBC epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord<F> {
    pub epoch: usize,
    pub mean_loss: F,
    pub pseudo_unbiased: PseudoUnbiased<F>,
    pub val_groups: Option<GroupReport<F>>,
    /// Highest-scoring attribute per class for the scores used this epoch.
    pub top_attributes: Vec<usize>,
    pub top_scores: Vec<F>,
    /// Cluster sizes per class, class-major.
    pub cell_sizes: Vec<Vec<usize>>,
}

/// Best checkpoint and the running maximum of the selection metric.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionState<F> {
    pub best_metric: F,
    pub best_epoch: usize,
    pub best_checkpoint: Classifier<F>,
    /// (epoch, metric) for every epoch.
    pub history: Vec<(usize, F)>,
}

impl<F: Scalar> SelectionState<F> {
    fn offer(state: &mut Option<Self>, epoch: usize, metric: F, model: &Classifier<F>) -> bool {
        match state {
            Some(s) => {
                s.history.push((epoch, metric));
                if metric > s.best_metric {
                    s.best_metric = metric;
                    s.best_epoch = epoch;
                    s.best_checkpoint = model.clone();
                    true
                } else {
                    false
                }
            }
            None => {
                *state = Some(Self {
                    best_metric: metric,
                    best_epoch: epoch,
                    best_checkpoint: model.clone(),
                    history: vec![(epoch, metric)],
                });
                true
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbcOutcome<F> {
    pub selection: SelectionState<F>,
    pub history: Vec<EpochRecord<F>>,
    /// Every best-so-far checkpoint with its epoch.
    pub snapshots: Vec<(usize, Classifier<F>)>,
    pub final_model: Classifier<F>,
    /// Scores computed on the adapted model before the first epoch's update.
    pub initial_scores: SpuriousnessMatrix<F>,
}

impl<F: Scalar> LbcOutcome<F> {
    pub fn best(&self) -> &Classifier<F> {
        &self.selection.best_checkpoint
    }
}

/// Adapts `erm_model` to a `K * C`-way head and retrains it for
/// `config.epochs` rounds of scoring, clustering, relabelling and balanced
/// sampling. Returns the checkpoint with the best pseudo-unbiased
/// validation accuracy.
pub fn run_lbc<F: Scalar>(
    erm_model: &Classifier<F>,
    train: &AnnotatedDataset<F>,
    val: &AnnotatedDataset<F>,
    config: &LbcConfig,
) -> Result<LbcOutcome<F>> {
    config.validate()?;
    let (nc, k) = (train.num_classes(), config.k);
    let base = match config.init_mode {
        InitMode::ErmCheckpoint => {
            if erm_model.head_width() != nc {
                return Err(Error::HeadMismatch { width: erm_model.head_width(), num_classes: nc });
            }
            erm_model.clone()
        }
        InitMode::Random => erm_model.reinitialized(config.train.seed.wrapping_add(1)),
    };
    let mut model = base.replace_head(k * nc);
    let mut sgd = Sgd::new(&config.train);
    let mut kmeans_rng = stream_rng(config.train.seed, Stream::KMeans);
    let mut sampler_rng = stream_rng(config.train.seed, Stream::Sampler);
    let samples = train.samples();

    let mut selection = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut snapshots = Vec::new();
    let mut initial_scores = None;
    for epoch in 1..=config.epochs {
        let mut matrix = score_matrix(&model, train, config.variant)?;
        matrix.epoch_tag = epoch;
        let clusters = fit_dataset(train, &matrix, k, kmeans_rng.next_u64())?;
        let labeling = relabel(train, &clusters, &matrix);
        let index = build_index(&labeling, train);
        let batch_plan = plan::<F>(&index, config.batch_size)?;

        let mut total = F::zero();
        for _ in 0..config.batches_per_epoch {
            let batch = sample_batch(&index, &batch_plan, &mut sampler_rng);
            let inputs: Vec<&[F]> = batch.iter().map(|e| samples[e.index].features.as_slice()).collect();
            let targets: Vec<usize> = batch.iter().map(|e| e.fine_label).collect();
            let (loss, grads) = model.loss_and_gradient(&inputs, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, loss: loss.as_f64() });
            }
            sgd.step(&mut model, &grads);
            total = total + loss;
        }

        let pseudo = pseudo_unbiased_accuracy(&model, val, k)?;
        let val_groups = if val.samples().iter().all(|s| s.group.is_some()) && !val.is_empty() {
            Some(evaluate_groups(&model, val, k)?)
        } else {
            None
        };
        if SelectionState::offer(&mut selection, epoch, pseudo.value, &model) {
            snapshots.push((epoch, model.clone()));
        }
        let top: Vec<usize> =
            (1..=nc).map(|c| top_attributes(&matrix, train.vocabulary(), c, 1).first().copied().unwrap_or(0)).collect();
        history.push(EpochRecord {
            epoch,
            mean_loss: total / F::from_count(config.batches_per_epoch),
            pseudo_unbiased: pseudo,
            val_groups,
            top_scores: top.iter().enumerate().map(|(c, &a)| matrix.get(c + 1, a)).collect(),
            top_attributes: top,
            cell_sizes: (1..=nc).map(|c| index.cell_sizes(c)).collect(),
        });
        if initial_scores.is_none() {
            initial_scores = Some(matrix);
        }
    }
    Ok(LbcOutcome {
        selection: selection.expect("at least one epoch"),
        history,
        snapshots,
        final_model: model,
        initial_scores: initial_scores.expect("at least one epoch"),
    })
}

/// One row per epoch: loss, selection metric, validation group metrics and
/// the top spurious attribute of every class.
pub fn write_history_csv<F: Scalar, W: Write>(
    history: &[EpochRecord<F>],
    vocabulary: &AttributeVocabulary,
    num_classes: usize,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> =
        ["epoch", "mean_loss", "pseudo_unbiased_val_acc", "val_worst", "val_average", "val_gap"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    for c in 1..=num_classes {
        header.push(format!("top_attribute_class{c}"));
        header.push(format!("top_score_class{c}"));
        header.push(format!("cluster_sizes_class{c}"));
    }
    w.write_record(&header)?;
    for r in history {
        let (worst, avg, gap) = match &r.val_groups {
            Some(g) => (g.worst.to_string(), g.average.to_string(), g.gap.to_string()),
            None => Default::default(),
        };
        let mut row =
            vec![r.epoch.to_string(), r.mean_loss.to_string(), r.pseudo_unbiased.value.to_string(), worst, avg, gap];
        for c in 0..num_classes {
            row.push(vocabulary.name(r.top_attributes[c]).to_owned());
            row.push(r.top_scores[c].to_string());
            row.push(r.cell_sizes[c].iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<history.csv>", e))
}

/// Per-epoch, per-attribute validation accuracies behind the selection metric.
pub fn write_attribute_accuracy_csv<F: Scalar, W: Write>(
    history: &[EpochRecord<F>],
    vocabulary: &AttributeVocabulary,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "attribute", "support", "accuracy"])?;
    for r in history {
        for a in &r.pseudo_unbiased.per_attribute {
            w.write_record([
                r.epoch.to_string(),
                vocabulary.name(a.attribute).to_owned(),
                a.support.to_string(),
                a.accuracy.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<attribute_accuracy.csv>", e))
}
