//! Experiment runner: dataset preparation, training runs and report files.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{DataSource, ExperimentConfig, FileSource, ModelConfig};

use crate::corpus::{
    attach_annotations, build_vocabulary, load_annotations, load_samples, save_annotations, save_samples,
    AnnotatedDataset, AnnotationRecord,
};
use crate::error::{Error, Result};
use crate::grouping::{embed_all, fit_dataset, relabel};
use crate::lbc::{
    evaluate_groups, pseudo_unbiased_accuracy, run_lbc, write_attribute_accuracy_csv, write_history_csv, GroupReport,
    LbcConfig, LbcOutcome,
};
use crate::nnet::{train_erm, Classifier};
use crate::sampler::{build_index, plan};
use crate::spuriousness::{behaviors_per_class, score_matrix, top_attributes, ScoreVariant, SpuriousnessMatrix};
use crate::synthgen::{generate, SynthSpec};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const VOCABULARY_FILE: &str = "vocabulary.txt";

fn annotations_file(split: &str) -> String {
    format!("{split}_annotations.jsonl")
}

/// Train, validation and test splits sharing the training vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: AnnotatedDataset<f64>,
    pub val: AnnotatedDataset<f64>,
    pub test: AnnotatedDataset<f64>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut out = create_file(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_text(text: &str, path: &Path) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a dataset directory and attaches annotations against a
/// vocabulary built from the training annotations.
pub fn ingest_dir(dir: &Path, min_frequency: usize) -> Result<Splits> {
    let load = |split: &str, file: &str| -> Result<(Vec<_>, Vec<AnnotationRecord>)> {
        let samples = load_samples::<f64>(&dir.join(file))?;
        let ann = dir.join(annotations_file(split));
        let records = if ann.exists() { load_annotations(&ann)? } else { Vec::new() };
        Ok((samples, records))
    };
    let (train, train_rec) = load("train", TRAIN_FILE)?;
    let (val, val_rec) = load("val", VAL_FILE)?;
    let (test, test_rec) = load("test", TEST_FILE)?;
    let num_classes = train.iter().map(|s| s.label).max().ok_or(Error::EmptySampleSet)?;
    let vocabulary = build_vocabulary(&train_rec, min_frequency)?;
    let attach = |samples, records: &[AnnotationRecord]| {
        attach_annotations(AnnotatedDataset::new(samples, vocabulary.clone(), num_classes)?, records)
    };
    let train = attach(train, &train_rec)?;
    train.require_all_classes()?;
    Ok(Splits { train, val: attach(val, &val_rec)?, test: attach(test, &test_rec)? })
}

/// Materialises the experiment's data source.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    match (&cfg.data.synth, &cfg.data.files) {
        (Some(spec), _) => {
            let corpus = generate::<f64>(spec)?;
            Ok(Splits { train: corpus.train, val: corpus.val, test: corpus.test })
        }
        (None, Some(files)) => ingest_dir(&files.dir, files.min_frequency),
        (None, None) => Err(Error::InvalidConfig("no data source".into())),
    }
}

/// Writes the three splits, their annotation records and the vocabulary.
pub fn write_splits(splits: &Splits, records: [&[AnnotationRecord]; 3], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for ((ds, file, split), recs) in
        [(&splits.train, TRAIN_FILE, "train"), (&splits.val, VAL_FILE, "val"), (&splits.test, TEST_FILE, "test")]
            .into_iter()
            .zip(records)
    {
        save_samples(ds.samples(), &dir.join(file))?;
        save_annotations(recs, &dir.join(annotations_file(split)))?;
    }
    splits.train.vocabulary().save(&dir.join(VOCABULARY_FILE))
}

/// Generates a synthetic benchmark into `out` with a spec echo.
pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<Splits> {
    let corpus = generate::<f64>(spec)?;
    let splits = Splits { train: corpus.train, val: corpus.val, test: corpus.test };
    write_splits(&splits, [&corpus.train_records, &corpus.val_records, &corpus.test_records], out)?;
    let echo = toml::to_string(spec).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    write_text(&echo, &out.join("synth_spec.toml"))?;
    Ok(splits)
}

pub fn load_synth_spec(path: &Path) -> Result<SynthSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: SynthSpec =
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub num_classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub attributes: usize,
    pub mean_attributes_per_train_sample: f64,
}

/// Validates the configured dataset and writes its vocabulary and a summary.
pub fn cmd_ingest(cfg: &ExperimentConfig, out: &Path) -> Result<IngestSummary> {
    let splits = load_splits(cfg)?;
    create_dir(out)?;
    splits.train.vocabulary().save(&out.join(VOCABULARY_FILE))?;
    let attrs: usize = splits.train.samples().iter().map(|s| s.attributes.len()).sum();
    let summary = IngestSummary {
        num_classes: splits.train.num_classes(),
        train: splits.train.len(),
        val: splits.val.len(),
        test: splits.test.len(),
        attributes: splits.train.vocabulary().len(),
        mean_attributes_per_train_sample: attrs as f64 / splits.train.len() as f64,
    };
    write_json(&summary, &out.join("ingest_summary.json"))?;
    Ok(summary)
}

pub fn initial_model(cfg: &ExperimentConfig, splits: &Splits) -> Result<Classifier<f64>> {
    let dim = splits.train.feature_dim().ok_or(Error::EmptySampleSet)?;
    Ok(Classifier::new(dim, &cfg.model.hidden, splits.train.num_classes(), cfg.seed))
}

/// Trains the ERM model of an experiment.
pub fn train_erm_model(cfg: &ExperimentConfig, splits: &Splits) -> Result<Classifier<f64>> {
    Ok(train_erm(initial_model(cfg, splits)?, &splits.train, &cfg.erm)?.model)
}

fn check_compatible(model: &Classifier<f64>, ds: &AnnotatedDataset<f64>) -> Result<usize> {
    if let Some(d) = ds.feature_dim() {
        if d != model.input_dim() {
            return Err(Error::DimensionMismatch { expected: model.input_dim(), got: d });
        }
    }
    behaviors_per_class(model, ds.num_classes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub worst: f64,
    pub average: f64,
    pub gap: f64,
    pub groups: Vec<(usize, usize, f64)>,
}

impl From<&GroupReport<f64>> for EvalReport {
    fn from(r: &GroupReport<f64>) -> Self {
        Self {
            worst: r.worst,
            average: r.average,
            gap: r.gap,
            groups: r.groups.iter().map(|g| (g.group, g.count, g.accuracy)).collect(),
        }
    }
}

/// Top attribute per class with its score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopAttribute {
    pub class: usize,
    pub attribute: String,
    pub score: f64,
}

fn top_per_class(matrix: &SpuriousnessMatrix<f64>, ds: &AnnotatedDataset<f64>, n: usize) -> Vec<TopAttribute> {
    (1..=ds.num_classes())
        .flat_map(|c| {
            top_attributes(matrix, ds.vocabulary(), c, n).into_iter().map(move |a| TopAttribute {
                class: c,
                attribute: ds.vocabulary().name(a).to_owned(),
                score: matrix.get(c, a),
            })
        })
        .collect()
}

/// Mean Euclidean norm of the training embeddings under `matrix`.
pub fn mean_embedding_norm(ds: &AnnotatedDataset<f64>, matrix: &SpuriousnessMatrix<f64>) -> f64 {
    let e = embed_all(ds, matrix);
    e.iter().map(|v| v.norm()).sum::<f64>() / e.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbcSummary {
    pub k: usize,
    pub test: EvalReport,
    pub best_epoch: usize,
    pub best_pseudo_unbiased: f64,
    pub top_attributes: Vec<TopAttribute>,
    pub mean_embedding_norm: f64,
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub config_echo: PathBuf,
    pub erm_checkpoint: PathBuf,
    pub erm_scores: PathBuf,
    pub lbc_checkpoint: PathBuf,
    pub lbc_scores: PathBuf,
    pub history: PathBuf,
    pub attribute_accuracy: PathBuf,
    pub clusters: PathBuf,
    pub plan: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub erm: EvalReport,
    pub erm_top_attributes: Vec<TopAttribute>,
    pub erm_mean_embedding_norm: f64,
    pub lbc: LbcSummary,
    pub k_sweep: Vec<LbcSummary>,
    pub paths: RunPaths,
    pub wall_clock_seconds: f64,
}

pub const REPORT_FILE: &str = "report.json";

/// Runs LBC from `erm` and writes its artifacts under `dir`.
fn lbc_stage(
    erm: &Classifier<f64>,
    splits: &Splits,
    lbc_cfg: &LbcConfig,
    dir: &Path,
) -> Result<(LbcSummary, LbcOutcome<f64>)> {
    create_dir(dir)?;
    let outcome = run_lbc(erm, &splits.train, &splits.val, lbc_cfg)?;
    let vocab = splits.train.vocabulary();
    let nc = splits.train.num_classes();
    write_history_csv(&outcome.history, vocab, nc, create_file(&dir.join("history.csv"))?)?;
    write_attribute_accuracy_csv(&outcome.history, vocab, create_file(&dir.join("attribute_accuracy.csv"))?)?;
    let ckpt_dir = dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    for (epoch, model) in &outcome.snapshots {
        model.save(&ckpt_dir.join(format!("best_epoch{epoch:03}.json")))?;
    }
    let best = outcome.best();
    best.save(&dir.join("lbc.json"))?;
    let matrix = score_matrix(best, &splits.train, lbc_cfg.variant)?;
    matrix.write_csv(vocab, create_file(&dir.join("lbc_scores.csv"))?)?;
    let clusters = fit_dataset(&splits.train, &matrix, lbc_cfg.k, lbc_cfg.train.seed)?;
    let labeling = relabel(&splits.train, &clusters, &matrix);
    labeling.write_csv(create_file(&dir.join("clusters.csv"))?)?;
    plan::<f64>(&build_index(&labeling, &splits.train), lbc_cfg.batch_size)?
        .write_csv(create_file(&dir.join("plan.csv"))?)?;
    clusters.write_centroids_csv(create_file(&dir.join("centroids.csv"))?)?;
    let test = evaluate_groups(best, &splits.test, lbc_cfg.k)?;
    let summary = LbcSummary {
        k: lbc_cfg.k,
        test: EvalReport::from(&test),
        best_epoch: outcome.selection.best_epoch,
        best_pseudo_unbiased: outcome.selection.best_metric,
        top_attributes: top_per_class(&matrix, &splits.train, 3),
        mean_embedding_norm: mean_embedding_norm(&splits.train, &matrix),
        dir: dir.to_owned(),
    };
    Ok((summary, outcome))
}

/// Full pipeline: ERM (or a supplied checkpoint), LBC, test evaluation,
/// optional K sweep, and the run report.
pub fn cmd_train(cfg: &ExperimentConfig, erm_checkpoint: Option<&Path>) -> Result<RunReport> {
    let started = Instant::now();
    let out = &cfg.out;
    create_dir(out)?;
    let echo = out.join("config.toml");
    write_text(&cfg.to_toml_string()?, &echo)?;
    let splits = load_splits(cfg)?;

    let erm = match erm_checkpoint {
        Some(p) => {
            let m = Classifier::<f64>::load(p)?;
            check_compatible(&m, &splits.train)?;
            m
        }
        None => train_erm_model(cfg, &splits)?,
    };
    let erm_path = out.join("erm.json");
    erm.save(&erm_path)?;
    let erm_matrix = score_matrix(&erm, &splits.train, cfg.lbc.variant)?;
    let erm_scores = out.join("erm_scores.csv");
    erm_matrix.write_csv(splits.train.vocabulary(), create_file(&erm_scores)?)?;
    let erm_test = evaluate_groups(&erm, &splits.test, behaviors_per_class(&erm, splits.train.num_classes())?)?;

    let (lbc, _) = lbc_stage(&erm, &splits, &cfg.lbc, out)?;
    let mut k_sweep = Vec::new();
    for &k in &cfg.k_sweep {
        let sweep_cfg = LbcConfig { k, ..cfg.lbc.clone() };
        let (summary, _) = lbc_stage(&erm, &splits, &sweep_cfg, &out.join(format!("k{k}")))?;
        k_sweep.push(summary);
    }

    let report = RunReport {
        seed: cfg.seed,
        erm: EvalReport::from(&erm_test),
        erm_top_attributes: top_per_class(&erm_matrix, &splits.train, 3),
        erm_mean_embedding_norm: mean_embedding_norm(&splits.train, &erm_matrix),
        lbc,
        k_sweep,
        paths: RunPaths {
            config_echo: echo,
            erm_checkpoint: erm_path,
            erm_scores,
            lbc_checkpoint: out.join("lbc.json"),
            lbc_scores: out.join("lbc_scores.csv"),
            history: out.join("history.csv"),
            attribute_accuracy: out.join("attribute_accuracy.csv"),
            clusters: out.join("clusters.csv"),
            plan: out.join("plan.csv"),
        },
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&report, &out.join(REPORT_FILE))?;
    Ok(report)
}

/// ERM only; writes the checkpoint, scores and test metrics.
pub fn cmd_train_erm(cfg: &ExperimentConfig) -> Result<EvalReport> {
    create_dir(&cfg.out)?;
    let splits = load_splits(cfg)?;
    let erm = train_erm_model(cfg, &splits)?;
    erm.save(&cfg.out.join("erm.json"))?;
    let matrix = score_matrix(&erm, &splits.train, cfg.lbc.variant)?;
    matrix.write_csv(splits.train.vocabulary(), create_file(&cfg.out.join("erm_scores.csv"))?)?;
    let report = EvalReport::from(&evaluate_groups(&erm, &splits.test, 1)?);
    write_json(&report, &cfg.out.join("erm_eval.json"))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub test: EvalReport,
    pub pseudo_unbiased_val: f64,
}

/// Evaluates a checkpoint on the test split (class accuracy via the
/// ceiling rule implied by its head width).
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<CheckpointEval> {
    let splits = load_splits(cfg)?;
    let model = Classifier::<f64>::load(checkpoint)?;
    let k = check_compatible(&model, &splits.test)?;
    let eval = CheckpointEval {
        test: EvalReport::from(&evaluate_groups(&model, &splits.test, k)?),
        pseudo_unbiased_val: pseudo_unbiased_accuracy(&model, &splits.val, k)?.value,
    };
    create_dir(&cfg.out)?;
    write_json(&eval, &cfg.out.join("eval.json"))?;
    Ok(eval)
}

/// Full score matrix of a checkpoint on the training split plus the
/// per-class top 10.
pub fn cmd_scores(cfg: &ExperimentConfig, checkpoint: &Path, variant: ScoreVariant) -> Result<SpuriousnessMatrix<f64>> {
    let splits = load_splits(cfg)?;
    let model = Classifier::<f64>::load(checkpoint)?;
    check_compatible(&model, &splits.train)?;
    let matrix = score_matrix(&model, &splits.train, variant)?;
    create_dir(&cfg.out)?;
    matrix.write_csv(splits.train.vocabulary(), create_file(&cfg.out.join("scores.csv"))?)?;
    let mut w = csv::Writer::from_writer(create_file(&cfg.out.join("top_attributes.csv"))?);
    w.write_record(["class", "rank", "attribute", "score"])?;
    for c in 1..=splits.train.num_classes() {
        for (rank, a) in top_attributes(&matrix, splits.train.vocabulary(), c, 10).into_iter().enumerate() {
            w.write_record([
                c.to_string(),
                (rank + 1).to_string(),
                splits.train.vocabulary().name(a).to_owned(),
                matrix.get(c, a).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(cfg.out.join("top_attributes.csv"), e))?;
    Ok(matrix)
}

/// Training-split spuriousness embeddings with class and cluster columns.
pub fn cmd_embed(cfg: &ExperimentConfig, checkpoint: &Path, k: usize) -> Result<PathBuf> {
    let splits = load_splits(cfg)?;
    let model = Classifier::<f64>::load(checkpoint)?;
    check_compatible(&model, &splits.train)?;
    let matrix = score_matrix(&model, &splits.train, cfg.lbc.variant)?;
    let clusters = fit_dataset(&splits.train, &matrix, k, cfg.seed)?;
    let labeling = relabel(&splits.train, &clusters, &matrix);
    create_dir(&cfg.out)?;
    let path = cfg.out.join("embeddings.csv");
    let mut w = csv::Writer::from_writer(create_file(&path)?);
    let mut header = vec!["sample_id".to_owned(), "class".into(), "cluster".into()];
    header.extend(splits.train.vocabulary().attributes().iter().cloned());
    w.write_record(&header)?;
    for (i, e) in embed_all(&splits.train, &matrix).iter().enumerate() {
        let mut row = vec![labeling.ids[i].clone(), labeling.classes[i].to_string(), labeling.clusters[i].to_string()];
        row.extend(e.0.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_report(dir: &Path) -> Result<RunReport> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Human-readable summary of a run report.
pub fn format_report(report: &RunReport) -> String {
    let pct = |v: f64| format!("{:.1}", 100.0 * v);
    let mut s = String::new();
    s.push_str(&format!("seed {}  ({:.1}s)\n", report.seed, report.wall_clock_seconds));
    s.push_str("model        worst  average  gap\n");
    let mut line = |name: String, r: &EvalReport| {
        s.push_str(&format!("{name:<12} {:>5}  {:>7}  {:>4}\n", pct(r.worst), pct(r.average), pct(r.gap)));
    };
    line("erm".into(), &report.erm);
    line(format!("lbc (K={})", report.lbc.k), &report.lbc.test);
    for entry in &report.k_sweep {
        line(format!("lbc (K={})", entry.k), &entry.test);
    }
    s
}
