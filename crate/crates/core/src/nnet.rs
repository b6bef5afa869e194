//! Fully connected classifier with a swappable head, cross-entropy training
//! and accuracy measurement.
//!
//! Output labels are 1-based: output `j` of the head corresponds to label
//! `j + 1`. Training targets are therefore classes `1..=C` for a C-way head
//! and fine labels `1..=K*C` for a diversified head.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedDataset, Sample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{stream_rng, Stream};

pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Affine layer `y = act(W x + b)` with `W` stored row-major as
/// `outputs x inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: Scalar"))]
pub struct Dense<F> {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { inputs, outputs, activation, weights: vec![F::zero(); inputs * outputs], bias: vec![F::zero(); outputs] }
    }

    /// Uniform initialisation in `[-s, s]`, `s = 1/sqrt(fan_in)`.
    pub fn uniform<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let s = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut draw = || F::lit(rng.random_range(-s..=s));
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Self { inputs, outputs, activation, weights, bias }
    }

    fn apply_into(&self, x: &[F], out: &mut Vec<F>) {
        out.clear();
        for (row, &b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            let mut z = b;
            for (&w, &xi) in row.iter().zip(x) {
                z = z + w * xi;
            }
            out.push(match self.activation {
                Activation::Relu => z.max(F::zero()),
                Activation::Identity => z,
            });
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Backbone of hidden layers followed by a linear classification head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: Scalar"))]
pub struct Classifier<F> {
    pub backbone: Vec<Dense<F>>,
    pub head: Dense<F>,
    pub rng_seed: u64,
}

fn head_rng(seed: u64, width: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (width as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(Stream::Head as u64);
    rng
}

impl<F: Scalar> Classifier<F> {
    /// ReLU backbone with the given hidden widths and a `width`-way head.
    pub fn new(input_dim: usize, hidden: &[usize], width: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Init);
        let mut fan_in = input_dim;
        let mut backbone = Vec::with_capacity(hidden.len());
        for &h in hidden {
            backbone.push(Dense::uniform(fan_in, h, Activation::Relu, &mut rng));
            fan_in = h;
        }
        let head = Dense::uniform(fan_in, width, Activation::Identity, &mut head_rng(seed, width));
        Self { backbone, head, rng_seed: seed }
    }

    /// Builds a classifier from explicit layers, checking that they compose.
    pub fn from_layers(backbone: Vec<Dense<F>>, head: Dense<F>, rng_seed: u64) -> Result<Self> {
        let model = Self { backbone, head, rng_seed };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let mut width = None;
        for layer in self.layers() {
            if layer.weights.len() != layer.inputs * layer.outputs || layer.bias.len() != layer.outputs {
                return Err(Error::DimensionMismatch {
                    expected: layer.inputs * layer.outputs,
                    got: layer.weights.len(),
                });
            }
            if let Some(w) = width {
                if layer.inputs != w {
                    return Err(Error::DimensionMismatch { expected: w, got: layer.inputs });
                }
            }
            if !layer.is_finite() {
                return Err(Error::InvalidConfig("classifier has non-finite parameters".into()));
            }
            width = Some(layer.outputs);
        }
        if self.head.activation != Activation::Identity {
            return Err(Error::InvalidConfig("head must be linear".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.backbone.first().unwrap_or(&self.head).inputs
    }

    pub fn head_width(&self) -> usize {
        self.head.outputs
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.backbone.iter().map(|l| l.outputs).collect()
    }

    /// Backbone then head.
    pub fn layers(&self) -> impl Iterator<Item = &Dense<F>> {
        self.backbone.iter().chain(std::iter::once(&self.head))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<F>> {
        self.backbone.iter_mut().chain(std::iter::once(&mut self.head))
    }

    fn check_input(&self, x: &[F]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Backbone output (penultimate activations).
    pub fn embed(&self, x: &[F]) -> Result<Vec<F>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.backbone {
            layer.apply_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Raw logits; no softmax.
    pub fn forward(&self, x: &[F]) -> Result<Vec<F>> {
        let h = self.embed(x)?;
        let mut out = Vec::with_capacity(self.head.outputs);
        self.head.apply_into(&h, &mut out);
        Ok(out)
    }

    /// 1-based index of the largest logit.
    pub fn predict(&self, x: &[F]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?) + 1)
    }

    /// Same backbone, freshly initialised `width`-way head.
    pub fn replace_head(&self, width: usize) -> Self {
        assert!(width >= 1, "head width must be positive");
        let fan_in = self.head.inputs;
        let head = Dense::uniform(fan_in, width, Activation::Identity, &mut head_rng(self.rng_seed, width));
        Self { backbone: self.backbone.clone(), head, rng_seed: self.rng_seed }
    }

    /// Same architecture, every parameter redrawn from `seed`.
    pub fn reinitialized(&self, seed: u64) -> Self {
        Self::new(self.input_dim(), &self.hidden_widths(), self.head_width(), seed)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters flattened layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<F> {
        self.layers().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_parameters(&mut self, params: &[F]) {
        assert_eq!(params.len(), self.num_parameters());
        let mut it = params.iter().copied();
        for layer in self.layers_mut() {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = it.next().unwrap();
            }
        }
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    ///
    /// `targets` are 1-based output labels.
    pub fn loss_and_gradient(&self, inputs: &[&[F]], targets: &[usize]) -> Result<(F, Gradients<F>)> {
        if inputs.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        assert_eq!(inputs.len(), targets.len());
        let width = self.head_width();
        let mut grads = Gradients::zeros_like(self);
        let mut total = F::zero();
        let n_layers = self.backbone.len() + 1;
        let mut acts: Vec<Vec<F>> = vec![Vec::new(); n_layers + 1];
        for (x, &t) in inputs.iter().zip(targets) {
            self.check_input(x)?;
            if t == 0 || t > width {
                return Err(Error::LabelOutOfRange { sample_id: String::new(), label: t, num_classes: width });
            }
            acts[0].clear();
            acts[0].extend_from_slice(x);
            for (i, layer) in self.layers().enumerate() {
                let (done, rest) = acts.split_at_mut(i + 1);
                layer.apply_into(&done[i], &mut rest[0]);
            }
            let logits = &acts[n_layers];
            let (loss, mut delta) = softmax_cross_entropy(logits, t - 1);
            total = total + loss;
            let layers: Vec<&Dense<F>> = self.layers().collect();
            for (li, layer) in layers.into_iter().enumerate().rev() {
                let input = &acts[li];
                let g = &mut grads.layers[li];
                for (o, &d) in delta.iter().enumerate() {
                    g.bias[o] = g.bias[o] + d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, &xi) in row.iter_mut().zip(input) {
                        *gw = *gw + d * xi;
                    }
                }
                if li == 0 {
                    break;
                }
                let mut prev = vec![F::zero(); layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p = *p + d * w;
                    }
                }
                // ReLU derivative of the layer that produced `input`.
                if self.backbone[li - 1].activation == Activation::Relu {
                    for (p, &a) in prev.iter_mut().zip(input) {
                        if a <= F::zero() {
                            *p = F::zero();
                        }
                    }
                }
                delta = prev;
            }
        }
        let scale = F::one() / F::from_count(inputs.len());
        grads.scale(scale);
        Ok((total * scale, grads))
    }

    pub fn gradient(&self, inputs: &[&[F]], targets: &[usize]) -> Result<Gradients<F>> {
        self.loss_and_gradient(inputs, targets).map(|(_, g)| g)
    }

    /// Mean cross-entropy without the gradient.
    pub fn loss(&self, inputs: &[&[F]], targets: &[usize]) -> Result<F> {
        if inputs.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let mut total = F::zero();
        for (x, &t) in inputs.iter().zip(targets) {
            let logits = self.forward(x)?;
            total = total + softmax_cross_entropy(&logits, t - 1).0;
        }
        Ok(total / F::from_count(inputs.len()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, &Checkpoint { format: CHECKPOINT_FORMAT.into(), model: self.clone() })?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }

    pub fn to_checkpoint_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Checkpoint { format: CHECKPOINT_FORMAT.into(), model: self.clone() })?)
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let ckpt: Checkpoint<F> = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidConfig(format!("unknown checkpoint format `{}`", ckpt.format)));
        }
        ckpt.model.validate()?;
        Ok(ckpt.model)
    }
}

const CHECKPOINT_FORMAT: &str = "lbc-classifier/1";

#[derive(Serialize, Deserialize)]
#[serde(bound(deserialize = "F: Scalar"))]
struct Checkpoint<F> {
    format: String,
    #[serde(flatten)]
    model: Classifier<F>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Loss and logit gradient `softmax(z) - onehot(target)` for one sample.
fn softmax_cross_entropy<F: Scalar>(logits: &[F], target: usize) -> (F, Vec<F>) {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut probs: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: F = probs.iter().copied().sum();
    let loss = sum.ln() - (logits[target] - max);
    for p in probs.iter_mut() {
        *p = *p / sum;
    }
    probs[target] = probs[target] - F::one();
    (loss, probs)
}

/// Parameter-shaped gradient, one entry per layer (backbone then head).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<LayerGradient<F>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient<F> {
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(model: &Classifier<F>) -> Self {
        Self {
            layers: model
                .layers()
                .map(|l| LayerGradient {
                    weights: vec![F::zero(); l.weights.len()],
                    bias: vec![F::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    fn scale(&mut self, s: F) {
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = *v * s;
            }
        }
    }

    /// Same ordering as [`Classifier::parameters`].
    pub fn flatten(&self) -> Vec<F> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn norm(&self) -> F {
        self.flatten().iter().map(|&v| v * v).sum::<F>().sqrt()
    }
}

/// Optimiser settings for one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Cap on batches per epoch; 0 means a full pass over the data.
    pub batches_per_epoch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 30,
            batches_per_epoch: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay added to the gradient.
#[derive(Clone, Debug)]
pub struct Sgd<F> {
    learning_rate: F,
    momentum: F,
    weight_decay: F,
    velocity: Option<Gradients<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            learning_rate: F::lit(config.learning_rate),
            momentum: F::lit(config.momentum),
            weight_decay: F::lit(config.weight_decay),
            velocity: None,
        }
    }

    pub fn step(&mut self, model: &mut Classifier<F>, grads: &Gradients<F>) {
        let velocity = self.velocity.get_or_insert_with(|| Gradients::zeros_like(model));
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        for ((layer, g), v) in model.layers_mut().zip(&grads.layers).zip(&mut velocity.layers) {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
            for ((p, &gi), vi) in params.zip(gs).zip(vs) {
                *vi = mu * *vi + gi + wd * *p;
                *p = *p - lr * *vi;
            }
        }
    }
}

/// Trained model plus the mean loss of every epoch.
#[derive(Clone, Debug)]
pub struct Trained<F> {
    pub model: Classifier<F>,
    pub epoch_losses: Vec<F>,
}

/// Mini-batch empirical risk minimisation on class labels.
pub fn train_erm<F: Scalar>(
    model: Classifier<F>,
    dataset: &AnnotatedDataset<F>,
    config: &TrainConfig,
) -> Result<Trained<F>> {
    config.validate()?;
    if model.head_width() != dataset.num_classes() {
        return Err(Error::HeadMismatch { width: model.head_width(), num_classes: dataset.num_classes() });
    }
    if dataset.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut model = model;
    let mut sgd = Sgd::new(config);
    let mut rng = stream_rng(config.seed, Stream::Erm);
    let samples = dataset.samples();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut batches = order.chunks(config.batch_size).collect::<Vec<_>>();
        if config.batches_per_epoch > 0 {
            batches.truncate(config.batches_per_epoch);
        }
        let mut total = F::zero();
        for batch in &batches {
            let inputs: Vec<&[F]> = batch.iter().map(|&i| samples[i].features.as_slice()).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| samples[i].label).collect();
            let (loss, grads) = model.loss_and_gradient(&inputs, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, loss: loss.as_f64() });
            }
            sgd.step(&mut model, &grads);
            total = total + loss;
        }
        epoch_losses.push(total / F::from_count(batches.len().max(1)));
    }
    Ok(Trained { model, epoch_losses })
}

/// Fraction of samples whose predicted output label equals `label_of`.
pub fn accuracy<'a, F, I, L>(model: &Classifier<F>, samples: I, label_of: L) -> Result<F>
where
    F: Scalar,
    I: IntoIterator<Item = &'a Sample<F>>,
    L: Fn(&Sample<F>) -> usize,
{
    let mut n = 0usize;
    let mut correct = 0usize;
    for s in samples {
        n += 1;
        if model.predict(&s.features)? == label_of(s) {
            correct += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptySampleSet);
    }
    Ok(F::from_count(correct) / F::from_count(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AttributeVocabulary;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy_dataset() -> AnnotatedDataset<f64> {
        let pts = [([1.0, 1.0], 1), ([2.0, 1.5], 1), ([-1.0, -1.0], 2), ([-1.5, -2.0], 2)];
        let samples = pts
            .iter()
            .enumerate()
            .map(|(i, (x, y))| Sample {
                id: format!("t{i}"),
                features: x.to_vec(),
                label: *y,
                attributes: vec![],
                group: None,
            })
            .collect();
        AnnotatedDataset::new(samples, AttributeVocabulary::from_words(vec![], 1).unwrap(), 2).unwrap()
    }

    /// Plain matrix-vector reimplementation of the forward pass.
    fn oracle_forward(model: &Classifier<f64>, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in model.layers() {
            let mut out = vec![0.0; layer.outputs];
            for o in 0..layer.outputs {
                let mut z = layer.bias[o];
                for i in 0..layer.inputs {
                    z += layer.weights[o * layer.inputs + i] * h[i];
                }
                out[o] = if layer.activation == Activation::Relu { z.max(0.0) } else { z };
            }
            h = out;
        }
        h
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let model = Classifier::<f64>::from_layers(
            vec![Dense::zeros(3, 4, Activation::Relu)],
            Dense::zeros(4, 2, Activation::Identity),
            0,
        )
        .unwrap();
        assert_eq!(model.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_picks_first_column() {
        let mut head = Dense::zeros(3, 2, Activation::Identity);
        head.weights = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        head.bias = vec![0.5, -0.5];
        let model = Classifier::from_layers(vec![], head, 0).unwrap();
        assert_eq!(model.forward(&[1.0, 0.0, 0.0]).unwrap(), vec![1.5, 3.5]);
    }

    #[test]
    fn forward_matches_matrix_oracle() {
        let model = Classifier::<f64>::new(7, &[16, 8], 3, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = model.forward(&x).unwrap();
            for (a, b) in got.iter().zip(oracle_forward(&model, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let model = Classifier::<f64>::new(3, &[4], 2, 0);
        assert!(matches!(model.forward(&[1.0]), Err(Error::DimensionMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn replace_head_keeps_backbone() {
        let model = Classifier::<f64>::new(5, &[8, 8], 2, 3);
        let wide = model.replace_head(6);
        assert_eq!(wide.head_width(), 6);
        assert_eq!(wide.backbone, model.backbone);
        let back = wide.replace_head(2);
        assert_eq!(back.backbone, model.backbone);
        let x = [0.3, -0.1, 2.0, 0.0, 1.0];
        assert_eq!(model.embed(&x).unwrap(), wide.embed(&x).unwrap());
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let ds = toy_dataset();
        let config = TrainConfig { learning_rate: 0.05, batch_size: 4, epochs: 200, ..Default::default() };
        let trained = train_erm(Classifier::new(2, &[8], 2, 1), &ds, &config).unwrap();
        let acc = accuracy(&trained.model, ds.samples(), |s| s.label).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn full_batch_loss_non_increasing_with_small_step() {
        let ds = toy_dataset();
        let config = TrainConfig {
            learning_rate: 1e-3,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 4,
            epochs: 100,
            ..Default::default()
        };
        let trained = train_erm(Classifier::new(2, &[8], 2, 5), &ds, &config).unwrap();
        for w in trained.epoch_losses.windows(2) {
            assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let ds = toy_dataset();
        let model = Classifier::new(2, &[8], 2, 1);
        let config = TrainConfig { learning_rate: 0.0, batch_size: 2, epochs: 3, ..Default::default() };
        let trained = train_erm(model.clone(), &ds, &config).unwrap();
        assert_eq!(trained.model, model);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let ds = toy_dataset();
        let config = TrainConfig { learning_rate: 1e300, batch_size: 4, epochs: 5, ..Default::default() };
        let err = train_erm(Classifier::new(2, &[8], 2, 1), &ds, &config).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    }

    #[test]
    fn saturated_correct_prediction_has_tiny_gradient() {
        let mut head = Dense::zeros(1, 2, Activation::Identity);
        head.weights = vec![100.0, -100.0];
        let model = Classifier::from_layers(vec![], head, 0).unwrap();
        let x = [1.0];
        let g = model.gradient(&[&x], &[1]).unwrap();
        assert!(g.norm() < 1e-80);
    }

    #[test]
    fn duplicated_batch_gives_identical_gradient() {
        let model = Classifier::<f64>::new(3, &[5], 3, 11);
        let a = [0.1, 0.2, -0.3];
        let b = [1.0, -1.0, 0.5];
        let g1 = model.gradient(&[&a, &b], &[1, 3]).unwrap();
        let g2 = model.gradient(&[&a, &b, &a, &b], &[1, 3, 1, 3]).unwrap();
        for (x, y) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn accuracy_constant_predictor() {
        let mut head = Dense::zeros(2, 2, Activation::Identity);
        head.bias = vec![1.0, 0.0];
        let model = Classifier::from_layers(vec![], head, 0).unwrap();
        let ds = toy_dataset();
        let class1: Vec<_> = ds.samples().iter().filter(|s| s.label == 1).collect();
        assert_eq!(accuracy(&model, class1, |s| s.label).unwrap(), 1.0);
        assert_eq!(accuracy(&model, ds.samples(), |s| s.label).unwrap(), 0.5);
        assert!(matches!(accuracy(&model, &[], |s| s.label), Err(Error::EmptySampleSet)));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_forward() {
        let model = Classifier::<f64>::new(4, &[6, 5], 3, 17);
        let text = model.to_checkpoint_string().unwrap();
        let loaded = Classifier::<f64>::from_checkpoint_str(&text).unwrap();
        let x = [0.25, -1.5, 3.0, 0.125];
        let (a, b) = (model.forward(&x).unwrap(), loaded.forward(&x).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-12);
        }
        assert_eq!(loaded, model);
    }

    #[test]
    fn checkpoint_with_mismatched_layers_rejected() {
        let mut model = Classifier::<f64>::new(4, &[6], 3, 17);
        model.head.inputs = 5;
        model.head.weights = vec![0.0; 15];
        let text = model.to_checkpoint_string().unwrap();
        assert!(Classifier::<f64>::from_checkpoint_str(&text).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let model = Classifier::<f32>::new(3, &[4], 2, 2);
        let logits = model.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(logits.len(), 2);
    }

    proptest! {
        #[test]
        fn training_is_deterministic(seed in 0u64..1000) {
            let ds = toy_dataset();
            let config = TrainConfig { batch_size: 2, epochs: 5, seed, ..Default::default() };
            let a = train_erm(Classifier::new(2, &[4], 2, seed), &ds, &config).unwrap();
            let b = train_erm(Classifier::new(2, &[4], 2, seed), &ds, &config).unwrap();
            prop_assert_eq!(a.model, b.model);
        }
    }
}
