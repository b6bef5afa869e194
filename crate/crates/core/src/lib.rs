//! Detecting and mitigating a classifier's reliance on spurious
//! class-attribute correlations.
//!
//! The pipeline scores every class-attribute pair by how differently an
//! ERM classifier performs with and without the attribute, embeds each
//! training sample by the scores of its attributes, clusters those
//! embeddings into prediction behaviours, and retrains a `K * C`-way head
//! on (class, behaviour) labels with balanced batches. Model selection uses
//! attribute-conditioned validation accuracy, so no group labels are needed
//! for training.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which the command-line runner uses.

pub mod corpus;
pub mod error;
pub mod grouping;
pub mod harness;
pub mod lbc;
pub mod nnet;
pub mod sampler;
pub mod scalar;
pub mod seed;
pub mod spuriousness;
pub mod synthgen;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Sample = corpus::Sample<f64>;
pub type Dataset = corpus::AnnotatedDataset<f64>;
pub type Classifier = nnet::Classifier<f64>;
pub type Gradients = nnet::Gradients<f64>;
pub type SpuriousnessMatrix = spuriousness::SpuriousnessMatrix<f64>;
pub type SpuriousnessEmbedding = spuriousness::SpuriousnessEmbedding<f64>;
pub type ClusterModel = grouping::ClusterModel<f64>;
pub type BatchPlan = sampler::BatchPlan<f64>;
pub type LbcOutcome = lbc::LbcOutcome<f64>;
pub type GroupReport = lbc::GroupReport<f64>;
pub type SyntheticCorpus = synthgen::SyntheticCorpus<f64>;

pub type Classifier32 = nnet::Classifier<f32>;
pub type Dataset32 = corpus::AnnotatedDataset<f32>;
