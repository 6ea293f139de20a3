//! Few-shot network intrusion detection by metric learning.
//!
//! A feed-forward encoder is trained with online-mined triplet losses on
//! class-balanced batches of tabular flow features. Classification happens
//! by nearest-neighbour voting against the cached, naturally imbalanced,
//! training embeddings.
//!
//! Module map:
//! - [`data`]: CSV ingestion, stratified splits, few-shot subsets, z-score
//!   normalisation and balanced batch sampling.
//! - [`nn`]: the encoder, manual backprop, AdamW and the cosine schedule.
//! - [`contrastive`]: distances, triplet mining strategies, the contrastive
//!   pair loss and offline samplers.
//! - [`inference`]: embedding index, KNN variants, random prototypes and
//!   the linear probe.
//! - [`metrics`]: confusion matrices and macro scores.
//! - [`harness`]: the subset / search / retrain / evaluate experiment loop.

pub mod bundle;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod harness;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use contrastive::{DistanceMetric, MiningOutcome, MiningStrategy};
pub use data::{FlowDataset, Normalizer, SampleWeights, SubsetSpec};
pub use error::{Error, Result};
pub use inference::{EmbeddingIndex, NeighborSet, VoteRule};
pub use metrics::{ConfusionMatrix, ScoreReport};
pub use nn::{EncoderConfig, EncoderParams};
pub use rng::Rng;
