//! Distance kernels, triplet and contrastive losses, online mining with
//! exact embedding gradients, and offline triplet/pair samplers.

mod distance;
mod mining;
mod offline;
mod pair;

pub use distance::{chain_pair_grads, pairwise_distances, DistanceMetric};
pub use mining::{
    batch_all, batch_all_with, batch_hard, batch_semi_hard, mine, triplet_loss, BatchAllReduction,
    MiningOutcome, MiningStrategy,
};
pub use offline::{sample_offline_pairs, sample_offline_triplets, OfflinePairSet, OfflineTripletSet};
pub use pair::{contrastive_pair_loss, contrastive_batch_loss, offline_triplet_batch_loss, PairBatchLoss, TripletBatchLoss};
