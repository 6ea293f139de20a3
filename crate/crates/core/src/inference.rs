//! Classification in embedding space.
//!
//! Training rows are embedded once into an [`EmbeddingIndex`]. Test
//! embeddings are classified by exact KNN (hard, soft or
//! temperature-weighted vote), by distance to one random prototype per
//! class, or by a linear probe trained on the cached embeddings.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::DistanceMetric;
use crate::data::{compute_sample_weights, BalancedSampler, FlowDataset};
use crate::error::{Error, Result};
use crate::nn::{softmax_xent, AdamW, AdamWConfig, EncoderParams, Layer};
use crate::rng::Rng;

/// Anything that maps feature rows to embedding rows.
pub trait Embedder {
    fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>>;
}

impl Embedder for EncoderParams {
    fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        EncoderParams::embed(self, x)
    }
}

/// Features used as-is, for the raw-feature KNN baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Embedder for Identity {
    fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(x.to_owned())
    }
}

/// Cached reference embeddings and their labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    pub embeddings: Array2<f64>,
    pub labels: Vec<usize>,
    pub metric: DistanceMetric,
    pub class_map: Vec<String>,
}

/// The `k` nearest references, closest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
    /// Neighbour count per class id.
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum VoteRule {
    Hard,
    /// Class with the smallest mean neighbour distance.
    Soft,
    /// Sum of `exp(-d / temperature)` per class.
    Weighted { temperature: f64 },
}

impl Default for VoteRule {
    fn default() -> Self {
        VoteRule::Hard
    }
}

impl fmt::Display for VoteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VoteRule::Hard => f.write_str("hard"),
            VoteRule::Soft => f.write_str("soft"),
            VoteRule::Weighted { temperature } => write!(f, "weighted:{temperature}"),
        }
    }
}

impl FromStr for VoteRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.split_once(':') {
            None if lower == "hard" => Ok(VoteRule::Hard),
            None if lower == "soft" => Ok(VoteRule::Soft),
            None if lower == "weighted" => Ok(VoteRule::Weighted { temperature: 0.1 }),
            Some(("weighted", t)) => {
                let temperature: f64 = t
                    .parse()
                    .map_err(|_| Error::Config(format!("bad temperature `{t}`")))?;
                if !(temperature > 0.0) {
                    return Err(Error::Config("temperature must be positive".into()));
                }
                Ok(VoteRule::Weighted { temperature })
            }
            _ => Err(Error::Config(format!("unknown vote rule `{s}`"))),
        }
    }
}

pub fn build_index<E: Embedder + ?Sized>(
    embedder: &E,
    ds: &FlowDataset,
    metric: DistanceMetric,
) -> Result<EmbeddingIndex> {
    let embeddings = embedder.embed(&ds.features)?;
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reference embeddings".into()));
    }
    Ok(EmbeddingIndex {
        embeddings,
        labels: ds.labels.clone(),
        metric,
        class_map: ds.class_map.clone(),
    })
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_map.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Exact k-nearest references by linear scan. Equal distances are
    /// ordered by reference index.
    pub fn knn_neighbors(&self, z: ArrayView1<f64>, k: usize) -> Result<NeighborSet> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("empty reference index".into()));
        }
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} outside 1..={}",
                self.len()
            )));
        }
        let mut scored: Vec<(f64, usize)> = self
            .embeddings
            .outer_iter()
            .enumerate()
            .map(|(i, r)| (self.metric.distance(z, r), i))
            .collect();
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_distance_then_index);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_distance_then_index);
        let mut class_counts = vec![0; self.n_classes()];
        for &(_, i) in &scored {
            class_counts[self.labels[i]] += 1;
        }
        Ok(NeighborSet {
            indices: scored.iter().map(|&(_, i)| i).collect(),
            distances: scored.iter().map(|&(d, _)| d).collect(),
            class_counts,
        })
    }

    /// Predicted class and per-class scores. For `Hard` and `Weighted`
    /// higher scores win; for `Soft` lower mean distances win and classes
    /// without neighbours score `+inf`. Ties go to the smaller cumulative
    /// neighbour distance, then the lower class id.
    pub fn knn_predict(&self, z: ArrayView1<f64>, k: usize, rule: VoteRule) -> Result<(usize, Vec<f64>)> {
        let nb = self.knn_neighbors(z, k)?;
        let c = self.n_classes();
        let mut cum = vec![0.0; c];
        for (&i, &d) in nb.indices.iter().zip(&nb.distances) {
            cum[self.labels[i]] += d;
        }
        let scores: Vec<f64> = match rule {
            VoteRule::Hard => nb.class_counts.iter().map(|&n| n as f64).collect(),
            VoteRule::Soft => (0..c)
                .map(|cls| {
                    if nb.class_counts[cls] == 0 {
                        f64::INFINITY
                    } else {
                        cum[cls] / nb.class_counts[cls] as f64
                    }
                })
                .collect(),
            VoteRule::Weighted { temperature } => {
                if !(temperature > 0.0) {
                    return Err(Error::InvalidArgument("temperature must be positive".into()));
                }
                // Shifting by the nearest distance rescales every score equally.
                let d0 = nb.distances[0];
                let mut s = vec![0.0; c];
                for (&i, &d) in nb.indices.iter().zip(&nb.distances) {
                    s[self.labels[i]] += (-(d - d0) / temperature).exp();
                }
                s
            }
        };
        let higher_wins = !matches!(rule, VoteRule::Soft);
        let mut best: Option<usize> = None;
        for cls in (0..c).filter(|&cls| nb.class_counts[cls] > 0) {
            let better = match best {
                None => true,
                Some(b) => {
                    let ord = scores[cls].total_cmp(&scores[b]);
                    let ord = if higher_wins { ord } else { ord.reverse() };
                    ord == Ordering::Greater
                        || (ord == Ordering::Equal && cum[cls] < cum[b])
                }
            };
            if better {
                best = Some(cls);
            }
        }
        Ok((best.expect("k >= 1 neighbour"), scores))
    }

    /// One uniformly drawn reference per class; predicts the class of the
    /// closest draw (lower class id on ties).
    pub fn random_prototype_predict(&self, z: ArrayView1<f64>, rng: &mut Rng) -> Result<usize> {
        let groups = self.groups();
        if let Some(missing) = groups.iter().position(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!(
                "class `{}` has no references",
                self.class_map[missing]
            )));
        }
        let mut best = (f64::INFINITY, 0);
        for (cls, members) in groups.iter().enumerate() {
            let r = members[rng.below(members.len())];
            let d = self.metric.distance(z, self.embeddings.row(r));
            if d < best.0 {
                best = (d, cls);
            }
        }
        Ok(best.1)
    }

    fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.n_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            g[l].push(i);
        }
        g
    }

    /// Subsamples every present class down to the smallest class count.
    pub fn rebalance(&self, rng: &mut Rng) -> EmbeddingIndex {
        let groups = self.groups();
        let target = groups
            .iter()
            .filter(|g| !g.is_empty())
            .map(Vec::len)
            .min()
            .unwrap_or(0);
        let mut keep: Vec<usize> = Vec::new();
        for g in groups.iter().filter(|g| !g.is_empty()) {
            keep.extend(rng.sample_indices(g.len(), target).into_iter().map(|i| g[i]));
        }
        keep.sort_unstable();
        EmbeddingIndex {
            embeddings: self.embeddings.select(Axis(0), &keep),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            metric: self.metric,
            class_map: self.class_map.clone(),
        }
    }

    /// KNN predictions for every row of `z`.
    pub fn predict_all(&self, z: &Array2<f64>, k: usize, rule: VoteRule) -> Result<Vec<usize>> {
        let rows: Vec<usize> = (0..z.nrows()).collect();
        rows.par_iter()
            .map(|&i| self.knn_predict(z.row(i), k, rule).map(|(y, _)| y))
            .collect()
    }

    /// Random-prototype predictions. Each row draws from its own stream
    /// derived from `seed`, so the output does not depend on scheduling.
    pub fn prototype_predict_all(&self, z: &Array2<f64>, seed: u64) -> Result<Vec<usize>> {
        let rows: Vec<usize> = (0..z.nrows()).collect();
        rows.par_iter()
            .map(|&i| {
                let mut rng = Rng::derive(seed, i as u64);
                self.random_prototype_predict(z.row(i), &mut rng)
            })
            .collect()
    }
}

pub fn knn_neighbors(index: &EmbeddingIndex, z: ArrayView1<f64>, k: usize) -> Result<NeighborSet> {
    index.knn_neighbors(z, k)
}

pub fn knn_predict(index: &EmbeddingIndex, z: ArrayView1<f64>, k: usize, rule: VoteRule) -> Result<(usize, Vec<f64>)> {
    index.knn_predict(z, k, rule)
}

pub fn random_prototype_predict(index: &EmbeddingIndex, z: ArrayView1<f64>, rng: &mut Rng) -> Result<usize> {
    index.random_prototype_predict(z, rng)
}

pub fn rebalance_index(index: &EmbeddingIndex, rng: &mut Rng) -> EmbeddingIndex {
    index.rebalance(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Class-balanced batches when true, natural class frequencies otherwise.
    pub balanced: bool,
    pub seed: u64,
}

/// Affine classification head over frozen embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub layer: Layer,
}

impl LinearProbe {
    pub fn logits(&self, z: &Array2<f64>) -> Array2<f64> {
        self.layer.apply(z)
    }

    /// Argmax of the logits; lowest class id on ties.
    pub fn predict(&self, z: &Array2<f64>) -> Vec<usize> {
        self.logits(z)
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Trains a zero-initialised softmax head on cached embeddings.
pub fn linear_probe(
    embeddings: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<LinearProbe> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument("probe needs at least two classes".into()));
    }
    if embeddings.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::Shape("probe embeddings and labels".into()));
    }
    let batch = cfg.batch_size.max(1);
    let n = labels.len();
    let steps_per_epoch = n.div_ceil(batch);
    let mut layers = vec![Layer::zeros(n_classes, embeddings.ncols())];
    let mut opt = AdamW::new(cfg.optimizer, &layers, cfg.epochs * steps_per_epoch);
    let mut rng = Rng::new(cfg.seed);
    let sampler = if cfg.balanced {
        Some(BalancedSampler::new(&compute_sample_weights(labels))?)
    } else {
        None
    };
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if sampler.is_none() {
            rng.shuffle(&mut order);
        }
        for step in 0..steps_per_epoch {
            let idx: Vec<usize> = match &sampler {
                Some(s) => s.draw(batch, &mut rng),
                None => order[step * batch..((step + 1) * batch).min(n)].to_vec(),
            };
            let x = embeddings.select(Axis(0), &idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let logits = layers[0].apply(&x);
            let (_, dlogits) = softmax_xent(&logits, &y)?;
            let grad = Layer {
                w: dlogits.t().dot(&x),
                b: dlogits.sum_axis(Axis(0)),
            };
            opt.step(&mut layers, std::slice::from_ref(&grad))?;
        }
        if !layers[0].is_finite() {
            return Err(Error::NonFinite("linear probe weights".into()));
        }
    }
    Ok(LinearProbe {
        layer: layers.pop().expect("one layer"),
    })
}
