use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::config::{Inference, ModelFamily, ProbeSettings, TrialConfig};
use crate::contrastive::{
    batch_all_with, contrastive_batch_loss, mine, offline_triplet_batch_loss, sample_offline_pairs, sample_offline_triplets,
    BatchAllReduction, DistanceMetric, MiningStrategy,
};
use crate::data::{BalancedSampler, FlowDataset};
use crate::error::{Error, Result};
use crate::inference::{build_index, linear_probe, EmbeddingIndex, Identity, LinearProbe, ProbeConfig, VoteRule};
use crate::nn::{backward, forward, init_encoder, softmax_xent, AdamW, AdamWConfig, EncoderConfig, EncoderParams};
use crate::rng::Rng;

/// Batches without a single valid triplet, or with an all-zero embedding
/// under cosine distance, are redrawn at most this often per optimiser step.
const MAX_REDRAWS: usize = 1000;

/// Family-level choices that stay fixed across a hyperparameter search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub family: ModelFamily,
    pub mining: MiningStrategy,
    pub reduction: BatchAllReduction,
    pub metric: DistanceMetric,
    pub inference: Inference,
    pub offline_count: usize,
    pub probe: ProbeSettings,
}

/// A trained model ready to label normalised feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub family: ModelFamily,
    pub inference: Inference,
    pub k: usize,
    pub encoder: Option<EncoderParams>,
    pub index: Option<EmbeddingIndex>,
    pub balanced_index: Option<EmbeddingIndex>,
    pub probe: Option<LinearProbe>,
    pub inference_seed: u64,
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
}

impl TrainedModel {
    /// Embeds rows with the trained encoder (identity for raw KNN).
    pub fn embed(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        match &self.encoder {
            Some(enc) => enc.embed(x),
            None => Ok(x.to_owned()),
        }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        if self.family == ModelFamily::Mlp {
            let logits = self.embed(x)?;
            return Ok(argmax_rows(&logits));
        }
        let z = self.embed(x)?;
        let index = self
            .index
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no reference index".into()))?;
        match self.inference {
            Inference::Knn(rule) => index.predict_all(&z, self.k.min(index.len()), rule),
            Inference::BalancedKnn => {
                let bal = self
                    .balanced_index
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("balanced index not prepared".into()))?;
                bal.predict_all(&z, self.k.min(bal.len()), VoteRule::Hard)
            }
            Inference::RandomPrototype => index.prototype_predict_all(&z, self.inference_seed),
            Inference::LinearProbe | Inference::ImbalancedLinear => {
                let probe = self
                    .probe
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("probe not trained".into()))?;
                Ok(probe.predict(&z))
            }
        }
    }

    /// Same encoder and reference set, different inference rule. Builds the
    /// balanced index or trains the probe as needed.
    pub fn with_inference(&self, inference: Inference, probe: &ProbeSettings, seed: u64) -> Result<TrainedModel> {
        let mut out = self.clone();
        out.inference = inference;
        out.balanced_index = None;
        out.probe = None;
        out.inference_seed = seed;
        if self.family == ModelFamily::Mlp {
            return Ok(out);
        }
        let index = self
            .index
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no reference index".into()))?;
        match inference {
            Inference::BalancedKnn => {
                out.balanced_index = Some(index.rebalance(&mut Rng::new(seed)));
            }
            Inference::LinearProbe | Inference::ImbalancedLinear => {
                let cfg = ProbeConfig {
                    optimizer: AdamWConfig {
                        lr: probe.learning_rate,
                        ..AdamWConfig::default()
                    },
                    epochs: probe.epochs,
                    batch_size: probe.batch_size,
                    balanced: inference == Inference::LinearProbe,
                    seed,
                };
                out.probe = Some(linear_probe(&index.embeddings, &index.labels, index.n_classes(), &cfg)?);
            }
            Inference::Knn(_) | Inference::RandomPrototype => {}
        }
        Ok(out)
    }
}

fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.outer_iter()
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

fn encoder_config(trial: &TrialConfig, f_in: usize, f_out: usize) -> EncoderConfig {
    EncoderConfig {
        f_in,
        hidden_width: trial.hidden_width,
        depth: trial.depth,
        f_out,
        dropout_p: trial.dropout,
    }
}

fn optimizer(trial: &TrialConfig) -> AdamWConfig {
    AdamWConfig {
        lr: trial.learning_rate,
        beta1: trial.beta1,
        beta2: trial.beta2,
        eps: 1e-8,
        weight_decay: trial.weight_decay,
    }
}

fn check_finite(loss: f64, params: &EncoderParams) -> Result<()> {
    if !loss.is_finite() || !params.is_finite() {
        return Err(Error::NonFinite("training diverged".into()));
    }
    Ok(())
}

/// Trains one model on already-normalised data.
pub fn train_model(
    settings: &TrainSettings,
    trial: &TrialConfig,
    ds: &FlowDataset,
    seed: u64,
) -> Result<(TrainedModel, TrainingLog)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if trial.batch_size < 2 && settings.family.is_gradient_based() {
        return Err(Error::InvalidArgument("batch size must be at least 2".into()));
    }
    let mut rng = Rng::new(seed);
    let mut log = TrainingLog::default();
    let encoder = match settings.family {
        ModelFamily::Triplet => Some(train_online_triplet(settings, trial, ds, &mut rng, &mut log)?),
        ModelFamily::TripletOffline => Some(train_offline_triplet(settings, trial, ds, &mut rng, &mut log)?),
        ModelFamily::Siamese => Some(train_siamese(settings, trial, ds, &mut rng, &mut log)?),
        ModelFamily::Mlp => Some(train_mlp(trial, ds, &mut rng, &mut log)?),
        ModelFamily::RawKnn => None,
    };
    let index = match (&encoder, settings.family) {
        (_, ModelFamily::Mlp) => None,
        (Some(enc), _) => Some(build_index(enc, ds, settings.metric)?),
        (None, _) => Some(build_index(&Identity, ds, settings.metric)?),
    };
    let base = TrainedModel {
        family: settings.family,
        inference: Inference::Knn(VoteRule::Hard),
        k: trial.k,
        encoder,
        index,
        balanced_index: None,
        probe: None,
        inference_seed: 0,
    };
    let inference_seed = rng.next_seed();
    let model = base.with_inference(settings.inference, &settings.probe, inference_seed)?;
    Ok((model, log))
}

fn train_online_triplet(
    settings: &TrainSettings,
    trial: &TrialConfig,
    ds: &FlowDataset,
    rng: &mut Rng,
    log: &mut TrainingLog,
) -> Result<EncoderParams> {
    let mut params = init_encoder(&encoder_config(trial, ds.n_features(), trial.f_out), rng)?;
    let sampler = BalancedSampler::from_labels(&ds.labels)?;
    let steps = ds.len().div_ceil(trial.batch_size);
    let mut opt = AdamW::new(optimizer(trial), &params.layers, trial.epochs * steps);
    for _ in 0..trial.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps {
            let mut redraws = 0;
            let (trace, out) = loop {
                let idx = sampler.draw(trial.batch_size, rng);
                let x = ds.features.select(Axis(0), &idx);
                let y: Vec<usize> = idx.iter().map(|&i| ds.labels[i]).collect();
                let (z, trace) = forward(&params, &x, true, rng)?;
                let mined = match settings.mining {
                    MiningStrategy::BatchAll => batch_all_with(&z, &y, trial.margin, settings.metric, settings.reduction),
                    other => mine(other, &z, &y, trial.margin, settings.metric),
                };
                match mined {
                    Ok(out) => break (trace, out),
                    Err(Error::NoValidTriplets | Error::ZeroNorm(_)) if redraws < MAX_REDRAWS => redraws += 1,
                    Err(e) => return Err(e),
                }
            };
            let grads = backward(&params, &trace, &out.grad_z)?;
            opt.step(&mut params.layers, &grads)?;
            check_finite(out.loss, &params)?;
            epoch_loss += out.loss;
        }
        log.epoch_losses.push(epoch_loss / steps as f64);
    }
    Ok(params)
}

fn gather(ds: &FlowDataset, idx: impl Iterator<Item = usize>) -> Array2<f64> {
    let rows: Vec<usize> = idx.collect();
    ds.features.select(Axis(0), &rows)
}

fn train_offline_triplet(
    settings: &TrainSettings,
    trial: &TrialConfig,
    ds: &FlowDataset,
    rng: &mut Rng,
    log: &mut TrainingLog,
) -> Result<EncoderParams> {
    let mut params = init_encoder(&encoder_config(trial, ds.n_features(), trial.f_out), rng)?;
    let set = sample_offline_triplets(&ds.labels, settings.offline_count, rng)?;
    let n = set.triplets.len();
    let b = trial.batch_size;
    let steps = n.div_ceil(b);
    let mut opt = AdamW::new(optimizer(trial), &params.layers, trial.epochs * steps);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..trial.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(b) {
            let m = chunk.len();
            let triplets = &set.triplets;
            let trip = |slot: usize| chunk.iter().map(move |&t| triplets[t][slot]);
            let x = concatenate(
                Axis(0),
                &[gather(ds, trip(0)).view(), gather(ds, trip(1)).view(), gather(ds, trip(2)).view()],
            )
            .expect("equal widths");
            let (z, trace) = forward(&params, &x, true, rng)?;
            let out = offline_triplet_batch_loss(
                &z.slice(s![0..m, ..]).to_owned(),
                &z.slice(s![m..2 * m, ..]).to_owned(),
                &z.slice(s![2 * m.., ..]).to_owned(),
                trial.margin,
                settings.metric,
            );
            let out = match out {
                Err(Error::ZeroNorm(_)) => continue,
                other => other?,
            };
            let grad_z = concatenate(
                Axis(0),
                &[out.grad_anchor.view(), out.grad_positive.view(), out.grad_negative.view()],
            )
            .expect("equal widths");
            let grads = backward(&params, &trace, &grad_z)?;
            opt.step(&mut params.layers, &grads)?;
            check_finite(out.loss, &params)?;
            epoch_loss += out.loss;
        }
        log.epoch_losses.push(epoch_loss / steps as f64);
    }
    Ok(params)
}

fn train_siamese(
    settings: &TrainSettings,
    trial: &TrialConfig,
    ds: &FlowDataset,
    rng: &mut Rng,
    log: &mut TrainingLog,
) -> Result<EncoderParams> {
    let mut params = init_encoder(&encoder_config(trial, ds.n_features(), trial.f_out), rng)?;
    let set = sample_offline_pairs(&ds.labels, settings.offline_count, rng)?;
    let n = set.pairs.len();
    let b = trial.batch_size;
    let steps = n.div_ceil(b);
    let mut opt = AdamW::new(optimizer(trial), &params.layers, trial.epochs * steps);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..trial.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(b) {
            let m = chunk.len();
            let left = gather(ds, chunk.iter().map(|&p| set.pairs[p].0));
            let right = gather(ds, chunk.iter().map(|&p| set.pairs[p].1));
            let similar: Vec<bool> = chunk.iter().map(|&p| set.similar[p]).collect();
            let x = concatenate(Axis(0), &[left.view(), right.view()]).expect("equal widths");
            let (z, trace) = forward(&params, &x, true, rng)?;
            let out = contrastive_batch_loss(
                &z.slice(s![0..m, ..]).to_owned(),
                &z.slice(s![m.., ..]).to_owned(),
                &similar,
                trial.margin,
                settings.metric,
            );
            let out = match out {
                Err(Error::ZeroNorm(_)) => continue,
                other => other?,
            };
            let grad_z = concatenate(Axis(0), &[out.grad_left.view(), out.grad_right.view()]).expect("equal widths");
            let grads = backward(&params, &trace, &grad_z)?;
            opt.step(&mut params.layers, &grads)?;
            check_finite(out.loss, &params)?;
            epoch_loss += out.loss;
        }
        log.epoch_losses.push(epoch_loss / steps as f64);
    }
    Ok(params)
}

fn train_mlp(trial: &TrialConfig, ds: &FlowDataset, rng: &mut Rng, log: &mut TrainingLog) -> Result<EncoderParams> {
    let mut params = init_encoder(&encoder_config(trial, ds.n_features(), ds.n_classes()), rng)?;
    let sampler = BalancedSampler::from_labels(&ds.labels)?;
    let steps = ds.len().div_ceil(trial.batch_size);
    let mut opt = AdamW::new(optimizer(trial), &params.layers, trial.epochs * steps);
    for _ in 0..trial.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps {
            let idx = sampler.draw(trial.batch_size, rng);
            let x = ds.features.select(Axis(0), &idx);
            let y: Vec<usize> = idx.iter().map(|&i| ds.labels[i]).collect();
            let (logits, trace) = forward(&params, &x, true, rng)?;
            let (loss, grad) = softmax_xent(&logits, &y)?;
            let grads = backward(&params, &trace, &grad)?;
            opt.step(&mut params.layers, &grads)?;
            check_finite(loss, &params)?;
            epoch_loss += loss;
        }
        log.epoch_losses.push(epoch_loss / steps as f64);
    }
    Ok(params)
}
