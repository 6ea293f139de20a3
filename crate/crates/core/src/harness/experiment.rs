use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Inference, LabelMode, ModelFamily, Task, TrialConfig};
use super::train::{train_model, TrainSettings, TrainedModel};
use crate::data::{
    binarize, binarize_labels, load_csv, sample_subset, stratified_kfold, stratified_split, synthetic_blobs, BlobSpec,
    CsvOptions, FlowDataset, LoadReport, Normalizer, SubsetSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{generalization_gap, score_labels, ScoreReport};
use crate::rng::{splitmix64, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub index: usize,
    pub config: TrialConfig,
    pub fold_f1: Vec<f64>,
    /// `None` when the trial failed.
    pub mean_f1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub repetition: usize,
    pub subset_seed: u64,
    pub hyperparameter_seed: u64,
    pub n_rows: usize,
    pub best_trial: Option<usize>,
    pub best_config: TrialConfig,
    pub trials: Vec<TrialReport>,
    pub train: ScoreReport,
    pub test: ScoreReport,
    pub generalization_gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation; zeros for no values.
    pub fn of(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub macro_f1: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_precision: MeanStd,
    pub fp_rate: MeanStd,
    pub train_macro_f1: MeanStd,
    pub generalization_gap: MeanStd,
}

impl Summary {
    pub fn of(subsets: &[SubsetReport]) -> Summary {
        let col = |f: &dyn Fn(&SubsetReport) -> f64| MeanStd::of(&subsets.iter().map(f).collect::<Vec<_>>());
        let gaps: Vec<f64> = subsets.iter().filter_map(|s| s.generalization_gap).collect();
        Summary {
            macro_f1: col(&|s| s.test.macro_f1),
            macro_recall: col(&|s| s.test.macro_recall),
            macro_precision: col(&|s| s.test.macro_precision),
            fp_rate: col(&|s| s.test.fp_rate),
            train_macro_f1: col(&|s| s.train.macro_f1),
            generalization_gap: MeanStd::of(&gaps),
        }
    }
}

/// All subsets for one training-set size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub n_benign: usize,
    pub n_per_attack: usize,
    pub subsets: Vec<SubsetReport>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub results: Vec<SizeReport>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Stable short hash of a config, used to name run directories.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serialises");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: FlowDataset,
    pub test: FlowDataset,
    pub reports: Vec<LoadReport>,
}

/// Resolves the configured data source into train and test splits.
pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let d = &cfg.data;
    if let Some(syn) = &d.synthetic {
        let spec = |counts: &Vec<usize>, seed| BlobSpec {
            counts: counts.clone(),
            dim: syn.dim,
            separation: syn.separation,
            sigma: syn.sigma,
            seed,
        };
        let train = synthetic_blobs(&spec(&syn.train_counts, syn.seed))?;
        let test = synthetic_blobs(&spec(&syn.test_counts, splitmix64(syn.seed)))?;
        if train.n_classes() != test.n_classes() {
            return Err(Error::Config("synthetic train/test class counts differ".into()));
        }
        return Ok(LoadedData {
            train,
            test,
            reports: Vec::new(),
        });
    }
    let mut opts = CsvOptions::new(d.label_column.clone());
    opts.benign = d.benign.clone();
    match (&d.train, &d.test, &d.path) {
        (Some(train_path), Some(test_path), _) => {
            let (train, r1) = load_csv(train_path, &opts)?;
            let test_opts = CsvOptions {
                class_map: Some(train.class_map.clone()),
                ..opts
            };
            let (test, r2) = load_csv(test_path, &test_opts)?;
            Ok(LoadedData {
                train,
                test,
                reports: vec![r1, r2],
            })
        }
        (None, None, Some(path)) => {
            let (all, r) = load_csv(path, &opts)?;
            let (train, test) = stratified_split(&all, d.split_fraction, cfg.seeds.dataset_split)?;
            Ok(LoadedData {
                train,
                test,
                reports: vec![r],
            })
        }
        _ => Err(Error::Config(
            "data needs either train+test, a single path, or a synthetic source".into(),
        )),
    }
}

fn settings(cfg: &ExperimentConfig) -> TrainSettings {
    TrainSettings {
        family: cfg.family,
        mining: cfg.mining,
        reduction: cfg.batch_all_reduction,
        metric: cfg.metric,
        inference: cfg.inference,
        offline_count: cfg.offline_count,
        probe: cfg.probe,
    }
}

/// Labels the model is trained on.
fn training_view(cfg: &ExperimentConfig, ds: &FlowDataset) -> FlowDataset {
    if cfg.task == Task::Binary && cfg.label_mode == LabelMode::BinaryTrain {
        binarize_labels(ds)
    } else {
        ds.clone()
    }
}

/// Scores predictions against the original class ids, collapsing both
/// sides to benign/malicious for the binary task.
pub fn score_for_task(task: Task, n_classes: usize, y_true: &[usize], y_pred: &[usize]) -> Result<ScoreReport> {
    match task {
        Task::Binary => score_labels(&binarize(y_true), &binarize(y_pred), 2),
        Task::Multiclass => score_labels(y_true, y_pred, n_classes),
    }
}

/// Fits the normaliser on `train`, trains, and returns the model together
/// with the normaliser.
pub fn fit_on(
    cfg: &ExperimentConfig,
    trial: &TrialConfig,
    train: &FlowDataset,
    seed: u64,
) -> Result<(TrainedModel, Normalizer)> {
    let nz = Normalizer::fit(&train.features)?;
    let view = training_view(cfg, &nz.apply_dataset(train));
    let (model, _) = train_model(&settings(cfg), trial, &view, seed)?;
    Ok((model, nz))
}

pub fn predict_with(model: &TrainedModel, nz: &Normalizer, ds: &FlowDataset) -> Result<Vec<usize>> {
    model.predict(&nz.apply(&ds.features))
}

fn trial_seed_and_config(cfg: &ExperimentConfig, hp_seed: u64, index: usize) -> (TrialConfig, u64) {
    let mut rng = Rng::derive(hp_seed, index as u64);
    let mut trial = super::config::sample_config(&cfg.search, &mut rng);
    trial.epochs = cfg.epochs;
    (trial, rng.next_seed())
}

/// Candidate configurations with their training seeds.
fn candidates(cfg: &ExperimentConfig, hp_seed: u64) -> Vec<(TrialConfig, u64)> {
    if let Some(fixed) = cfg.fixed {
        return vec![(fixed, Rng::derive(hp_seed, 0).next_seed())];
    }
    if cfg.family == ModelFamily::RawKnn {
        let (base, seed) = trial_seed_and_config(cfg, hp_seed, 0);
        return cfg
            .search
            .knn_k
            .iter()
            .map(|&k| (TrialConfig { k, ..base }, seed))
            .collect();
    }
    (0..cfg.budget)
        .map(|i| trial_seed_and_config(cfg, hp_seed, i))
        .collect()
}

fn cross_validate(
    cfg: &ExperimentConfig,
    subset: &FlowDataset,
    cands: &[(TrialConfig, u64)],
) -> Result<Vec<TrialReport>> {
    let train_labels = training_view(cfg, subset).labels;
    let n_classes = subset.n_classes().max(2);
    let folds = stratified_kfold(&train_labels, n_classes, cfg.folds, cfg.seeds.cv_split)?;
    let jobs: Vec<(usize, usize)> = (0..cands.len())
        .flat_map(|t| (0..folds.len()).map(move |f| (t, f)))
        .collect();
    let outcomes: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(t, f)| {
            let (trial, seed) = &cands[t];
            let fold = &folds[f];
            let fold_train = subset.select(&fold.train);
            let fold_val = subset.select(&fold.val);
            let (model, nz) = fit_on(cfg, trial, &fold_train, *seed)?;
            let pred = predict_with(&model, &nz, &fold_val)?;
            Ok(score_for_task(cfg.task, subset.n_classes(), &fold_val.labels, &pred)?.macro_f1)
        })
        .collect();
    let mut reports = Vec::with_capacity(cands.len());
    for (t, chunk) in outcomes.chunks(folds.len()).enumerate() {
        let mut fold_f1 = Vec::new();
        let mut error = None;
        for r in chunk {
            match r {
                Ok(f1) => fold_f1.push(*f1),
                Err(e) if e.is_numeric() => {
                    error = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(clone_err(e)),
            }
        }
        let mean_f1 = error
            .is_none()
            .then(|| fold_f1.iter().sum::<f64>() / fold_f1.len() as f64);
        reports.push(TrialReport {
            index: t,
            config: cands[t].0,
            fold_f1,
            mean_f1,
            error,
        });
    }
    Ok(reports)
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::InsufficientSamples { class, have, need } => Error::InsufficientSamples {
            class: class.clone(),
            have: *have,
            need: *need,
        },
        other => Error::InvalidArgument(other.to_string()),
    }
}

/// Highest mean fold F1; earliest trial on ties; failed trials skipped.
pub fn select_best(trials: &[TrialReport]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for t in trials {
        if let Some(m) = t.mean_f1 {
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((t.index, m));
            }
        }
    }
    best.map(|(i, _)| i)
}

struct SubsetOutcome {
    subset: FlowDataset,
    model: TrainedModel,
    normalizer: Normalizer,
    header: SubsetReport,
}

fn run_subset(
    cfg: &ExperimentConfig,
    train: &FlowDataset,
    n_per_attack: usize,
    repetition: usize,
) -> Result<SubsetOutcome> {
    let subset_seed = cfg.seeds.subset_seed(repetition);
    let hp_seed = cfg.seeds.hyperparameter_seed(repetition);
    let subset = sample_subset(
        train,
        &SubsetSpec {
            n_benign: cfg.n_benign,
            n_per_attack,
            seed: subset_seed,
        },
    )?;
    let cands = candidates(cfg, hp_seed);
    let (trials, best) = if cfg.fixed.is_some() {
        (Vec::new(), 0)
    } else {
        let trials = cross_validate(cfg, &subset, &cands)?;
        let best = select_best(&trials)
            .ok_or_else(|| Error::NonFinite("every search trial failed".into()))?;
        (trials, best)
    };
    let (best_config, seed) = cands[best];
    let (model, normalizer) = fit_on(cfg, &best_config, &subset, seed)?;
    let placeholder = ScoreReport::default();
    let header = SubsetReport {
        repetition,
        subset_seed,
        hyperparameter_seed: hp_seed,
        n_rows: subset.len(),
        best_trial: cfg.fixed.is_none().then_some(best),
        best_config,
        trials,
        train: placeholder.clone(),
        test: placeholder,
        generalization_gap: None,
    };
    Ok(SubsetOutcome {
        subset,
        model,
        normalizer,
        header,
    })
}

fn evaluate(
    cfg: &ExperimentConfig,
    outcome: &SubsetOutcome,
    model: &TrainedModel,
    test: &FlowDataset,
) -> Result<SubsetReport> {
    let n_classes = outcome.subset.n_classes();
    let train_pred = predict_with(model, &outcome.normalizer, &outcome.subset)?;
    let test_pred = predict_with(model, &outcome.normalizer, test)?;
    let train = score_for_task(cfg.task, n_classes, &outcome.subset.labels, &train_pred)?;
    let test = score_for_task(cfg.task, n_classes, &test.labels, &test_pred)?;
    let generalization_gap = generalization_gap(train.macro_f1, test.macro_f1).ok();
    Ok(SubsetReport {
        train,
        test,
        generalization_gap,
        ..outcome.header.clone()
    })
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the experiment once per inference variant. Every variant reuses
/// the same selected and retrained models; selection uses `cfg.inference`.
pub fn run_experiment_variants(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    variants: &[Inference],
) -> Result<Vec<ExperimentReport>> {
    cfg.validate()?;
    with_pool(cfg.workers, || {
        let mut per_variant: Vec<Vec<SizeReport>> = vec![Vec::new(); variants.len()];
        for &n_m in &cfg.n_per_attack {
            let outcomes: Vec<Result<SubsetOutcome>> = (0..cfg.repetitions)
                .into_par_iter()
                .map(|rep| run_subset(cfg, &data.train, n_m, rep))
                .collect();
            let outcomes: Vec<SubsetOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
            for (v, &variant) in variants.iter().enumerate() {
                let mut subsets = Vec::with_capacity(outcomes.len());
                for o in &outcomes {
                    let model = if variant == cfg.inference {
                        o.model.clone()
                    } else {
                        o.model.with_inference(variant, &cfg.probe, o.model.inference_seed)?
                    };
                    subsets.push(evaluate(cfg, o, &model, &data.test)?);
                }
                per_variant[v].push(SizeReport {
                    n_benign: cfg.n_benign,
                    n_per_attack: n_m,
                    summary: Summary::of(&subsets),
                    subsets,
                });
            }
        }
        Ok(variants
            .iter()
            .zip(per_variant)
            .map(|(&variant, results)| {
                let mut vcfg = cfg.clone();
                vcfg.inference = variant;
                ExperimentReport {
                    model: vcfg.model_label(),
                    config_hash: config_hash(&vcfg),
                    config: vcfg,
                    results,
                }
            })
            .collect())
    })?
}

pub fn run_experiment_on(cfg: &ExperimentConfig, data: &LoadedData) -> Result<ExperimentReport> {
    Ok(run_experiment_variants(cfg, data, &[cfg.inference])?.remove(0))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let data = load_data(cfg)?;
    run_experiment_on(cfg, &data)
}

/// A single fit of the fixed configuration on the first repetition's
/// subset, as used to produce a deployable model.
#[derive(Debug, Clone)]
pub struct FixedFit {
    pub subset: FlowDataset,
    pub trial: TrialConfig,
    pub model: TrainedModel,
    pub normalizer: Normalizer,
    pub train_score: ScoreReport,
}

pub fn fit_fixed(cfg: &ExperimentConfig, data: &LoadedData) -> Result<FixedFit> {
    cfg.validate()?;
    if cfg.fixed.is_none() {
        return Err(Error::Config("training a single model needs a [fixed] configuration".into()));
    }
    let outcome = with_pool(cfg.workers, || run_subset(cfg, &data.train, cfg.n_per_attack[0], 0))??;
    let pred = predict_with(&outcome.model, &outcome.normalizer, &outcome.subset)?;
    let train_score = score_for_task(cfg.task, outcome.subset.n_classes(), &outcome.subset.labels, &pred)?;
    Ok(FixedFit {
        subset: outcome.subset,
        trial: outcome.header.best_config,
        model: outcome.model,
        normalizer: outcome.normalizer,
        train_score,
    })
}

/// Flat per-subset metrics for plotting.
pub fn per_subset_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "model,n_benign,n_per_attack,repetition,macro_f1,macro_recall,macro_precision,fp_rate,train_macro_f1,generalization_gap\n",
    );
    for size in &report.results {
        for s in &size.subsets {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                report.model,
                size.n_benign,
                size.n_per_attack,
                s.repetition,
                s.test.macro_f1,
                s.test.macro_recall,
                s.test.macro_precision,
                s.test.fp_rate,
                s.train.macro_f1,
                s.generalization_gap.map(|g| g.to_string()).unwrap_or_default(),
            ));
        }
    }
    out
}
