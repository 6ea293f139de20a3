use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::contrastive::{BatchAllReduction, DistanceMetric, MiningStrategy};
use crate::error::{Error, Result};
use crate::inference::VoteRule;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    /// Encoder trained with online triplet mining.
    #[default]
    Triplet,
    /// Encoder trained on a fixed, pre-sampled triplet set.
    TripletOffline,
    /// Encoder trained with the contrastive pair loss on pre-sampled pairs.
    Siamese,
    /// Encoder with a softmax head trained by cross-entropy.
    Mlp,
    /// KNN directly on normalised features.
    RawKnn,
}

impl ModelFamily {
    pub fn is_gradient_based(self) -> bool {
        self != ModelFamily::RawKnn
    }

    pub fn is_embedding(self) -> bool {
        matches!(
            self,
            ModelFamily::Triplet | ModelFamily::TripletOffline | ModelFamily::Siamese
        )
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Triplet => "triplet",
            ModelFamily::TripletOffline => "triplet-offline",
            ModelFamily::Siamese => "siamese",
            ModelFamily::Mlp => "mlp",
            ModelFamily::RawKnn => "raw-knn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Binary,
    #[default]
    Multiclass,
}

/// For the binary task: whether training sees attack class ids or only
/// benign/malicious.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    #[default]
    MulticlassTrain,
    BinaryTrain,
}

/// How a trained model turns test rows into labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Inference {
    Knn(VoteRule),
    /// Hard-vote KNN over a reference set subsampled to the minority count.
    BalancedKnn,
    RandomPrototype,
    /// Softmax head on frozen embeddings, class-balanced batches.
    LinearProbe,
    /// Softmax head on frozen embeddings, natural class frequencies.
    ImbalancedLinear,
}

impl Default for Inference {
    fn default() -> Self {
        Inference::Knn(VoteRule::Hard)
    }
}

impl fmt::Display for Inference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inference::Knn(VoteRule::Hard) => f.write_str("knn"),
            Inference::Knn(rule) => write!(f, "knn:{rule}"),
            Inference::BalancedKnn => f.write_str("balanced-knn"),
            Inference::RandomPrototype => f.write_str("random-prototype"),
            Inference::LinearProbe => f.write_str("linear-probe"),
            Inference::ImbalancedLinear => f.write_str("imbalanced-linear"),
        }
    }
}

impl FromStr for Inference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "knn" => Ok(Inference::Knn(VoteRule::Hard)),
            "balanced-knn" => Ok(Inference::BalancedKnn),
            "random-prototype" => Ok(Inference::RandomPrototype),
            "linear-probe" => Ok(Inference::LinearProbe),
            "imbalanced-linear" => Ok(Inference::ImbalancedLinear),
            other => match other.strip_prefix("knn:") {
                Some(rule) => Ok(Inference::Knn(rule.parse()?)),
                None => Err(Error::Config(format!("unknown inference `{s}`"))),
            },
        }
    }
}

impl TryFrom<String> for Inference {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Inference> for String {
    fn from(i: Inference) -> String {
        i.to_string()
    }
}

/// Base seeds for each randomised role. Subset and hyperparameter seeds
/// advance by one per repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedSchedule {
    pub configuration: u64,
    pub subset_sampling: u64,
    pub cv_split: u64,
    pub hyperparameter_search: u64,
    pub dataset_split: u64,
}

impl Default for SeedSchedule {
    fn default() -> Self {
        SeedSchedule {
            configuration: 0,
            subset_sampling: 19_048,
            cv_split: 19_324,
            hyperparameter_search: 4564,
            dataset_split: 39_058_032,
        }
    }
}

impl SeedSchedule {
    pub fn subset_seed(&self, repetition: usize) -> u64 {
        self.subset_sampling + repetition as u64
    }

    pub fn hyperparameter_seed(&self, repetition: usize) -> u64 {
        self.hyperparameter_search + repetition as u64
    }
}

/// Hyperparameter ranges. Defaults are the full reference search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub batch_size: Vec<usize>,
    pub weight_decay: (f64, f64),
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub neurons: Vec<usize>,
    pub depth: Vec<usize>,
    pub dropout: Vec<f64>,
    pub f_out: Vec<usize>,
    pub margin: Vec<f64>,
    pub knn_k: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (1e-6, 1e-3),
            batch_size: vec![32, 64, 128, 256, 512, 1024],
            weight_decay: (1e-6, 0.05),
            beta1: 0.9,
            beta2: 0.999,
            epochs: 200,
            neurons: vec![32, 64, 128, 256, 512, 1024],
            depth: vec![1, 2, 3, 4],
            dropout: vec![0.1, 0.2, 0.3],
            f_out: vec![8, 16, 32, 64, 128],
            margin: (1..=10).map(|i| i as f64 / 10.0).collect(),
            knn_k: vec![1, 2, 4, 8, 16, 32, 64, 128],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.learning_rate;
        let (wlo, whi) = self.weight_decay;
        if !(lo > 0.0 && lo <= hi && wlo > 0.0 && wlo <= whi) {
            return Err(Error::Config("log-uniform ranges need 0 < lo <= hi".into()));
        }
        let empty = [
            ("batch_size", self.batch_size.is_empty()),
            ("neurons", self.neurons.is_empty()),
            ("depth", self.depth.is_empty()),
            ("dropout", self.dropout.is_empty()),
            ("f_out", self.f_out.is_empty()),
            ("margin", self.margin.is_empty()),
            ("knn_k", self.knn_k.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("search space `{name}` is empty")));
        }
        Ok(())
    }
}

/// One point in the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub hidden_width: usize,
    pub depth: usize,
    pub dropout: f64,
    pub f_out: usize,
    pub margin: f64,
    pub k: usize,
}

fn log_uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + rng.uniform() * (hi.ln() - lo.ln())).exp()
}

fn choose<T: Copy>(rng: &mut Rng, items: &[T]) -> T {
    items[rng.below(items.len())]
}

/// Draws every field, whatever the model family, so the draw sequence
/// depends only on the seed.
pub fn sample_config(space: &SearchSpace, rng: &mut Rng) -> TrialConfig {
    TrialConfig {
        learning_rate: log_uniform(rng, space.learning_rate),
        batch_size: choose(rng, &space.batch_size),
        weight_decay: log_uniform(rng, space.weight_decay),
        beta1: space.beta1,
        beta2: space.beta2,
        epochs: space.epochs,
        hidden_width: choose(rng, &space.neurons),
        depth: choose(rng, &space.depth),
        dropout: choose(rng, &space.dropout),
        f_out: choose(rng, &space.f_out),
        margin: choose(rng, &space.margin),
        k: choose(rng, &space.knn_k),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSource {
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Pre-split training CSV.
    pub train: Option<PathBuf>,
    /// Pre-split test CSV.
    pub test: Option<PathBuf>,
    /// Single CSV split by `split_fraction` with the dataset-split seed.
    pub path: Option<PathBuf>,
    pub split_fraction: f64,
    pub label_column: String,
    pub benign: Option<String>,
    pub synthetic: Option<SyntheticSource>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            test: None,
            path: None,
            split_fraction: 0.5,
            label_column: "label".into(),
            benign: Some("benign".into()),
            synthetic: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            epochs: 50,
            learning_rate: 1e-2,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSettings {
    pub benign_counts: Vec<usize>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            benign_counts: vec![1000, 5000, 10_000, 20_000],
        }
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

/// Everything that determines an experiment's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub data: DataConfig,
    pub task: Task,
    pub label_mode: LabelMode,
    pub family: ModelFamily,
    pub mining: MiningStrategy,
    pub batch_all_reduction: BatchAllReduction,
    pub metric: DistanceMetric,
    pub inference: Inference,
    pub repetitions: usize,
    pub n_benign: usize,
    #[serde(deserialize_with = "one_or_many")]
    pub n_per_attack: Vec<usize>,
    pub folds: usize,
    pub budget: usize,
    /// Training epochs; replaces the search space's epoch count.
    pub epochs: usize,
    pub offline_count: usize,
    pub search: SearchSpace,
    /// Skips the search and uses this configuration directly.
    pub fixed: Option<TrialConfig>,
    pub seeds: SeedSchedule,
    pub probe: ProbeSettings,
    pub ablation: AblationSettings,
    #[serde(skip)]
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: None,
            data: DataConfig::default(),
            task: Task::default(),
            label_mode: LabelMode::default(),
            family: ModelFamily::default(),
            mining: MiningStrategy::default(),
            batch_all_reduction: BatchAllReduction::default(),
            metric: DistanceMetric::default(),
            inference: Inference::default(),
            repetitions: 3,
            n_benign: 2000,
            n_per_attack: vec![10],
            folds: 5,
            budget: 20,
            epochs: 50,
            offline_count: 30_000,
            search: SearchSpace::default(),
            fixed: None,
            seeds: SeedSchedule::default(),
            probe: ProbeSettings::default(),
            ablation: AblationSettings::default(),
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if self.budget == 0 && self.fixed.is_none() && self.family.is_gradient_based() {
            return Err(Error::Config("search budget must be at least 1".into()));
        }
        if self.n_per_attack.is_empty() || self.n_per_attack.contains(&0) || self.n_benign == 0 {
            return Err(Error::Config("subset sizes must be at least 1".into()));
        }
        self.search.validate()
    }

    /// Short identifier used as the model column in tables.
    pub fn model_label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        match self.family {
            ModelFamily::Triplet => format!("triplet/{}/{}/{}", self.mining, self.metric, self.inference),
            ModelFamily::TripletOffline | ModelFamily::Siamese => {
                format!("{}/{}/{}", self.family, self.metric, self.inference)
            }
            ModelFamily::Mlp => "mlp".into(),
            ModelFamily::RawKnn => format!("raw-knn/{}", self.metric),
        }
    }

    /// Parses a TOML config, applying `key=value` overrides (dotted keys,
    /// TOML-typed values, bare words taken as strings) before decoding.
    /// Relative data paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, overrides: &[String], base_dir: Option<&Path>) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(base) = base_dir {
            for p in [&mut cfg.data.train, &mut cfg.data.test, &mut cfg.data.path]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides, path.parent())
    }
}

fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path `{key}` crosses a non-table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
