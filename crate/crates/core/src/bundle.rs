//! A trained model with everything needed to label new CSV rows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, CsvOptions, FlowDataset, LoadReport, Normalizer};
use crate::error::{Error, Result};
use crate::harness::{score_for_task, ExperimentConfig, FixedFit, Task, TrainedModel, TrialConfig};
use crate::metrics::ScoreReport;

pub const BUNDLE_FORMAT: &str = "fsnids-bundle";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub task: Task,
    pub label_column: String,
    pub benign: Option<String>,
    /// Class names by id; id 0 is benign.
    pub class_map: Vec<String>,
    pub feature_names: Vec<String>,
    pub trial: TrialConfig,
    pub normalizer: Normalizer,
    pub model: TrainedModel,
    /// Scores on the rows the model was trained on.
    pub train_score: ScoreReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub score: ScoreReport,
    pub load: LoadReport,
}

impl ModelBundle {
    pub fn new(
        cfg: &ExperimentConfig,
        train: &FlowDataset,
        trial: TrialConfig,
        normalizer: Normalizer,
        model: TrainedModel,
    ) -> Result<ModelBundle> {
        let mut bundle = ModelBundle {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            task: cfg.task,
            label_column: cfg.data.label_column.clone(),
            benign: cfg.data.benign.clone(),
            class_map: train.class_map.clone(),
            feature_names: train.feature_names.clone(),
            trial,
            normalizer,
            model,
            train_score: ScoreReport::default(),
        };
        bundle.train_score = bundle.evaluate_dataset(train)?.1;
        Ok(bundle)
    }

    pub fn from_fit(cfg: &ExperimentConfig, fit: &FixedFit) -> Result<ModelBundle> {
        Self::new(cfg, &fit.subset, fit.trial, fit.normalizer.clone(), fit.model.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ModelBundle> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bundle: ModelBundle = serde_json::from_str(&text)?;
        if bundle.format != BUNDLE_FORMAT || bundle.version != BUNDLE_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported bundle {} v{}",
                path.display(),
                bundle.format,
                bundle.version
            )));
        }
        Ok(bundle)
    }

    /// Labels raw (unnormalised) feature rows.
    pub fn predict(&self, ds: &FlowDataset) -> Result<Vec<usize>> {
        if ds.feature_names != self.feature_names {
            return Err(Error::Shape("feature columns differ from the training data".into()));
        }
        self.model.predict(&self.normalizer.apply(&ds.features))
    }

    pub fn evaluate_dataset(&self, ds: &FlowDataset) -> Result<(Vec<usize>, ScoreReport)> {
        let pred = self.predict(ds)?;
        let score = score_for_task(self.task, self.class_map.len(), &ds.labels, &pred)?;
        Ok((pred, score))
    }

    /// Loads a labelled CSV with the training class map and scores it.
    pub fn evaluate_csv(&self, path: &Path) -> Result<Evaluation> {
        let opts = CsvOptions {
            label_column: self.label_column.clone(),
            benign: self.benign.clone(),
            class_map: Some(self.class_map.clone()),
        };
        let (ds, load) = load_csv(path, &opts)?;
        let (predictions, score) = self.evaluate_dataset(&ds)?;
        Ok(Evaluation {
            predictions,
            score,
            load,
        })
    }
}
