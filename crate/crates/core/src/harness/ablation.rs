use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Inference, ModelFamily};
use super::experiment::{config_hash, run_experiment_on, run_experiment_variants, ExperimentReport, LoadedData};
use crate::contrastive::{DistanceMetric, MiningStrategy};
use crate::error::{Error, Result};
use crate::inference::VoteRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Mining,
    Distance,
    Inference,
    BenignCount,
    /// One encoder per subset, scored with four inference variants.
    RebalancedInference,
    SiameseVsTriplet,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::Mining,
        AblationAxis::Distance,
        AblationAxis::Inference,
        AblationAxis::BenignCount,
        AblationAxis::RebalancedInference,
        AblationAxis::SiameseVsTriplet,
    ];
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Mining => "mining",
            AblationAxis::Distance => "distance",
            AblationAxis::Inference => "inference",
            AblationAxis::BenignCount => "benign_count",
            AblationAxis::RebalancedInference => "rebalanced_inference",
            AblationAxis::SiameseVsTriplet => "siamese_vs_triplet",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.to_string() == norm)
            .ok_or_else(|| Error::Config(format!("unknown ablation axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub axis: AblationAxis,
    pub value: String,
    pub report: ExperimentReport,
}

/// Names each run `<base label>[<axis>=<value>]`.
fn labelled(mut cfg: ExperimentConfig, base: &ExperimentConfig, axis: AblationAxis, value: &str) -> ExperimentConfig {
    cfg.name = Some(format!("{}[{axis}={value}]", base.model_label()));
    cfg
}

/// Runs the base configuration once per value of `axis`, all else equal.
pub fn run_ablation(axis: AblationAxis, base: &ExperimentConfig, data: &LoadedData) -> Result<Vec<AblationEntry>> {
    let single = |value: String, cfg: ExperimentConfig| -> Result<AblationEntry> {
        let cfg = labelled(cfg, base, axis, &value);
        Ok(AblationEntry {
            axis,
            value,
            report: run_experiment_on(&cfg, data)?,
        })
    };
    match axis {
        AblationAxis::Mining => [
            MiningStrategy::BatchAll,
            MiningStrategy::BatchHard,
            MiningStrategy::BatchSemiHard,
        ]
        .into_iter()
        .map(|m| {
            let mut cfg = base.clone();
            cfg.family = ModelFamily::Triplet;
            cfg.mining = m;
            single(m.to_string(), cfg)
        })
        .collect(),
        AblationAxis::Distance => DistanceMetric::ALL
            .into_iter()
            .map(|d| {
                let mut cfg = base.clone();
                cfg.metric = d;
                single(d.to_string(), cfg)
            })
            .collect(),
        AblationAxis::Inference => [
            Inference::Knn(VoteRule::Hard),
            Inference::Knn(VoteRule::Soft),
            Inference::Knn(VoteRule::Weighted { temperature: 0.1 }),
            Inference::RandomPrototype,
            Inference::LinearProbe,
        ]
        .into_iter()
        .map(|inf| {
            let mut cfg = base.clone();
            cfg.inference = inf;
            single(inf.to_string(), cfg)
        })
        .collect(),
        AblationAxis::BenignCount => base
            .ablation
            .benign_counts
            .iter()
            .map(|&n| {
                let mut cfg = base.clone();
                cfg.n_benign = n;
                single(n.to_string(), cfg)
            })
            .collect(),
        AblationAxis::RebalancedInference => {
            let variants = [
                Inference::Knn(VoteRule::Hard),
                Inference::BalancedKnn,
                Inference::LinearProbe,
                Inference::ImbalancedLinear,
            ];
            let mut cfg = base.clone();
            cfg.inference = variants[0];
            let reports = run_experiment_variants(&cfg, data, &variants)?;
            Ok(variants
                .iter()
                .zip(reports)
                .map(|(v, mut report)| {
                    report.config = labelled(report.config, base, axis, &v.to_string());
                    report.model = report.config.model_label();
                    report.config_hash = config_hash(&report.config);
                    AblationEntry {
                        axis,
                        value: v.to_string(),
                        report,
                    }
                })
                .collect())
        }
        AblationAxis::SiameseVsTriplet => [ModelFamily::TripletOffline, ModelFamily::Siamese]
            .into_iter()
            .map(|fam| {
                let mut cfg = base.clone();
                cfg.family = fam;
                cfg.inference = Inference::RandomPrototype;
                single(fam.to_string(), cfg)
            })
            .collect(),
    }
}
