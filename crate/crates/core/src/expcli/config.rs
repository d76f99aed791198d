use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::{ServerConfig, Strategy};
use crate::error::{Error, Result};
use crate::metrics::LesionParams;
use crate::model::{LossKind, TrainConfig, DEFAULT_HIDDEN};
use crate::orchestrate::{FederationPlan, ModelSettings};
use crate::stats::StatsConfig;
use crate::synthdata::{
    default_detection_independent, default_detection_profiles, default_segmentation_independent,
    default_segmentation_profiles, ClientProfile, SplitSpec, Task,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationDefaults {
    pub local_epochs: usize,
    pub rounds: usize,
    pub server: ServerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub budget: usize,
    pub epoch_candidates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub strategies: Vec<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: String,
    pub task: Task,
    pub master_seed: u64,
    pub clients: Vec<ClientProfile>,
    pub independent: ClientProfile,
    pub split: SplitSpec,
    pub model: ModelSettings,
    /// Epochs for local and centralized baselines.
    pub baseline_epochs: usize,
    pub federation: FederationDefaults,
    pub grid: GridSpec,
    pub sweep: SweepSpec,
    /// 1 trains a single model on the stored split; k >= 2 trains a fold ensemble.
    pub k_folds: usize,
    pub stats: StatsConfig,
    pub lesion: LesionParams,
    pub seg_threshold: f64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Four-client segmentation setup with `R = 100` FedAvg rounds.
    pub fn segmentation(scale: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: "segmentation".into(),
            task: Task::Segmentation,
            master_seed: 1,
            clients: default_segmentation_profiles(scale),
            independent: default_segmentation_independent(),
            split: SplitSpec::new(10),
            model: ModelSettings {
                task: Task::Segmentation,
                hidden: DEFAULT_HIDDEN,
                train: TrainConfig::default(),
            },
            baseline_epochs: 100,
            federation: FederationDefaults {
                local_epochs: 1,
                rounds: 100,
                server: ServerConfig::defaults_for(Strategy::FedAvg),
            },
            grid: GridSpec {
                budget: 120,
                epoch_candidates: vec![1, 4, 12],
            },
            sweep: SweepSpec {
                strategies: Strategy::ALL.to_vec(),
            },
            k_folds: 5,
            stats: StatsConfig::default(),
            lesion: LesionParams::default(),
            seg_threshold: 0.5,
            output_dir: "out".into(),
        }
    }

    /// Three-client detection setup.
    pub fn detection(scale: f64) -> Self {
        let mut cfg = Self::segmentation(scale);
        cfg.experiment = "detection".into();
        cfg.task = Task::Detection;
        cfg.clients = default_detection_profiles(scale);
        cfg.independent = default_detection_independent();
        cfg.model.task = Task::Detection;
        cfg.model.train.loss = LossKind::BceSoftDice;
        cfg.grid = GridSpec {
            budget: 100,
            epoch_candidates: vec![1, 5, 10],
        };
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.experiment.is_empty() || self.experiment.contains(['/', '\\']) {
            return bad(format!(
                "experiment name {:?} is not a plain directory name",
                self.experiment
            ));
        }
        if self.clients.is_empty() {
            return bad("no clients".into());
        }
        let mut ids = BTreeSet::new();
        for p in self.clients.iter().chain([&self.independent]) {
            p.validate()?;
            if p.task != self.task {
                return bad(format!(
                    "profile {} has task {:?}, experiment is {:?}",
                    p.client_id, p.task, self.task
                ));
            }
            if !ids.insert(p.client_id.as_str()) {
                return bad(format!("duplicate client id {}", p.client_id));
            }
            if p.n_cases < self.split.local_test_count + crate::synthdata::MIN_TRAIN_VAL {
                return Err(Error::TooFewCases {
                    have: p.n_cases,
                    need: self.split.local_test_count + crate::synthdata::MIN_TRAIN_VAL,
                });
            }
        }
        if self.model.task != self.task {
            return bad("model.task differs from task".into());
        }
        if self.model.hidden == 0 {
            return bad("model.hidden must be >= 1".into());
        }
        self.model.train.validate()?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad(format!(
                "split.train_fraction {} outside (0, 1)",
                self.split.train_fraction
            ));
        }
        if self.baseline_epochs == 0
            || self.federation.local_epochs == 0
            || self.federation.rounds == 0
        {
            return bad("epochs and rounds must be >= 1".into());
        }
        if self.grid.epoch_candidates.is_empty() {
            return bad("grid.epoch_candidates is empty".into());
        }
        for &e in &self.grid.epoch_candidates {
            if e == 0 || self.grid.budget % e != 0 {
                return Err(Error::NonDivisibleBudget {
                    budget: self.grid.budget,
                    epochs: e,
                });
            }
        }
        if self.sweep.strategies.len() < 2 {
            return bad("sweep needs at least two strategies".into());
        }
        if self.k_folds == 0 {
            return bad("k_folds must be >= 1".into());
        }
        if self.stats.b < 100 || self.stats.iterations == 0 {
            return bad("stats.b must be >= 100 and stats.iterations >= 1".into());
        }
        if !(self.stats.level > 0.0 && self.stats.level < 1.0) {
            return bad(format!("stats.level {} outside (0, 1)", self.stats.level));
        }
        if !(self.seg_threshold > 0.0 && self.seg_threshold < 1.0) {
            return bad(format!(
                "seg_threshold {} outside (0, 1)",
                self.seg_threshold
            ));
        }
        Ok(())
    }

    pub fn client_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.clients.iter().map(|c| c.client_id.clone()).collect();
        ids.sort();
        ids
    }

    /// FL-baseline plan.
    pub fn baseline_plan(&self) -> FederationPlan {
        FederationPlan {
            model: self.model,
            local_epochs: self.federation.local_epochs,
            rounds: self.federation.rounds,
            server: self.federation.server,
            client_ids: self.client_ids(),
            master_seed: self.master_seed,
            eval_every: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [
            ExperimentConfig::segmentation(0.25),
            ExperimentConfig::detection(0.2),
        ] {
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(
                serde_json::from_str::<ExperimentConfig>(&text).unwrap(),
                cfg
            );
        }
        let seg = ExperimentConfig::segmentation(0.25);
        assert_eq!(seg.clients.len(), 4);
        assert_eq!(ExperimentConfig::detection(0.2).clients.len(), 3);
    }

    #[test]
    fn rejects_bad_configs() {
        let ok = ExperimentConfig::segmentation(0.25);
        let mut c = ok.clone();
        c.schema_version = 9;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ok.clone();
        c.grid.epoch_candidates = vec![7];
        assert!(matches!(
            c.validate(),
            Err(Error::NonDivisibleBudget { .. })
        ));
        let mut c = ok.clone();
        c.clients[1].client_id = c.clients[0].client_id.clone();
        assert!(c.validate().is_err());
        let mut c = ok;
        c.sweep.strategies.truncate(1);
        assert!(c.validate().is_err());
    }
}
