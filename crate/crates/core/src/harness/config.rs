use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Condition, DataSource, ExperimentConfig, GroupAttribute, HarnessError, Result};
use crate::classifier::TrainConfig;
use crate::corpus::{SplitRatios, Task};
use crate::featurize::FeaturizerConfig;
use crate::synthdata::SynthConfig;

/// TOML config file. Every key is optional; present keys override the
/// defaults and are in turn overridden by command-line flags.
///
/// ```toml
/// seed = 7
/// tasks = ["gender"]
/// conditions = ["baseline", "postproc_eo"]
/// data = "bios.csv"
///
/// [train]
/// learning_rate = 0.05
///
/// [synth]
/// n = 5000
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub tasks: Option<Vec<Task>>,
    pub conditions: Option<Vec<Condition>>,
    pub data: Option<PathBuf>,
    /// Train, dev and test files, used as given.
    pub data_splits: Option<[PathBuf; 3]>,
    pub synth: Option<SynthConfig>,
    pub split: Option<SplitRatios>,
    pub train: Option<TrainConfig>,
    pub featurizer: Option<FeaturizerConfig>,
    pub grid_resolution: Option<usize>,
    pub joint_balance: Option<bool>,
    pub gender_task_group: Option<GroupAttribute>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<String>,
}

impl ConfigFile {
    pub fn parse(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&s)
    }

    /// Overlay onto `cfg`. File sources win over a `[synth]` table, and
    /// `data_splits` wins over `data`.
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = &self.synth {
            cfg.source = DataSource::Synth(*s);
        }
        if let Some(p) = &self.data {
            cfg.source = DataSource::Corpus(p.clone());
        }
        if let Some(p) = &self.data_splits {
            cfg.source = DataSource::PreSplit(p.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.tasks {
            cfg.tasks = v.clone();
        }
        if let Some(v) = &self.conditions {
            cfg.conditions = v.clone();
        }
        if let Some(v) = self.split {
            cfg.split = v;
        }
        if let Some(v) = self.train {
            cfg.train = v;
        }
        if let Some(v) = self.featurizer {
            cfg.featurizer = v;
        }
        if let Some(v) = self.grid_resolution {
            cfg.grid_resolution = v;
        }
        if let Some(v) = self.joint_balance {
            cfg.joint_balance = v;
        }
        if let Some(v) = self.gender_task_group {
            cfg.gender_task_group = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = Some(v.clone());
        }
    }
}
