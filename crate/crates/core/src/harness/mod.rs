//! Experiment grid: every (task, condition) cell is trained, optionally
//! mitigated, and evaluated on the test split, then collated into a table.

mod audit;
mod config;
mod report;

pub use audit::{
    audit_score_file, audit_scores, read_score_file, write_score_file, AuditOptions, AuditOutcome,
    ScoreFile, SplitMark,
};
pub use config::ConfigFile;
pub use report::{
    emit_distribution_report, emit_table, parse_table_json, write_atomic, write_table, TableFormat,
};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    argmax, predict_scores_batch, train, ClassifierError, Examples, LinearModel, TrainConfig,
    TrainReport,
};
use crate::corpus::{
    build_label_maps, encode_records, load_corpus, split_dataset, ColumnSchema, CorpusError,
    LabelMap, RawRecord, Record, SplitRatios, SplitSet, Task,
};
use crate::fairmetrics::{evaluate, EvalBundle, FairnessReport, MetricError};
use crate::featurize::{featurize_batch, FeatureVector, FeaturizeError, FeaturizerConfig};
use crate::mitigate::{
    apply_eo_policy_multiclass, compute_class_weights, fit_eo_policy_multiclass,
    oversample_indices, ClassWeights, MitigateError, MulticlassEoPolicy,
};
use crate::rng::derive_seed;
use crate::synthdata::{generate, SynthConfig, SynthError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Mitigate(#[from] MitigateError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("line {line}: scores sum to {sum}, expected 1")]
    NonProbabilisticScores { line: u64, sum: f64 },
    #[error("cell {}/{}: {source}", task.key(), condition.key())]
    Cell {
        task: Task,
        condition: Condition,
        source: Box<HarnessError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data or schema, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Featurize(_) => 1,
            Self::Classifier(ClassifierError::NonFiniteLoss { .. }) => 3,
            Self::Classifier(ClassifierError::BadConfig(_)) => 1,
            Self::Cell { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Baseline,
    Oversampling,
    LossWeighting,
    PostprocEo,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Baseline,
        Condition::Oversampling,
        Condition::LossWeighting,
        Condition::PostprocEo,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Oversampling => "oversampling",
            Condition::LossWeighting => "loss_weighting",
            Condition::PostprocEo => "postproc_eo",
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            Condition::Baseline => "Baseline",
            Condition::Oversampling => "Oversampling",
            Condition::LossWeighting => "Loss Weighting",
            Condition::PostprocEo => "Post-proc EO",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Condition {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.trim().to_ascii_lowercase().replace('-', "_");
        Condition::ALL
            .into_iter()
            .find(|c| c.key() == k)
            .ok_or_else(|| HarnessError::Config(format!("unknown condition '{s}'")))
    }
}

/// Attribute whose groups fairness is measured across.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupAttribute {
    #[default]
    Gender,
    Profession,
}

impl GroupAttribute {
    pub fn of(self, r: &Record) -> u32 {
        match self {
            GroupAttribute::Gender => r.gender_id,
            GroupAttribute::Profession => r.profession_id,
        }
    }
}

impl FromStr for GroupAttribute {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gender" => Ok(GroupAttribute::Gender),
            "profession" => Ok(GroupAttribute::Profession),
            _ => Err(HarnessError::Config(format!("unknown group attribute '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Corpus(PathBuf),
    /// Train, dev and test files used as given instead of re-splitting.
    PreSplit([PathBuf; 3]),
    Synth(SynthConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub tasks: Vec<Task>,
    pub conditions: Vec<Condition>,
    pub split: SplitRatios,
    /// Master seed: splits the data and derives every cell seed.
    pub seed: u64,
    pub train: TrainConfig,
    pub featurizer: FeaturizerConfig,
    pub grid_resolution: usize,
    /// Oversample on the joint (label, gender) cells instead of the label alone.
    pub joint_balance: bool,
    /// Group attribute for the gender task; the profession task always
    /// groups by gender.
    pub gender_task_group: GroupAttribute,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(source: DataSource) -> Self {
        Self {
            source,
            tasks: Task::ALL.to_vec(),
            conditions: Condition::ALL.to_vec(),
            split: SplitRatios::default(),
            seed: 0,
            train: TrainConfig::default(),
            featurizer: FeaturizerConfig::default(),
            grid_resolution: 100,
            joint_balance: false,
            gender_task_group: GroupAttribute::Gender,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(HarnessError::Config("at least one task is required".into()));
        }
        if self.conditions.is_empty() {
            return Err(HarnessError::Config("at least one condition is required".into()));
        }
        self.featurizer.validate()?;
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn group_attribute(&self, task: Task) -> GroupAttribute {
        match task {
            Task::Gender => self.gender_task_group,
            Task::Profession => GroupAttribute::Gender,
        }
    }

    /// Cells in table order: tasks gender then profession, conditions in
    /// canonical order, restricted to the configured subsets.
    pub fn cells(&self) -> Vec<(Task, Condition)> {
        Task::ALL
            .into_iter()
            .filter(|t| self.tasks.contains(t))
            .flat_map(|t| {
                Condition::ALL
                    .into_iter()
                    .filter(|c| self.conditions.contains(c))
                    .map(move |c| (t, c))
            })
            .collect()
    }

    /// `derive_seed(master, "<task>/<condition>")`.
    pub fn cell_seed(&self, task: Task, condition: Condition) -> u64 {
        derive_seed(self.seed, &format!("{}/{}", task.key(), condition.key()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub raw_rows: usize,
    pub dropped_missing: usize,
    pub malformed: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub gender_map: LabelMap,
    pub profession_map: LabelMap,
    pub load: Option<LoadSummary>,
    /// Fixed splits of a pre-split source; `records` is their concatenation.
    pub splits: Option<SplitSet>,
}

impl Dataset {
    /// The fixed splits if the source had them, else a seeded split.
    pub fn split(&self, ratios: SplitRatios, seed: u64) -> Result<SplitSet> {
        match &self.splits {
            Some(s) => Ok(s.clone()),
            None => Ok(split_dataset(&self.records, ratios, seed)?),
        }
    }
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Corpus(path) => {
            let outcome = load_corpus(path, &ColumnSchema::default())?;
            let (gender_map, profession_map) = build_label_maps(&outcome.records)?;
            let records = encode_records(&outcome.records, &gender_map, &profession_map)?;
            Ok(Dataset {
                records,
                gender_map,
                profession_map,
                load: Some(LoadSummary {
                    raw_rows: outcome.raw_rows,
                    dropped_missing: outcome.dropped_missing,
                    malformed: outcome.malformed.len(),
                }),
                splits: None,
            })
        }
        DataSource::PreSplit(paths) => {
            let mut outcomes = Vec::with_capacity(3);
            for path in paths {
                outcomes.push(load_corpus(path, &ColumnSchema::default())?);
            }
            let all: Vec<RawRecord> = outcomes.iter().flat_map(|o| o.records.iter().cloned()).collect();
            let (gender_map, profession_map) = build_label_maps(&all)?;
            let mut parts = Vec::with_capacity(3);
            for o in &outcomes {
                parts.push(encode_records(&o.records, &gender_map, &profession_map)?);
            }
            let [train, dev, test]: [Vec<Record>; 3] = parts.try_into().expect("three parts");
            let splits = SplitSet::from_parts(train, dev, test);
            let records = splits.parts().iter().flat_map(|(_, r)| r.iter().cloned()).collect();
            Ok(Dataset {
                records,
                gender_map,
                profession_map,
                load: Some(LoadSummary {
                    raw_rows: outcomes.iter().map(|o| o.raw_rows).sum(),
                    dropped_missing: outcomes.iter().map(|o| o.dropped_missing).sum(),
                    malformed: outcomes.iter().map(|o| o.malformed.len()).sum(),
                }),
                splits: Some(splits),
            })
        }
        DataSource::Synth(cfg) => {
            let corpus = generate(cfg)?;
            Ok(Dataset {
                records: corpus.records,
                gender_map: corpus.gender_map,
                profession_map: corpus.profession_map,
                load: None,
                splits: None,
            })
        }
    }
}

/// Split and featurized data shared by every cell.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub splits: SplitSet,
    /// Features of the train, dev and test splits.
    pub features: [Vec<FeatureVector>; 3],
}

impl Prepared {
    pub fn num_classes(&self, task: Task) -> usize {
        match task {
            Task::Gender => self.dataset.gender_map.len(),
            Task::Profession => self.dataset.profession_map.len(),
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.featurizer.validate()?;
    let dataset = load_dataset(&cfg.source)?;
    prepare_dataset(cfg, dataset)
}

pub fn prepare_dataset(cfg: &ExperimentConfig, dataset: Dataset) -> Result<Prepared> {
    let splits = dataset.split(cfg.split, cfg.seed)?;
    let feats = |recs: &[Record]| {
        let texts: Vec<&str> = recs.iter().map(|r| r.text.as_str()).collect();
        featurize_batch(&texts, &cfg.featurizer)
    };
    let features = [feats(&splits.train), feats(&splits.dev), feats(&splits.test)];
    Ok(Prepared {
        dataset,
        splits,
        features,
    })
}

pub fn labels(records: &[Record], task: Task) -> Vec<u32> {
    records.iter().map(|r| task.label(r)).collect()
}

pub fn groups(records: &[Record], attr: GroupAttribute) -> Vec<u32> {
    records.iter().map(|r| attr.of(r)).collect()
}

/// Training data of one cell, as indices into the train split.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPlan {
    pub task: Task,
    pub condition: Condition,
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub class_weights: Option<ClassWeights>,
}

pub fn plan_cell(
    p: &Prepared,
    cfg: &ExperimentConfig,
    task: Task,
    condition: Condition,
) -> Result<CellPlan> {
    let seed = cfg.cell_seed(task, condition);
    let k = p.num_classes(task);
    let y = labels(&p.splits.train, task);
    let train_indices = match condition {
        Condition::Oversampling if cfg.joint_balance => {
            let (joint, cells) = joint_labels(&p.splits.train, task);
            oversample_indices(&joint, cells, seed)?
        }
        Condition::Oversampling => oversample_indices(&y, k, seed)?,
        _ => (0..y.len()).collect(),
    };
    let class_weights = match condition {
        Condition::LossWeighting => Some(compute_class_weights(&y, k)?),
        _ => None,
    };
    Ok(CellPlan {
        task,
        condition,
        seed,
        train_indices,
        class_weights,
    })
}

/// Compact ids over the observed (label, gender) combinations.
fn joint_labels(records: &[Record], task: Task) -> (Vec<u32>, usize) {
    let mut ids = std::collections::BTreeMap::new();
    for r in records {
        let next = ids.len() as u32;
        ids.entry((task.label(r), r.gender_id)).or_insert(next);
    }
    // Re-number in key order so ids do not depend on record order.
    for (i, v) in ids.values_mut().enumerate() {
        *v = i as u32;
    }
    let joint = records
        .iter()
        .map(|r| ids[&(task.label(r), r.gender_id)])
        .collect();
    (joint, ids.len())
}

pub fn fit_cell(p: &Prepared, cfg: &ExperimentConfig, plan: &CellPlan) -> Result<(LinearModel, TrainReport)> {
    let y = labels(&p.splits.train, plan.task);
    let x: Vec<FeatureVector> = plan
        .train_indices
        .iter()
        .map(|&i| p.features[0][i].clone())
        .collect();
    let y: Vec<u32> = plan.train_indices.iter().map(|&i| y[i]).collect();
    let dev_y = labels(&p.splits.dev, plan.task);
    let tc = TrainConfig {
        seed: plan.seed,
        ..cfg.train
    };
    Ok(train(
        Examples::new(&x, &y),
        Examples::new(&p.features[1], &dev_y),
        p.num_classes(plan.task),
        plan.class_weights.as_ref().map(ClassWeights::as_slice),
        &tc,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: Task,
    pub condition: Condition,
    pub seed: u64,
    pub report: Option<FairnessReport>,
    pub error: Option<String>,
    pub training: Option<TrainReport>,
    pub policy: Option<MulticlassEoPolicy>,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        self.report.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub seed: u64,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn row(&self, task: Task, condition: Condition) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.task == task && r.condition == condition)
    }
}

const SAME_TARGET_CAVEAT: &str =
    "sensitive attribute equals the target label; group-conditional TPR/FPR cells are empty";

struct CellOutput {
    report: FairnessReport,
    training: TrainReport,
    policy: Option<MulticlassEoPolicy>,
}

fn run_cell(p: &Prepared, cfg: &ExperimentConfig, task: Task, condition: Condition) -> Result<CellOutput> {
    let plan = plan_cell(p, cfg, task, condition)?;
    let (model, training) = fit_cell(p, cfg, &plan)?;
    let k = p.num_classes(task);
    let attr = cfg.group_attribute(task);
    let test_scores = predict_scores_batch(&model, &p.features[2])?;
    let test_group = groups(&p.splits.test, attr);
    let (pred, policy) = if condition == Condition::PostprocEo {
        let dev_scores = predict_scores_batch(&model, &p.features[1])?;
        let policy = fit_eo_policy_multiclass(
            &dev_scores,
            &labels(&p.splits.dev, task),
            &groups(&p.splits.dev, attr),
            cfg.grid_resolution,
        )?;
        let pred = apply_eo_policy_multiclass(&policy, &test_scores, &test_group, plan.seed)?;
        (pred, Some(policy))
    } else {
        (test_scores.iter().map(|s| argmax(s) as u32).collect(), None)
    };
    let bundle = EvalBundle::new(labels(&p.splits.test, task), pred, test_group, k)?;
    let mut report = evaluate(&bundle, condition.display(), task.display())?;
    if task == Task::Gender && attr == GroupAttribute::Gender {
        report.flags.insert(0, SAME_TARGET_CAVEAT.to_string());
    }
    if let Some(pol) = &policy {
        report.flags.extend(pol.flags.iter().map(|f| format!("eo: {f}")));
    }
    Ok(CellOutput {
        report,
        training,
        policy,
    })
}

/// Run every configured cell. Cells run in parallel; a failing cell is
/// recorded with its error and the others still run.
pub fn run_experiments(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    run_prepared(cfg, &prepared)
}

pub fn run_prepared(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<ResultsTable> {
    cfg.validate()?;
    let rows = cfg
        .cells()
        .into_par_iter()
        .map(|(task, condition)| {
            let seed = cfg.cell_seed(task, condition);
            match run_cell(prepared, cfg, task, condition) {
                Ok(out) => ResultRow {
                    task,
                    condition,
                    seed,
                    report: Some(out.report),
                    error: None,
                    training: Some(out.training),
                    policy: out.policy,
                },
                Err(e) => ResultRow {
                    task,
                    condition,
                    seed,
                    report: None,
                    error: Some(e.to_string()),
                    training: None,
                    policy: None,
                },
            }
        })
        .collect();
    Ok(ResultsTable {
        seed: cfg.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(DataSource::Synth(SynthConfig {
            n: 1500,
            ..Default::default()
        }));
        cfg.featurizer.dim = 1 << 12;
        cfg.train.max_epochs = 2;
        cfg
    }

    #[test]
    fn condition_names() {
        for c in Condition::ALL {
            assert_eq!(c.key().parse::<Condition>().unwrap(), c);
        }
        assert_eq!("Loss-Weighting".parse::<Condition>().unwrap(), Condition::LossWeighting);
        assert!("fair".parse::<Condition>().is_err());
    }

    #[test]
    fn cells_follow_table_order() {
        let mut cfg = small_cfg();
        cfg.tasks = vec![Task::Profession, Task::Gender];
        cfg.conditions = vec![Condition::PostprocEo, Condition::Baseline];
        assert_eq!(
            cfg.cells(),
            vec![
                (Task::Gender, Condition::Baseline),
                (Task::Gender, Condition::PostprocEo),
                (Task::Profession, Condition::Baseline),
                (Task::Profession, Condition::PostprocEo),
            ]
        );
    }

    #[test]
    fn cell_seeds_are_distinct() {
        let cfg = small_cfg();
        let seeds: std::collections::HashSet<u64> = cfg
            .cells()
            .into_iter()
            .map(|(t, c)| cfg.cell_seed(t, c))
            .collect();
        assert_eq!(seeds.len(), 8);
    }

    #[test]
    fn empty_selection_rejected() {
        let mut cfg = small_cfg();
        cfg.tasks.clear();
        assert!(matches!(run_experiments(&cfg), Err(HarnessError::Config(_))));
    }

    #[test]
    fn single_cell_run() {
        let mut cfg = small_cfg();
        cfg.tasks = vec![Task::Gender];
        cfg.conditions = vec![Condition::Baseline];
        let t = run_experiments(&cfg).unwrap();
        assert_eq!(t.rows.len(), 1);
        let r = t.rows[0].report.as_ref().unwrap();
        assert_eq!(r.condition, "Baseline");
        assert_eq!(r.task, "Gender");
        assert_eq!(r.flags[0], SAME_TARGET_CAVEAT);
    }

    #[test]
    fn failed_cell_is_recorded() {
        let mut cfg = small_cfg();
        cfg.tasks = vec![Task::Profession];
        cfg.conditions = vec![Condition::Baseline, Condition::LossWeighting];
        let mut p = prepare(&cfg).unwrap();
        // Remove profession 0 from train: weighting cannot be computed.
        let keep: Vec<usize> = (0..p.splits.train.len())
            .filter(|&i| p.splits.train[i].profession_id != 0)
            .collect();
        p.splits.train = keep.iter().map(|&i| p.splits.train[i].clone()).collect();
        p.features[0] = keep.iter().map(|&i| p.features[0][i].clone()).collect();
        let t = run_prepared(&cfg, &p).unwrap();
        assert!(!t.rows[0].failed());
        assert!(t.rows[1].failed());
        assert!(t.rows[1].error.as_ref().unwrap().contains("class 0"));
    }

    #[test]
    fn joint_labels_are_compact() {
        let rec = |g, p| Record {
            text: String::new(),
            gender_id: g,
            profession_id: p,
        };
        let recs = vec![rec(1, 2), rec(0, 0), rec(1, 2), rec(0, 2)];
        let (joint, n) = joint_labels(&recs, Task::Profession);
        assert_eq!(n, 3);
        assert_eq!(joint, vec![2, 0, 2, 1]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 1);
        assert_eq!(HarnessError::SchemaMismatch("x".into()).exit_code(), 2);
        let numeric = HarnessError::Classifier(ClassifierError::NonFiniteLoss {
            epoch: 1,
            step: 0,
            lr: 1.0,
        });
        assert_eq!(numeric.exit_code(), 3);
    }
}
