//! Biography corpus loading, text normalization, label maps and splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("schema mismatch: required column `{0}` not present")]
    SchemaMismatch(String),
    #[error("expected exactly 2 distinct gender labels, found {0}: {1:?}")]
    GenderCardinality(usize, Vec<String>),
    #[error("empty input")]
    EmptyInput,
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("at least 10 records are required to split, got {0}")]
    TooFewRecords(usize),
    #[error("label `{0}` is not in the label map")]
    UnknownLabel(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One biography as read from disk, before normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub bio: String,
    pub gender: String,
    pub profession: String,
}

/// A normalized, label-encoded biography.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub text: String,
    pub gender_id: u32,
    pub profession_id: u32,
}

/// Which label a classifier predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Gender,
    Profession,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Gender, Task::Profession];

    pub fn label(self, r: &Record) -> u32 {
        match self {
            Task::Gender => r.gender_id,
            Task::Profession => r.profession_id,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Task::Gender => "gender",
            Task::Profession => "profession",
        }
    }

    pub fn display(self) -> &'static str {
        match self {
            Task::Gender => "Gender",
            Task::Profession => "Profession",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "gender" => Ok(Task::Gender),
            "profession" => Ok(Task::Profession),
            other => Err(format!("unknown task `{other}` (expected gender or profession)")),
        }
    }
}

/// Column names to look for after header normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub bio: String,
    pub gender: String,
    pub profession: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            bio: "bio".into(),
            gender: "gender".into(),
            profession: "profession".into(),
        }
    }
}

impl ColumnSchema {
    fn names(&self) -> [String; 3] {
        [
            normalize_header(&self.bio),
            normalize_header(&self.gender),
            normalize_header(&self.profession),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MalformedRow {
    pub line: u64,
    pub reason: String,
}

/// Result of [`load_corpus`]: kept rows plus drop bookkeeping.
///
/// `kept + dropped_missing + malformed.len() == raw_rows` always holds.
#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub records: Vec<RawRecord>,
    pub raw_rows: usize,
    pub dropped_missing: usize,
    pub malformed: Vec<MalformedRow>,
}

impl LoadOutcome {
    pub fn dropped(&self) -> usize {
        self.dropped_missing + self.malformed.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Csv,
    JsonLines,
}

fn normalize_header(h: &str) -> String {
    h.trim().to_lowercase()
}

fn present(field: Option<&str>) -> Option<String> {
    field
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

/// Guess the input format from the extension, falling back to sniffing the
/// first non-blank byte.
pub fn detect_format(path: &Path) -> Result<InputFormat, CorpusError> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_lowercase) {
        Some(ext) if ext == "jsonl" || ext == "ndjson" || ext == "json" => {
            return Ok(InputFormat::JsonLines)
        }
        Some(ext) if ext == "csv" => return Ok(InputFormat::Csv),
        _ => {}
    }
    let reader = BufReader::new(open(path)?);
    for line in reader.lines() {
        let line = line?;
        let t = line.trim_start();
        if t.is_empty() {
            continue;
        }
        return Ok(if t.starts_with('{') {
            InputFormat::JsonLines
        } else {
            InputFormat::Csv
        });
    }
    Ok(InputFormat::Csv)
}

fn open(path: &Path) -> Result<File, CorpusError> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CorpusError::FileNotFound(path.display().to_string()),
        _ => CorpusError::Io(e),
    })
}

/// Load a CSV or JSON-lines biography file.
///
/// Header names are lowercased and trimmed before matching `schema`. Rows
/// where any of the three fields is missing or blank are dropped; rows that
/// cannot be parsed are skipped and reported with their line number.
pub fn load_corpus(path: &Path, schema: &ColumnSchema) -> Result<LoadOutcome, CorpusError> {
    match detect_format(path)? {
        InputFormat::Csv => load_csv(path, schema),
        InputFormat::JsonLines => load_jsonl(path, schema),
    }
}

fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<LoadOutcome, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(open(path)?);
    let headers: Vec<String> = reader.headers()?.iter().map(normalize_header).collect();
    let mut cols = [0usize; 3];
    for (slot, name) in cols.iter_mut().zip(schema.names()) {
        *slot = headers
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CorpusError::SchemaMismatch(name.clone()))?;
    }

    let mut out = LoadOutcome::default();
    for row in reader.records() {
        out.raw_rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.malformed.push(MalformedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if row.len() != headers.len() {
            out.malformed.push(MalformedRow {
                line: row.position().map(|p| p.line()).unwrap_or(0),
                reason: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
            continue;
        }
        match (
            present(row.get(cols[0])),
            present(row.get(cols[1])),
            present(row.get(cols[2])),
        ) {
            (Some(bio), Some(gender), Some(profession)) => out.records.push(RawRecord {
                bio,
                gender,
                profession,
            }),
            _ => out.dropped_missing += 1,
        }
    }
    Ok(out)
}

fn load_jsonl(path: &Path, schema: &ColumnSchema) -> Result<LoadOutcome, CorpusError> {
    let names = schema.names();
    let reader = BufReader::new(open(path)?);
    let mut out = LoadOutcome::default();
    let mut seen = [false; 3];
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.raw_rows += 1;
        let obj = match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(serde_json::Value::Object(map)) => map,
            Ok(_) => {
                out.malformed.push(MalformedRow {
                    line: idx as u64 + 1,
                    reason: "line is not a JSON object".into(),
                });
                continue;
            }
            Err(e) => {
                out.malformed.push(MalformedRow {
                    line: idx as u64 + 1,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let normalized: BTreeMap<String, &serde_json::Value> =
            obj.iter().map(|(k, v)| (normalize_header(k), v)).collect();
        let mut fields: [Option<String>; 3] = Default::default();
        for (i, name) in names.iter().enumerate() {
            if let Some(v) = normalized.get(name) {
                seen[i] = true;
                fields[i] = present(v.as_str());
            }
        }
        match fields {
            [Some(bio), Some(gender), Some(profession)] => out.records.push(RawRecord {
                bio,
                gender,
                profession,
            }),
            _ => out.dropped_missing += 1,
        }
    }
    if out.raw_rows > out.malformed.len() {
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(CorpusError::SchemaMismatch(names[i].clone()));
        }
    }
    Ok(out)
}

/// Lowercase, replace every character outside `a-z` with a space, collapse
/// runs of spaces and trim.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_lowercase() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Bidirectional label dictionary with dense ids `0..len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    id_to_name: Vec<String>,
    #[serde(skip)]
    name_to_id: BTreeMap<String, u32>,
}

impl LabelMap {
    /// Ids are assigned in ascending lexicographic order of the names.
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        let id_to_name: Vec<String> = set.into_iter().collect();
        let name_to_id = id_to_name
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Self {
            id_to_name,
            name_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_name.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.name_to_id.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.id_to_name.get(id as usize).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.id_to_name
    }

    /// Rebuild the reverse index after deserialization.
    pub fn reindex(mut self) -> Self {
        self.name_to_id = self
            .id_to_name
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        self
    }
}

pub fn build_label_maps(records: &[RawRecord]) -> Result<(LabelMap, LabelMap), CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let gender = LabelMap::from_names(records.iter().map(|r| r.gender.as_str()));
    if gender.len() != 2 {
        return Err(CorpusError::GenderCardinality(
            gender.len(),
            gender.names().to_vec(),
        ));
    }
    let profession = LabelMap::from_names(records.iter().map(|r| r.profession.as_str()));
    Ok((gender, profession))
}

/// Normalize text and encode labels through the given maps.
pub fn encode_records(
    raw: &[RawRecord],
    gender: &LabelMap,
    profession: &LabelMap,
) -> Result<Vec<Record>, CorpusError> {
    raw.iter()
        .map(|r| {
            Ok(Record {
                text: normalize_text(&r.bio),
                gender_id: gender
                    .id(&r.gender)
                    .ok_or_else(|| CorpusError::UnknownLabel(r.gender.clone()))?,
                profession_id: profession
                    .id(&r.profession)
                    .ok_or_else(|| CorpusError::UnknownLabel(r.profession.clone()))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

/// Train/dev/test partition of a dataset.
///
/// `indices` records which input positions went to each part; it is empty
/// when the splits were supplied pre-made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<Record>,
    pub dev: Vec<Record>,
    pub test: Vec<Record>,
    pub seed: u64,
    #[serde(default)]
    pub indices: [Vec<usize>; 3],
}

impl SplitSet {
    /// Wrap splits that were loaded separately.
    pub fn from_parts(train: Vec<Record>, dev: Vec<Record>, test: Vec<Record>) -> Self {
        Self {
            train,
            dev,
            test,
            seed: 0,
            indices: Default::default(),
        }
    }

    pub fn parts(&self) -> [(&'static str, &[Record]); 3] {
        [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
        ]
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded uniform shuffle followed by contiguous slicing.
pub fn split_dataset(
    records: &[Record],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitSet, CorpusError> {
    let r = (ratios.train, ratios.dev, ratios.test);
    let positive = r.0 > 0.0 && r.1 > 0.0 && r.2 > 0.0;
    if !positive || ((r.0 + r.1 + r.2) - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(r));
    }
    let n = records.len();
    if n < 10 {
        return Err(CorpusError::TooFewRecords(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = ((n as f64) * r.0).round() as usize;
    let n_dev = (((n as f64) * r.1).round() as usize).min(n - n_train);
    let (train_idx, rest) = order.split_at(n_train);
    let (dev_idx, test_idx) = rest.split_at(n_dev);
    let take = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(SplitSet {
        train: take(train_idx),
        dev: take(dev_idx),
        test: take(test_idx),
        seed,
        indices: [train_idx.to_vec(), dev_idx.to_vec(), test_idx.to_vec()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDistribution {
    pub split: String,
    pub total: usize,
    pub gender_counts: [usize; 2],
    pub gender_pct: [f64; 2],
    pub profession_counts: Vec<usize>,
}

/// Per-split gender and profession counts, plus the per-profession gender
/// mix over the whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub splits: Vec<SplitDistribution>,
    /// `profession_gender_ratio[p][g]`: fraction of profession `p` records with gender `g`.
    pub profession_gender_ratio: Vec<[f64; 2]>,
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

pub fn compute_distribution_stats(splits: &SplitSet, num_professions: usize) -> DistributionStats {
    let k = splits
        .parts()
        .iter()
        .flat_map(|(_, recs)| recs.iter().map(|r| r.profession_id as usize + 1))
        .max()
        .unwrap_or(0)
        .max(num_professions);
    let mut joint = vec![[0usize; 2]; k];
    let mut out = Vec::with_capacity(3);
    for (name, recs) in splits.parts() {
        let mut gender_counts = [0usize; 2];
        let mut profession_counts = vec![0usize; k];
        for r in recs {
            gender_counts[r.gender_id as usize] += 1;
            profession_counts[r.profession_id as usize] += 1;
            joint[r.profession_id as usize][r.gender_id as usize] += 1;
        }
        let total = recs.len();
        out.push(SplitDistribution {
            split: name.to_string(),
            total,
            gender_counts,
            gender_pct: [pct(gender_counts[0], total), pct(gender_counts[1], total)],
            profession_counts,
        });
    }
    let profession_gender_ratio = joint
        .iter()
        .map(|c| {
            let t = c[0] + c[1];
            if t == 0 {
                [0.0, 0.0]
            } else {
                [c[0] as f64 / t as f64, c[1] as f64 / t as f64]
            }
        })
        .collect();
    DistributionStats {
        splits: out,
        profession_gender_ratio,
    }
}
