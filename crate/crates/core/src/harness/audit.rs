//! Audit of externally produced predictions.
//!
//! Score files are CSV with `y_true`, `group` and either `score_0..score_{K-1}`
//! (class probabilities) or `y_pred` (hard labels). An optional `split`
//! column marks rows as `train`, `dev` or `test`; when present with scores,
//! an equalized-odds policy is fitted on the dev rows and applied to the
//! test rows, and metrics are reported on the test rows.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::classifier::argmax;
use crate::corpus::LabelMap;
use crate::fairmetrics::{evaluate, EvalBundle, FairnessReport};
use crate::mitigate::{apply_eo_policy_multiclass, fit_eo_policy_multiclass, MulticlassEoPolicy};

pub const SCORE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMark {
    Train,
    Dev,
    Test,
}

impl SplitMark {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(SplitMark::Train),
            "dev" | "validation" | "val" => Some(SplitMark::Dev),
            "test" => Some(SplitMark::Test),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            SplitMark::Train => "train",
            SplitMark::Dev => "dev",
            SplitMark::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub y_true: Vec<u32>,
    pub group: Vec<u32>,
    /// Names of non-numeric groups, in id order.
    pub group_names: Option<Vec<String>>,
    pub split: Option<Vec<SplitMark>>,
    pub scores: Option<Vec<Vec<f64>>>,
    pub y_pred: Option<Vec<u32>>,
    pub num_classes: usize,
}

impl ScoreFile {
    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    /// Hard predictions: `y_pred` if given, else the score argmax.
    pub fn predictions(&self) -> Vec<u32> {
        match (&self.y_pred, &self.scores) {
            (Some(p), _) => p.clone(),
            (None, Some(s)) => s.iter().map(|r| argmax(r) as u32).collect(),
            (None, None) => unreachable!("validated on read"),
        }
    }
}

fn schema(msg: impl Into<String>) -> HarnessError {
    HarnessError::SchemaMismatch(msg.into())
}

pub fn read_score_file(path: &Path) -> Result<ScoreFile> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let y_col = col("y_true").ok_or_else(|| schema("missing column 'y_true'"))?;
    let g_col = col("group").ok_or_else(|| schema("missing column 'group'"))?;
    let split_col = col("split");
    let pred_col = col("y_pred");
    let mut score_cols = Vec::new();
    while let Some(c) = col(&format!("score_{}", score_cols.len())) {
        score_cols.push(c);
    }
    let stray = headers
        .iter()
        .filter(|h| h.starts_with("score_"))
        .count();
    if stray != score_cols.len() {
        return Err(schema("score columns must be score_0..score_{K-1} without gaps"));
    }
    if score_cols.is_empty() && pred_col.is_none() {
        return Err(schema("need score_0..score_{K-1} or y_pred columns"));
    }
    if score_cols.len() == 1 {
        return Err(schema("need at least two score columns"));
    }

    let mut y_true = Vec::new();
    let mut raw_groups = Vec::new();
    let mut split = Vec::new();
    let mut scores = Vec::new();
    let mut y_pred = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let field = |c: usize| rec.get(c).ok_or_else(|| schema(format!("line {line}: missing field")));
        let int = |c: usize, name: &str| -> Result<u32> {
            field(c)?
                .parse()
                .map_err(|_| schema(format!("line {line}: {name} must be a non-negative integer")))
        };
        y_true.push(int(y_col, "y_true")?);
        raw_groups.push(field(g_col)?.to_string());
        if let Some(c) = split_col {
            let v = field(c)?;
            split.push(SplitMark::parse(v).ok_or_else(|| schema(format!("line {line}: unknown split '{v}'")))?);
        }
        if let Some(c) = pred_col {
            y_pred.push(int(c, "y_pred")?);
        }
        if !score_cols.is_empty() {
            let row = score_cols
                .iter()
                .map(|&c| {
                    field(c)?
                        .parse::<f64>()
                        .map_err(|_| schema(format!("line {line}: scores must be numbers")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let sum: f64 = row.iter().sum();
            let sums_to_one = (sum - 1.0).abs() <= SCORE_SUM_TOLERANCE;
            if !sums_to_one || row.iter().any(|s| *s < 0.0) {
                return Err(HarnessError::NonProbabilisticScores { line, sum });
            }
            scores.push(row);
        }
    }
    if y_true.is_empty() {
        return Err(schema("score file has no rows"));
    }

    let (group, group_names) = if raw_groups.iter().all(|g| g.parse::<u32>().is_ok()) {
        (raw_groups.iter().map(|g| g.parse().unwrap()).collect(), None)
    } else {
        let map = LabelMap::from_names(raw_groups.iter().map(String::as_str));
        (
            raw_groups.iter().map(|g| map.id(g).expect("present")).collect(),
            Some(map.names().to_vec()),
        )
    };
    let num_classes = if score_cols.is_empty() {
        let max = y_true.iter().chain(&y_pred).copied().max().unwrap_or(0) as usize;
        (max + 1).max(2)
    } else {
        score_cols.len()
    };
    if let Some(&y) = y_true.iter().chain(&y_pred).find(|&&y| y as usize >= num_classes) {
        return Err(schema(format!("label {y} out of range for {num_classes} score columns")));
    }
    Ok(ScoreFile {
        y_true,
        group,
        group_names,
        split: split_col.map(|_| split),
        scores: (!score_cols.is_empty()).then_some(scores),
        y_pred: pred_col.map(|_| y_pred),
        num_classes,
    })
}

pub fn write_score_file(path: &Path, file: &ScoreFile) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["y_true".to_string(), "group".to_string()];
    if file.split.is_some() {
        header.push("split".into());
    }
    if file.y_pred.is_some() {
        header.push("y_pred".into());
    }
    if file.scores.is_some() {
        header.extend((0..file.num_classes).map(|k| format!("score_{k}")));
    }
    w.write_record(&header)?;
    for i in 0..file.len() {
        let mut row = vec![file.y_true[i].to_string()];
        row.push(match &file.group_names {
            Some(names) => names[file.group[i] as usize].clone(),
            None => file.group[i].to_string(),
        });
        if let Some(s) = &file.split {
            row.push(s[i].as_str().to_string());
        }
        if let Some(p) = &file.y_pred {
            row.push(p[i].to_string());
        }
        if let Some(s) = &file.scores {
            row.extend(s[i].iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    super::write_atomic(path, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub grid_resolution: usize,
    pub seed: u64,
    /// Fit and apply the equalized-odds policy when the file allows it.
    pub mitigate: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            grid_resolution: 100,
            seed: 0,
            mitigate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    /// Metrics of the supplied predictions on the evaluated rows.
    pub report: FairnessReport,
    /// Metrics after equalized-odds post-processing, when fitted.
    pub mitigated: Option<FairnessReport>,
    pub policy: Option<MulticlassEoPolicy>,
    /// Post-processed labels for the evaluated rows.
    pub mitigated_predictions: Option<Vec<u32>>,
    pub evaluated_rows: usize,
    pub fit_rows: usize,
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// Full metric suite for a score file. With a split column, metrics cover
/// the test rows and the optional policy is fitted on the dev rows only.
pub fn audit_scores(path: &Path, opts: &AuditOptions) -> Result<AuditOutcome> {
    let file = read_score_file(path)?;
    audit_score_file(&file, opts)
}

pub fn audit_score_file(file: &ScoreFile, opts: &AuditOptions) -> Result<AuditOutcome> {
    let all: Vec<usize> = (0..file.len()).collect();
    let rows_of = |m: SplitMark| -> Vec<usize> {
        match &file.split {
            Some(s) => all.iter().copied().filter(|&i| s[i] == m).collect(),
            None => Vec::new(),
        }
    };
    let eval_rows = if file.split.is_some() {
        let t = rows_of(SplitMark::Test);
        if t.is_empty() {
            return Err(schema("split column present but no test rows"));
        }
        t
    } else {
        all.clone()
    };
    let preds = file.predictions();
    let y = pick(&file.y_true, &eval_rows);
    let g = pick(&file.group, &eval_rows);
    let bundle = EvalBundle::new(y.clone(), pick(&preds, &eval_rows), g.clone(), file.num_classes)?;
    let mut report = evaluate(&bundle, "audit", "external")?;
    if file.split.is_some() && file.scores.is_none() {
        report
            .flags
            .push("hard labels only; equalized-odds post-processing needs scores".into());
    }

    let mut out = AuditOutcome {
        report,
        mitigated: None,
        policy: None,
        mitigated_predictions: None,
        evaluated_rows: eval_rows.len(),
        fit_rows: 0,
    };
    if let (true, Some(_), Some(scores)) = (opts.mitigate, &file.split, &file.scores) {
        let dev = rows_of(SplitMark::Dev);
        if dev.is_empty() {
            return Err(schema("split column present but no dev rows to fit on"));
        }
        let policy = fit_eo_policy_multiclass(
            &pick(scores, &dev),
            &pick(&file.y_true, &dev),
            &pick(&file.group, &dev),
            opts.grid_resolution,
        )?;
        let pred = apply_eo_policy_multiclass(&policy, &pick(scores, &eval_rows), &g, opts.seed)?;
        let bundle = EvalBundle::new(y, pred.clone(), g, file.num_classes)?;
        let mut mitigated = evaluate(&bundle, "Post-proc EO", "external")?;
        mitigated
            .flags
            .extend(policy.flags.iter().map(|f| format!("eo: {f}")));
        out.mitigated = Some(mitigated);
        out.policy = Some(policy);
        out.mitigated_predictions = Some(pred);
        out.fit_rows = dev.len();
    }
    Ok(out)
}
