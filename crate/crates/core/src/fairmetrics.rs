//! Performance metrics (accuracy, per-class PRF, macro-F1) and group
//! fairness metrics (demographic parity difference, equalized odds
//! difference) over grouped predictions.
//!
//! Group aggregates are max-minus-min across groups. A TPR (FPR) cell for a
//! group with no positive (negative) ground-truth examples contributes rate 0
//! and is reported in [`GroupRates::empty_cells`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("label {0} out of range for {1} classes")]
    LabelOutOfRange(u32, usize),
    #[error("at least two groups are required")]
    SingleGroup,
    #[error("no positive ground-truth examples")]
    NoPositives,
    #[error("no negative ground-truth examples")]
    NoNegatives,
}

type Result<T> = std::result::Result<T, MetricError>;

fn check_pair(y_true: &[u32], y_pred: &[u32]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(MetricError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn check_labels(labels: &[u32], k: usize) -> Result<()> {
    match labels.iter().find(|&&l| l as usize >= k) {
        Some(&l) => Err(MetricError::LabelOutOfRange(l, k)),
        None => Ok(()),
    }
}

pub fn accuracy(y_true: &[u32], y_pred: &[u32]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// `cm[t][p]` counts samples with true label `t` predicted as `p`.
pub fn confusion_matrix(y_true: &[u32], y_pred: &[u32], k: usize) -> Result<Vec<Vec<u64>>> {
    check_pair(y_true, y_pred)?;
    check_labels(y_true, k)?;
    check_labels(y_pred, k)?;
    let mut cm = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm[t as usize][p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_class_prf(y_true: &[u32], y_pred: &[u32], k: usize) -> Result<Vec<ClassPrf>> {
    let cm = confusion_matrix(y_true, y_pred, k)?;
    Ok((0..k)
        .map(|c| {
            let tp = cm[c][c];
            let support: u64 = cm[c].iter().sum();
            let predicted: u64 = cm.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassPrf {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect())
}

/// Unweighted mean of per-class F1 over all `k` classes, absent ones included.
pub fn macro_f1(y_true: &[u32], y_pred: &[u32], k: usize) -> Result<f64> {
    let prf = per_class_prf(y_true, y_pred, k)?;
    Ok(prf.iter().map(|p| p.f1).sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub group: u32,
    pub count: u64,
    pub selection_rate: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub positives: u64,
    pub negatives: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub rates: Vec<GroupRate>,
    /// Human-readable notes for TPR/FPR cells with a zero denominator.
    pub empty_cells: Vec<String>,
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    hi - lo
}

impl GroupRates {
    pub fn dpd(&self) -> f64 {
        spread(self.rates.iter().map(|r| r.selection_rate))
    }

    pub fn tpr_gap(&self) -> f64 {
        spread(self.rates.iter().map(|r| r.tpr))
    }

    pub fn fpr_gap(&self) -> f64 {
        spread(self.rates.iter().map(|r| r.fpr))
    }

    pub fn eod(&self) -> f64 {
        self.tpr_gap().max(self.fpr_gap())
    }
}

/// Per-group selection rate, TPR and FPR for `positive_class` one-vs-rest.
/// `y_true` may be `None` when only selection rates are wanted.
pub fn group_rates(
    y_true: Option<&[u32]>,
    y_pred: &[u32],
    group: &[u32],
    positive_class: u32,
) -> Result<GroupRates> {
    if y_pred.len() != group.len() {
        return Err(MetricError::LengthMismatch(y_pred.len(), group.len()));
    }
    if let Some(t) = y_true {
        check_pair(t, y_pred)?;
    }
    if y_pred.is_empty() {
        return Err(MetricError::Empty);
    }
    // [count, selected, positives, true positives, negatives, false positives]
    let mut cells: BTreeMap<u32, [u64; 6]> = BTreeMap::new();
    for (i, (&p, &g)) in y_pred.iter().zip(group).enumerate() {
        let c = cells.entry(g).or_default();
        let sel = (p == positive_class) as u64;
        c[0] += 1;
        c[1] += sel;
        if let Some(t) = y_true {
            if t[i] == positive_class {
                c[2] += 1;
                c[3] += sel;
            } else {
                c[4] += 1;
                c[5] += sel;
            }
        }
    }
    if cells.len() < 2 {
        return Err(MetricError::SingleGroup);
    }
    let mut empty_cells = Vec::new();
    let rates = cells
        .into_iter()
        .map(|(g, c)| {
            if y_true.is_some() {
                if c[2] == 0 {
                    empty_cells.push(format!("group {g}: no positives, TPR taken as 0"));
                }
                if c[4] == 0 {
                    empty_cells.push(format!("group {g}: no negatives, FPR taken as 0"));
                }
            }
            GroupRate {
                group: g,
                count: c[0],
                selection_rate: ratio(c[1], c[0]),
                tpr: ratio(c[3], c[2]),
                fpr: ratio(c[5], c[4]),
                positives: c[2],
                negatives: c[4],
            }
        })
        .collect();
    Ok(GroupRates { rates, empty_cells })
}

pub fn demographic_parity_difference(
    y_pred: &[u32],
    group: &[u32],
    positive_class: u32,
) -> Result<f64> {
    Ok(group_rates(None, y_pred, group, positive_class)?.dpd())
}

pub fn equalized_odds_difference(
    y_true: &[u32],
    y_pred: &[u32],
    group: &[u32],
    positive_class: u32,
) -> Result<f64> {
    Ok(equalized_odds_detail(y_true, y_pred, group, positive_class)?.eod())
}

/// Like [`equalized_odds_difference`] but returns the full per-group table.
pub fn equalized_odds_detail(
    y_true: &[u32],
    y_pred: &[u32],
    group: &[u32],
    positive_class: u32,
) -> Result<GroupRates> {
    let rates = group_rates(Some(y_true), y_pred, group, positive_class)?;
    let positives: u64 = rates.rates.iter().map(|r| r.positives).sum();
    let negatives: u64 = rates.rates.iter().map(|r| r.negatives).sum();
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    if negatives == 0 {
        return Err(MetricError::NoNegatives);
    }
    Ok(rates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFairness {
    pub class: u32,
    pub dpd: f64,
    /// `None` when the class has no positive or no negative examples overall.
    pub eod: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassFairness {
    pub dpd: f64,
    pub eod: f64,
    pub dpd_mean: f64,
    pub eod_mean: f64,
    pub per_class: Vec<ClassFairness>,
    pub flags: Vec<String>,
}

/// One-vs-rest DPD/EOD per class, aggregated by max (and mean as a
/// secondary column). Classes with no positives or no negatives in `y_true`
/// are left out of the EOD aggregate and flagged.
pub fn multiclass_fairness(
    y_true: &[u32],
    y_pred: &[u32],
    group: &[u32],
    k: usize,
) -> Result<MulticlassFairness> {
    check_pair(y_true, y_pred)?;
    check_labels(y_true, k)?;
    check_labels(y_pred, k)?;
    let mut per_class = Vec::with_capacity(k);
    let mut flags = Vec::new();
    for c in 0..k as u32 {
        let dpd = demographic_parity_difference(y_pred, group, c)?;
        let eod = match equalized_odds_detail(y_true, y_pred, group, c) {
            Ok(r) => {
                flags.extend(r.empty_cells.iter().map(|m| format!("class {c}, {m}")));
                Some(r.eod())
            }
            Err(MetricError::NoPositives) | Err(MetricError::NoNegatives) => {
                flags.push(format!("class {c}: EOD undefined (no positives or negatives)"));
                None
            }
            Err(e) => return Err(e),
        };
        per_class.push(ClassFairness { class: c, dpd, eod });
    }
    let eods: Vec<f64> = per_class.iter().filter_map(|c| c.eod).collect();
    if eods.is_empty() {
        return Err(MetricError::NoPositives);
    }
    Ok(MulticlassFairness {
        dpd: per_class.iter().map(|c| c.dpd).fold(0.0, f64::max),
        eod: eods.iter().copied().fold(0.0, f64::max),
        dpd_mean: per_class.iter().map(|c| c.dpd).sum::<f64>() / k as f64,
        eod_mean: eods.iter().sum::<f64>() / eods.len() as f64,
        per_class,
        flags,
    })
}

/// Ground truth, predictions and sensitive-group ids for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBundle {
    pub y_true: Vec<u32>,
    pub y_pred: Vec<u32>,
    pub group: Vec<u32>,
    pub num_classes: usize,
}

impl EvalBundle {
    pub fn new(y_true: Vec<u32>, y_pred: Vec<u32>, group: Vec<u32>, num_classes: usize) -> Result<Self> {
        check_pair(&y_true, &y_pred)?;
        if group.len() != y_true.len() {
            return Err(MetricError::LengthMismatch(y_true.len(), group.len()));
        }
        check_labels(&y_true, num_classes)?;
        check_labels(&y_pred, num_classes)?;
        Ok(Self {
            y_true,
            y_pred,
            group,
            num_classes,
        })
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub condition: String,
    pub task: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassPrf>,
    pub dpd: f64,
    pub eod: f64,
    /// Mean over one-vs-rest classes; equals `dpd`/`eod` for binary tasks.
    pub dpd_mean: f64,
    pub eod_mean: f64,
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Full metric suite. Binary tasks use class 1 as the positive class;
/// multi-class tasks aggregate one-vs-rest values.
pub fn evaluate(bundle: &EvalBundle, condition: &str, task: &str) -> Result<FairnessReport> {
    let EvalBundle {
        y_true,
        y_pred,
        group,
        num_classes,
    } = bundle;
    let per_class = per_class_prf(y_true, y_pred, *num_classes)?;
    let macro_f1 = per_class.iter().map(|p| p.f1).sum::<f64>() / *num_classes as f64;
    let (dpd, eod, dpd_mean, eod_mean, flags) = if *num_classes == 2 {
        let rates = equalized_odds_detail(y_true, y_pred, group, 1)?;
        let (d, e) = (rates.dpd(), rates.eod());
        (d, e, d, e, rates.empty_cells)
    } else {
        let m = multiclass_fairness(y_true, y_pred, group, *num_classes)?;
        (m.dpd, m.eod, m.dpd_mean, m.eod_mean, m.flags)
    };
    Ok(FairnessReport {
        condition: condition.to_string(),
        task: task.to_string(),
        accuracy: accuracy(y_true, y_pred)?,
        macro_f1,
        per_class,
        dpd,
        eod,
        dpd_mean,
        eod_mean,
        flags,
    })
}
