//! Equalized-odds post-processing by randomized group thresholds.
//!
//! Each group's achievable (FPR, TPR) operating points are the convex hull
//! of its ROC curve. The common target is picked on the lower envelope of
//! the groups' upper hulls, minimizing expected error
//! `pi * (1 - TPR) + (1 - pi) * FPR`. Every group then realizes the target
//! by mixing the two hull vertices around the target FPR; a group whose hull
//! lies above the target additionally mixes in a constant-rate rule (a
//! point on the diagonal) to bring its TPR down without moving its FPR.

use serde::{Deserialize, Serialize};

use super::MitigateError;
use crate::classifier::argmax;
use crate::rng::uniform_at;

type Result<T> = std::result::Result<T, MitigateError>;

/// A threshold every probability passes.
pub const ALWAYS_THRESHOLD: f64 = 0.0;
/// A threshold no probability passes.
pub const NEVER_THRESHOLD: f64 = 2.0;

/// Positive-class probabilities with binary labels and group ids.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedScores {
    pub scores: Vec<f64>,
    pub y_true: Vec<u32>,
    pub group: Vec<u32>,
}

impl GroupedScores {
    pub fn new(scores: Vec<f64>, y_true: Vec<u32>, group: Vec<u32>) -> Result<Self> {
        if scores.len() != y_true.len() {
            return Err(MitigateError::LengthMismatch(scores.len(), y_true.len()));
        }
        if scores.len() != group.len() {
            return Err(MitigateError::LengthMismatch(scores.len(), group.len()));
        }
        if scores.is_empty() {
            return Err(MitigateError::BadScores("no samples".into()));
        }
        check_scores(&scores)?;
        if let Some(&y) = y_true.iter().find(|&&y| y > 1) {
            return Err(MitigateError::BadScores(format!("label {y} is not binary")));
        }
        Ok(Self {
            scores,
            y_true,
            group,
        })
    }

    pub fn groups(&self) -> Vec<u32> {
        let mut g = self.group.clone();
        g.sort_unstable();
        g.dedup();
        g
    }

    fn subset(&self, g: u32) -> (Vec<f64>, Vec<bool>) {
        self.group
            .iter()
            .zip(self.scores.iter().zip(&self.y_true))
            .filter(|(&gi, _)| gi == g)
            .map(|(_, (&s, &y))| (s, y == 1))
            .unzip()
    }

    fn check_cells(&self) -> Result<()> {
        for g in self.groups() {
            let (_, labels) = self.subset(g);
            if !labels.iter().any(|&l| l) {
                return Err(MitigateError::GroupMissingClass {
                    group: g,
                    missing: "positive",
                });
            }
            if labels.iter().all(|&l| l) {
                return Err(MitigateError::GroupMissingClass {
                    group: g,
                    missing: "negative",
                });
            }
        }
        Ok(())
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        Some(s) => Err(MitigateError::BadScores(format!(
            "score {s} outside [0, 1]"
        ))),
        None => Ok(()),
    }
}

/// ROC operating point of the rule `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

fn cross(o: &RocPoint, a: &RocPoint, b: &RocPoint) -> f64 {
    (a.fpr - o.fpr) * (b.tpr - o.tpr) - (a.tpr - o.tpr) * (b.fpr - o.fpr)
}

/// Position on the upper hull at a given FPR.
#[derive(Debug, Clone, Copy)]
struct HullPos {
    tpr: f64,
    left: usize,
    right: usize,
    /// Weight of the right (lower-threshold) vertex.
    frac: f64,
}

/// ROC curve of one group and the convex hull of its points.
#[derive(Debug, Clone, PartialEq)]
pub struct RocHull {
    pub points: Vec<RocPoint>,
    pub upper: Vec<RocPoint>,
    pub lower: Vec<RocPoint>,
}

impl RocHull {
    /// `labels[i]` is true for positives. Needs at least one of each.
    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Self {
        let n_pos = labels.iter().filter(|&&l| l).count() as u64;
        let n_neg = labels.len() as u64 - n_pos;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

        let mut points = vec![RocPoint {
            fpr: 0.0,
            tpr: 0.0,
            threshold: NEVER_THRESHOLD,
        }];
        let (mut tp, mut fp) = (0u64, 0u64);
        let mut i = 0;
        while i < order.len() {
            let s = scores[order[i]];
            while i < order.len() && scores[order[i]] == s {
                if labels[order[i]] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            points.push(RocPoint {
                fpr: fp as f64 / n_neg as f64,
                tpr: tp as f64 / n_pos as f64,
                threshold: s,
            });
        }
        if let Some(last) = points.last_mut() {
            last.threshold = ALWAYS_THRESHOLD;
        }

        let chain = |keep_turn: fn(f64) -> bool| {
            let mut hull: Vec<RocPoint> = Vec::new();
            for p in &points {
                while hull.len() >= 2 && !keep_turn(cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p)) {
                    hull.pop();
                }
                hull.push(*p);
            }
            hull
        };
        let upper = chain(|c| c < 0.0);
        let lower = chain(|c| c > 0.0);
        Self {
            points,
            upper,
            lower,
        }
    }

    fn upper_pos(&self, fpr: f64) -> HullPos {
        let v = &self.upper;
        let i = v.partition_point(|p| p.fpr <= fpr);
        if i > 0 && v[i - 1].fpr == fpr {
            return HullPos {
                tpr: v[i - 1].tpr,
                left: i - 1,
                right: i - 1,
                frac: 0.0,
            };
        }
        let (l, r) = (i.saturating_sub(1), i.min(v.len() - 1));
        let frac = (fpr - v[l].fpr) / (v[r].fpr - v[l].fpr);
        HullPos {
            tpr: v[l].tpr + frac * (v[r].tpr - v[l].tpr),
            left: l,
            right: r,
            frac,
        }
    }

    /// Highest TPR reachable at this FPR.
    pub fn upper_at(&self, fpr: f64) -> f64 {
        self.upper_pos(fpr).tpr
    }

    /// Lowest TPR reachable at this FPR.
    pub fn lower_at(&self, fpr: f64) -> f64 {
        let v = &self.lower;
        let i = v.partition_point(|p| p.fpr < fpr);
        if i < v.len() && v[i].fpr == fpr {
            return v[i].tpr;
        }
        let (l, r) = (i.saturating_sub(1), i.min(v.len() - 1));
        let frac = (fpr - v[l].fpr) / (v[r].fpr - v[l].fpr);
        v[l].tpr + frac * (v[r].tpr - v[l].tpr)
    }

    /// Whether `(fpr, tpr)` is achievable by randomizing thresholds.
    pub fn contains(&self, fpr: f64, tpr: f64, tol: f64) -> bool {
        (-tol..=1.0 + tol).contains(&fpr)
            && tpr <= self.upper_at(fpr.clamp(0.0, 1.0)) + tol
            && tpr >= self.lower_at(fpr.clamp(0.0, 1.0)) - tol
    }
}

/// Per-group randomized threshold rule.
///
/// With probability `keep` the rule uses `t_lo` (with conditional
/// probability `mix`) or `t_hi`; otherwise it predicts positive with
/// probability `constant_rate` regardless of the score. `keep == 1` is the
/// plain two-threshold mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRule {
    pub group: u32,
    pub t_lo: f64,
    pub t_hi: f64,
    pub mix: f64,
    pub keep: f64,
    pub constant_rate: f64,
    /// Expected operating point on the fitting data.
    pub tpr: f64,
    pub fpr: f64,
    #[serde(default)]
    pub degenerate: bool,
}

impl GroupRule {
    fn single(group: u32, threshold: f64) -> Self {
        Self {
            group,
            t_lo: threshold,
            t_hi: threshold,
            mix: 1.0,
            keep: 1.0,
            constant_rate: 0.0,
            tpr: 0.0,
            fpr: 0.0,
            degenerate: false,
        }
    }

    /// Threshold selected by a uniform draw `u` in `[0, 1)`.
    pub fn threshold_for(&self, u: f64) -> f64 {
        let lo_cut = self.keep * self.mix;
        if u < lo_cut {
            self.t_lo
        } else if u < self.keep {
            self.t_hi
        } else if u < self.keep + (1.0 - self.keep) * self.constant_rate {
            ALWAYS_THRESHOLD
        } else {
            NEVER_THRESHOLD
        }
    }

    /// The rule as a distribution over thresholds.
    pub fn atoms(&self) -> [(f64, f64); 4] {
        [
            (self.t_lo, self.keep * self.mix),
            (self.t_hi, self.keep * (1.0 - self.mix)),
            (ALWAYS_THRESHOLD, (1.0 - self.keep) * self.constant_rate),
            (NEVER_THRESHOLD, (1.0 - self.keep) * (1.0 - self.constant_rate)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EoPolicy {
    pub positive_class: u32,
    pub target_tpr: f64,
    pub target_fpr: f64,
    /// Accuracy on the fitting data implied by the target point.
    pub expected_accuracy: f64,
    pub groups: Vec<GroupRule>,
    #[serde(default)]
    pub pass_through: bool,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl EoPolicy {
    pub fn rule(&self, group: u32) -> Result<&GroupRule> {
        self.groups
            .iter()
            .find(|r| r.group == group)
            .ok_or(MitigateError::UnknownGroup(group))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }
}

fn expected_error(base_rate: f64, fpr: f64, tpr: f64) -> f64 {
    base_rate * (1.0 - tpr) + (1.0 - base_rate) * fpr
}

fn candidate_fprs(hulls: &[RocHull], grid_resolution: usize) -> Vec<f64> {
    let mut xs: Vec<f64> = match grid_resolution {
        0 => Vec::new(),
        1 => vec![0.0],
        r => (0..r).map(|i| i as f64 / (r - 1) as f64).collect(),
    };
    let mut breaks: Vec<f64> = hulls
        .iter()
        .flat_map(|h| h.upper.iter().map(|p| p.fpr))
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    // Crossings of any two upper hulls between consecutive breakpoints.
    let mut crossings = Vec::new();
    for w in breaks.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let at0: Vec<f64> = hulls.iter().map(|h| h.upper_at(x0)).collect();
        let at1: Vec<f64> = hulls.iter().map(|h| h.upper_at(x1)).collect();
        for a in 0..hulls.len() {
            for b in a + 1..hulls.len() {
                let (f0, f1) = (at0[a] - at0[b], at1[a] - at1[b]);
                if f0 * f1 < 0.0 {
                    crossings.push(x0 + f0 / (f0 - f1) * (x1 - x0));
                }
            }
        }
    }
    xs.extend(breaks);
    xs.extend(crossings);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// Fit an equalized-odds policy on the given data (the dev split).
///
/// Candidate targets are `grid_resolution` evenly spaced FPR values plus
/// every breakpoint of the feasible frontier, so the optimum over the
/// frontier is always among them.
pub fn fit_eo_policy(data: &GroupedScores, grid_resolution: usize) -> Result<EoPolicy> {
    data.check_cells()?;
    let groups = data.groups();
    let mut flags = Vec::new();
    let mut hulls = Vec::with_capacity(groups.len());
    let mut subsets = Vec::with_capacity(groups.len());
    for &g in &groups {
        let (scores, labels) = data.subset(g);
        if scores.iter().all(|&s| s == scores[0]) {
            flags.push(format!(
                "group {g}: all scores identical, rule reduces to a constant rate"
            ));
        }
        hulls.push(RocHull::from_scores(&scores, &labels));
        subsets.push((scores, labels));
    }
    let base_rate =
        data.y_true.iter().filter(|&&y| y == 1).count() as f64 / data.y_true.len() as f64;

    let mut best: Option<(f64, f64, f64)> = None;
    for x in candidate_fprs(&hulls, grid_resolution) {
        let y = hulls
            .iter()
            .map(|h| h.upper_at(x))
            .fold(f64::INFINITY, f64::min);
        let cost = expected_error(base_rate, x, y);
        if best.is_none_or(|(c, _, _)| cost < c) {
            best = Some((cost, x, y));
        }
    }
    let (cost, fpr, tpr) = best.expect("candidate set is never empty");

    let rules = groups
        .iter()
        .zip(&hulls)
        .zip(&subsets)
        .map(|((&g, hull), (scores, labels))| {
            let pos = hull.upper_pos(fpr);
            let (a, b) = (hull.upper[pos.left], hull.upper[pos.right]);
            let (keep, constant_rate) = if pos.tpr > tpr {
                ((tpr - fpr) / (pos.tpr - fpr), fpr)
            } else {
                (1.0, 0.0)
            };
            let mut rule = GroupRule {
                group: g,
                t_lo: b.threshold,
                t_hi: a.threshold,
                mix: if pos.left == pos.right { 1.0 } else { pos.frac },
                keep,
                constant_rate,
                tpr: 0.0,
                fpr: 0.0,
                degenerate: scores.iter().all(|&s| s == scores[0]),
            };
            (rule.tpr, rule.fpr) = rule_operating_point(&rule, scores, labels);
            rule
        })
        .collect();

    Ok(EoPolicy {
        positive_class: 1,
        target_tpr: tpr,
        target_fpr: fpr,
        expected_accuracy: 1.0 - cost,
        groups: rules,
        pass_through: false,
        flags,
    })
}

/// Expected (TPR, FPR) of a rule, by counting how many samples pass each
/// threshold the rule can draw.
fn rule_operating_point(rule: &GroupRule, scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let (mut tpr, mut fpr) = (0.0, 0.0);
    for (t, p) in rule.atoms() {
        if p == 0.0 {
            continue;
        }
        let (mut tp, mut fp) = (0u64, 0u64);
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= t {
                if l {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        if n_pos > 0.0 {
            tpr += p * tp as f64 / n_pos;
        }
        if n_neg > 0.0 {
            fpr += p * fp as f64 / n_neg;
        }
    }
    (tpr, fpr)
}

/// Expected `(group, TPR, FPR)` of every policy group on `data`.
pub fn expected_operating_point(
    policy: &EoPolicy,
    data: &GroupedScores,
) -> Result<Vec<(u32, f64, f64)>> {
    data.groups()
        .into_iter()
        .map(|g| {
            let rule = policy.rule(g)?;
            let (scores, labels) = data.subset(g);
            let (tpr, fpr) = rule_operating_point(rule, &scores, &labels);
            Ok((g, tpr, fpr))
        })
        .collect()
}

/// Binary predictions (1 = positive class) under the policy. Sample `i`
/// draws its uniform from the counter-based stream at index `i`.
pub fn apply_eo_policy(
    policy: &EoPolicy,
    scores: &[f64],
    group: &[u32],
    seed: u64,
) -> Result<Vec<u32>> {
    if scores.len() != group.len() {
        return Err(MitigateError::LengthMismatch(scores.len(), group.len()));
    }
    scores
        .iter()
        .zip(group)
        .enumerate()
        .map(|(i, (&s, &g))| {
            let t = policy.rule(g)?.threshold_for(uniform_at(seed, i as u64, 0));
            Ok((s >= t) as u32)
        })
        .collect()
}

/// Single shared threshold at the pooled accuracy-optimal ROC vertex.
fn pass_through_policy(data: &GroupedScores, reason: String) -> EoPolicy {
    let labels: Vec<bool> = data.y_true.iter().map(|&y| y == 1).collect();
    let base_rate = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
    let best = if labels.iter().all(|&l| l) || !labels.iter().any(|&l| l) {
        // Without both classes the ROC is undefined; keep the raw score.
        RocPoint {
            fpr: 0.0,
            tpr: 0.0,
            threshold: ALWAYS_THRESHOLD,
        }
    } else {
        let hull = RocHull::from_scores(&data.scores, &labels);
        let mut best = hull.upper[0];
        for p in &hull.upper {
            if expected_error(base_rate, p.fpr, p.tpr) < expected_error(base_rate, best.fpr, best.tpr) {
                best = *p;
            }
        }
        best
    };
    EoPolicy {
        positive_class: 1,
        target_tpr: best.tpr,
        target_fpr: best.fpr,
        expected_accuracy: 1.0 - expected_error(base_rate, best.fpr, best.tpr),
        groups: data
            .groups()
            .into_iter()
            .map(|g| GroupRule::single(g, best.threshold))
            .collect(),
        pass_through: true,
        flags: vec![reason],
    }
}

/// One-vs-rest policies for a K-class score matrix.
///
/// For `K == 2` only the class-1 policy is kept and decisions follow the
/// binary rule. For `K > 2` the label is the argmax of the adjusted margins
/// `score_c - threshold_c`, ties to the lowest class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassEoPolicy {
    pub num_classes: usize,
    pub per_class: Vec<EoPolicy>,
    pub flags: Vec<String>,
}

fn check_matrix(scores: &[Vec<f64>], n: usize) -> Result<usize> {
    if scores.len() != n {
        return Err(MitigateError::LengthMismatch(scores.len(), n));
    }
    let k = scores.first().map(Vec::len).unwrap_or(0);
    if k < 2 {
        return Err(MitigateError::BadScores("need at least 2 score columns".into()));
    }
    if let Some(row) = scores.iter().find(|r| r.len() != k) {
        return Err(MitigateError::LengthMismatch(row.len(), k));
    }
    Ok(k)
}

pub fn fit_eo_policy_multiclass(
    scores: &[Vec<f64>],
    y_true: &[u32],
    group: &[u32],
    grid_resolution: usize,
) -> Result<MulticlassEoPolicy> {
    let k = check_matrix(scores, y_true.len())?;
    if let Some(&y) = y_true.iter().find(|&&y| y as usize >= k) {
        return Err(MitigateError::LabelOutOfRange(y, k));
    }
    let classes: Vec<u32> = if k == 2 { vec![1] } else { (0..k as u32).collect() };
    let mut per_class = Vec::with_capacity(classes.len());
    let mut flags = Vec::new();
    for c in classes {
        let data = GroupedScores::new(
            scores.iter().map(|r| r[c as usize]).collect(),
            y_true.iter().map(|&y| (y == c) as u32).collect(),
            group.to_vec(),
        )?;
        let mut policy = match fit_eo_policy(&data, grid_resolution) {
            Ok(p) => p,
            Err(e @ MitigateError::GroupMissingClass { .. }) => {
                pass_through_policy(&data, format!("{e}; pass-through threshold"))
            }
            Err(e) => return Err(e),
        };
        policy.positive_class = c;
        flags.extend(policy.flags.iter().map(|f| format!("class {c}: {f}")));
        per_class.push(policy);
    }
    Ok(MulticlassEoPolicy {
        num_classes: k,
        per_class,
        flags,
    })
}

pub fn apply_eo_policy_multiclass(
    policy: &MulticlassEoPolicy,
    scores: &[Vec<f64>],
    group: &[u32],
    seed: u64,
) -> Result<Vec<u32>> {
    let k = check_matrix(scores, group.len())?;
    if k != policy.num_classes {
        return Err(MitigateError::LengthMismatch(k, policy.num_classes));
    }
    if k == 2 {
        let pos: Vec<f64> = scores.iter().map(|r| r[1]).collect();
        return apply_eo_policy(&policy.per_class[0], &pos, group, seed);
    }
    scores
        .iter()
        .zip(group)
        .enumerate()
        .map(|(i, (row, &g))| {
            let margins = policy
                .per_class
                .iter()
                .zip(row)
                .enumerate()
                .map(|(c, (p, &s))| {
                    let u = uniform_at(seed, i as u64, c as u64 + 1);
                    Ok(s - p.rule(g)?.threshold_for(u))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(argmax(&margins) as u32)
        })
        .collect()
}
