//! Bias mitigation: random oversampling before training, inverse-frequency
//! class weights during training, and equalized-odds threshold
//! post-processing after training.

mod eo;
mod oversample;
mod weights;

pub use eo::{
    apply_eo_policy, apply_eo_policy_multiclass, expected_operating_point, fit_eo_policy,
    fit_eo_policy_multiclass, EoPolicy, GroupRule, GroupedScores, MulticlassEoPolicy, RocHull,
    RocPoint, ALWAYS_THRESHOLD, NEVER_THRESHOLD,
};
pub use oversample::{oversample, oversample_indices};
pub use weights::{compute_class_weights, ClassWeights};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MitigateError {
    #[error("no classes to balance")]
    EmptyClassList,
    #[error("class {0} has no examples in the training data")]
    MissingClass(u32),
    #[error("label {0} out of range for {1} classes")]
    LabelOutOfRange(u32, usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid scores: {0}")]
    BadScores(String),
    #[error("group {group} has no {missing} examples")]
    GroupMissingClass { group: u32, missing: &'static str },
    #[error("group {0} is not covered by the policy")]
    UnknownGroup(u32),
}
