//! Text-classification bias benchmarking: corpus handling, hashed n-gram
//! features, a softmax linear classifier, bias mitigations, group fairness
//! metrics and an experiment harness.

pub mod classifier;
pub mod corpus;
pub mod fairmetrics;
pub mod featurize;
pub mod mitigate;
pub mod rng;
pub mod synthdata;
pub mod harness;
