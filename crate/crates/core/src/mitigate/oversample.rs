use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MitigateError;
use crate::corpus::{Record, Task};

/// Indices into `labels` forming the oversampled multiset.
///
/// The output starts with `0..labels.len()` in order; for each class below
/// the majority count (in class order) it then appends indices drawn
/// uniformly with replacement from that class until its count matches.
pub fn oversample_indices(
    labels: &[u32],
    num_classes: usize,
    seed: u64,
) -> Result<Vec<usize>, MitigateError> {
    if num_classes == 0 || labels.is_empty() {
        return Err(MitigateError::EmptyClassList);
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        members
            .get_mut(l as usize)
            .ok_or(MitigateError::LabelOutOfRange(l, num_classes))?
            .push(i);
    }
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return Err(MitigateError::MissingClass(c as u32));
    }
    let majority = members.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = (0..labels.len()).collect();
    out.reserve(majority * num_classes - labels.len());
    for m in &members {
        for _ in m.len()..majority {
            out.push(m[rng.gen_range(0..m.len())]);
        }
    }
    Ok(out)
}

/// Random oversampling of `train` on the given task label. Apply to the
/// training split only.
pub fn oversample(
    train: &[Record],
    target: Task,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<Record>, MitigateError> {
    let labels: Vec<u32> = train.iter().map(|r| target.label(r)).collect();
    Ok(oversample_indices(&labels, num_classes, seed)?
        .into_iter()
        .map(|i| train[i].clone())
        .collect())
}
