use serde::{Deserialize, Serialize};

use super::MitigateError;

/// Inverse-frequency class weights, `N / (K * n_c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0; k],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

pub fn compute_class_weights(labels: &[u32], k: usize) -> Result<ClassWeights, MitigateError> {
    if k == 0 {
        return Err(MitigateError::EmptyClassList);
    }
    let mut counts = vec![0u64; k];
    for &l in labels {
        *counts
            .get_mut(l as usize)
            .ok_or(MitigateError::LabelOutOfRange(l, k))? += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(MitigateError::MissingClass(c as u32));
    }
    let n = labels.len() as f64;
    Ok(ClassWeights {
        weights: counts
            .iter()
            .map(|&c| n / (k as f64 * c as f64))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels_from_counts(counts: &[usize]) -> Vec<u32> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n))
            .collect()
    }

    #[test]
    fn examples() {
        let w = compute_class_weights(&labels_from_counts(&[5, 5, 5]), 3).unwrap();
        assert_eq!(w.weights, vec![1.0; 3]);

        let w = compute_class_weights(&labels_from_counts(&[75, 25]), 2).unwrap();
        assert!((w.weights[0] - 100.0 / 150.0).abs() < 1e-9);
        assert!((w.weights[1] - 2.0).abs() < 1e-9);

        let w = compute_class_weights(&labels_from_counts(&[10, 10, 10, 70]), 4).unwrap();
        for (got, want) in w.weights.iter().zip([2.5, 2.5, 2.5, 0.3571]) {
            assert!((got - want).abs() < 1e-4);
        }
    }

    #[test]
    fn missing_class() {
        assert_eq!(
            compute_class_weights(&[0, 0, 2], 3),
            Err(MitigateError::MissingClass(1))
        );
    }

    proptest::proptest! {
        #[test]
        fn effective_weight_preserved(counts in proptest::collection::vec(1usize..200, 1..30)) {
            let labels = labels_from_counts(&counts);
            let w = compute_class_weights(&labels, counts.len()).unwrap();
            let total: f64 = w.weights.iter().zip(&counts).map(|(w, &n)| w * n as f64).sum();
            proptest::prop_assert!((total - labels.len() as f64).abs() < 1e-9);
            proptest::prop_assert!(w.weights.iter().all(|w| w.is_finite() && *w > 0.0));
        }
    }
}
