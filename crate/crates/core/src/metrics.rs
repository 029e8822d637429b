//! Ranking metrics and confusion matrices.

use crate::error::{Error, Result};

/// Zero-based position of `label` when classes are sorted by descending
/// score, ties going to the lower class id.
pub fn rank_of<T: PartialOrd + Copy>(scores: &[T], label: usize) -> usize {
    let s = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(c, &x)| x > s || (c < label && x == s))
        .count()
}

/// Class ids sorted by descending score, ties going to the lower id.
pub fn rank_desc<T: PartialOrd + Copy>(scores: &[T]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids
}

pub fn argmax<T: PartialOrd + Copy>(scores: &[T]) -> usize {
    rank_desc(scores)[0]
}

/// Percentage of rows of `scores` (`labels.len() × num_classes`) whose true
/// label ranks within the top `k`.
pub fn topk_accuracy<T: PartialOrd + Copy>(
    scores: &[T],
    num_classes: usize,
    labels: &[usize],
    k: usize,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::contract("top-k accuracy needs k ≥ 1"));
    }
    if labels.is_empty() || num_classes == 0 || scores.len() != labels.len() * num_classes {
        return Err(Error::contract(format!(
            "top-k accuracy: {} scores for {} samples of {num_classes} classes",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let hits = scores
        .chunks(num_classes)
        .zip(labels)
        .filter(|(row, &l)| rank_of(row, l) < k)
        .count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// Counts indexed `[actual][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize, predicted: &[usize], actual: &[usize]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::contract(
                "confusion matrix: prediction and label counts differ",
            ));
        }
        let mut counts = vec![0; num_classes * num_classes];
        for (&p, &a) in predicted.iter().zip(actual) {
            if p >= num_classes || a >= num_classes {
                return Err(Error::Data(format!(
                    "class pair ({a}, {p}) out of range for {num_classes} classes"
                )));
            }
            counts[a * num_classes + p] += 1;
        }
        Ok(Self {
            num_classes,
            counts,
        })
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.num_classes + predicted]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts
            .chunks(self.num_classes)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Each row divided by its sum; rows of absent classes stay zero.
    pub fn normalized(&self) -> Vec<f64> {
        let c = self.num_classes;
        let mut out = vec![0.0; c * c];
        for (row, out) in self.counts.chunks(c).zip(out.chunks_mut(c)) {
            let sum: u64 = row.iter().sum();
            if sum > 0 {
                for (o, &n) in out.iter_mut().zip(row) {
                    *o = n as f64 / sum as f64;
                }
            }
        }
        out
    }
}
