//! Visual-only nearest-centroid classifier on raw features.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct NearestCentroid {
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
}

impl NearestCentroid {
    /// Fits per-class means; every class must have at least one sample.
    pub fn fit(features: &[&[f32]], labels: &[usize], num_classes: usize) -> Result<Self> {
        let dim = features.first().map_or(0, |f| f.len());
        let mut sums = vec![vec![0.0; dim]; num_classes];
        let mut counts = vec![0usize; num_classes];
        for (f, &l) in features.iter().zip(labels) {
            if f.len() != dim || l >= num_classes {
                return Err(Error::Data(format!("bad training sample for class {l}")));
            }
            counts[l] += 1;
            sums[l]
                .iter_mut()
                .zip(*f)
                .for_each(|(s, &x)| *s += f64::from(x));
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Data(format!("class {c} has no training samples")));
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|x| *x /= n as f64);
        }
        Ok(Self {
            dim,
            centroids: sums,
        })
    }

    /// Negative squared distance to each centroid.
    pub fn scores(&self, feature: &[f32]) -> Vec<f64> {
        self.centroids
            .iter()
            .map(|c| {
                -c.iter()
                    .zip(feature)
                    .map(|(m, &x)| (f64::from(x) - m).powi(2))
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, feature: &[f32]) -> usize {
        crate::metrics::argmax(&self.scores(feature))
    }
}
