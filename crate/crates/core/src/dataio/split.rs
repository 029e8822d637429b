use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::FeatureRecord;
use crate::error::{Error, Result};

/// Train/test partition by video id. Clips follow their video.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train_videos: BTreeSet<String>,
    pub test_videos: BTreeSet<String>,
}

impl Split {
    /// Holds out `ceil(test_fraction · videos)` videos chosen by `seed`.
    /// With a single video everything stays in train.
    pub fn by_video(records: &[FeatureRecord], test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config("split.test_fraction", "must be in [0, 1)"));
        }
        let mut videos: Vec<String> = records
            .iter()
            .map(|r| r.video_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        videos.shuffle(&mut rng);
        let n_test = ((videos.len() as f64 * test_fraction).ceil() as usize)
            .min(videos.len().saturating_sub(1));
        let test_videos = videos[..n_test].iter().cloned().collect();
        let train_videos = videos[n_test..].iter().cloned().collect();
        Ok(Self {
            train_videos,
            test_videos,
        })
    }

    pub fn check_disjoint(&self) -> Result<()> {
        if let Some(v) = self.train_videos.intersection(&self.test_videos).next() {
            return Err(Error::config(
                "split",
                format!("video `{v}` appears in both train and test"),
            ));
        }
        Ok(())
    }

    /// Record indices of the train and test partitions, in corpus order.
    pub fn indices(&self, records: &[FeatureRecord]) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if self.test_videos.contains(&r.video_id) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}
