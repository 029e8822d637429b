//! Synthetic corpora with controllable visual confusability.
//!
//! Every class gets a Gaussian visual centroid. Classes listed in
//! `confusable_pairs` share a base centroid and are split apart by only
//! `confusable_separation` along a direction `u = (n + d)/√2`, where `n` is a
//! pair-specific nuisance axis carrying large clip-level noise and `d` is
//! orthogonal to it. Euclidean nearest-centroid decisions project onto `u` and
//! inherit the nuisance noise; a learned projection can read `d` alone.
//!
//! Text features are near-orthogonal per class and identical in structure
//! across templates up to a small per-template offset, so the two members of
//! a visually confusable pair are far apart in text space.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::corpus::{
    Corpus, FeatureRecord, LabelVocabulary, Template, VideoEmotionRecord, VocabClass,
};
use crate::error::{Error, Result};

const GESTURE_NAMES: &[&str] = &[
    "touching jaw",
    "touching or scratching neck",
    "folding arms",
    "scratching head",
    "rubbing eyes",
    "touching nose",
    "crossing fingers",
    "pressing lips",
    "biting nails",
    "arms akimbo",
    "shaking shoulders",
    "touching ears",
    "playing with objects",
    "sitting straightly",
    "head up",
    "head down",
    "tilting head",
    "turtle neck",
    "bowing head",
    "covering face",
    "rubbing hands",
    "moving torso",
    "touching forehead",
    "adjusting hair",
    "touching facial parts",
    "minaret gesture",
    "hands together",
    "waving hands",
    "pointing",
    "shrugging",
    "leaning forward",
    "touching chest",
];

/// Rule mapping a video's gesture sequence to its emotion label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmotionRule {
    /// 1 when strictly more than half of the clips carry an even gesture id,
    /// else 0.
    MajorityEven,
}

impl EmotionRule {
    pub fn num_emotions(self) -> usize {
        match self {
            EmotionRule::MajorityEven => 2,
        }
    }

    pub fn label(self, gestures: &[usize]) -> usize {
        match self {
            EmotionRule::MajorityEven => {
                let even = gestures.iter().filter(|&&g| g % 2 == 0).count();
                usize::from(2 * even > gestures.len())
            }
        }
    }
}

pub fn default_templates() -> Vec<Template> {
    [
        ("label", "{label}"),
        ("a_photo_of", "a photo of {label}"),
        ("a_video_of", "a video of {label}"),
        ("an_action_of", "an action of {label}"),
    ]
    .into_iter()
    .map(|(id, text)| Template {
        id: id.into(),
        text: text.into(),
    })
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub clips_per_class: usize,
    /// Width of one visual token.
    pub visual_dim: usize,
    /// Tokens per clip; a record's feature is their concatenation.
    pub tokens_per_clip: usize,
    pub text_dim: usize,
    /// Per-coordinate standard deviation of class centroids.
    pub centroid_scale: f64,
    /// Per-coordinate standard deviation of isotropic clip noise.
    pub visual_spread: f64,
    pub confusable_pairs: Vec<[usize; 2]>,
    /// Distance between the two centroids of a confusable pair.
    pub confusable_separation: f64,
    /// Standard deviation of clip noise along a pair's nuisance axis.
    pub nuisance_scale: f64,
    pub template_offset: f64,
    pub templates: Vec<Template>,
    /// Inclusive range of clips per video.
    pub clips_per_video: [usize; 2],
    /// Probability that a clip is drawn from the gesture parity favoured by
    /// the video's latent emotion.
    pub emotion_bias: f64,
    pub emotion_rule: EmotionRule,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            clips_per_class: 200,
            visual_dim: 64,
            tokens_per_clip: 1,
            text_dim: 64,
            centroid_scale: 3.0,
            visual_spread: 1.0,
            confusable_pairs: vec![[0, 1], [2, 3]],
            confusable_separation: 8.0,
            nuisance_scale: 12.0,
            template_offset: 0.1,
            templates: default_templates(),
            clips_per_video: [5, 11],
            emotion_bias: 0.8,
            emotion_rule: EmotionRule::MajorityEven,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least 2 classes"));
        }
        if self.confusable_pairs.is_empty() {
            return Err(Error::config(
                "confusable_pairs",
                "declare at least one visually confusable pair",
            ));
        }
        let mut seen = vec![false; self.num_classes];
        for (i, &[a, b]) in self.confusable_pairs.iter().enumerate() {
            let path = format!("confusable_pairs[{i}]");
            if a == b || a >= self.num_classes || b >= self.num_classes {
                return Err(Error::config(path, "needs two distinct valid class ids"));
            }
            for c in [a, b] {
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::config(path, format!("class {c} is already paired")));
                }
            }
        }
        if self.clips_per_class == 0 {
            return Err(Error::config("clips_per_class", "must be positive"));
        }
        if self.visual_dim < 2 || self.text_dim == 0 || self.tokens_per_clip == 0 {
            return Err(Error::config(
                "visual_dim",
                "visual_dim ≥ 2, text_dim ≥ 1 and tokens_per_clip ≥ 1 required",
            ));
        }
        if self.templates.is_empty() {
            return Err(Error::config("templates", "need at least one template"));
        }
        let [lo, hi] = self.clips_per_video;
        if lo == 0 || lo > hi {
            return Err(Error::config("clips_per_video", "need 1 ≤ min ≤ max"));
        }
        if !(0.0..=1.0).contains(&self.emotion_bias) {
            return Err(Error::config("emotion_bias", "must be in [0, 1]"));
        }
        for (name, v) in [
            ("centroid_scale", self.centroid_scale),
            ("visual_spread", self.visual_spread),
            ("confusable_separation", self.confusable_separation),
            ("nuisance_scale", self.nuisance_scale),
            ("template_offset", self.template_offset),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn num_emotions(&self) -> usize {
        self.emotion_rule.num_emotions()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Random unit vector orthogonal to every vector in `basis` (which must be
/// orthonormal), provided the dimension leaves room.
fn orthogonal_unit(rng: &mut ChaCha8Rng, dim: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut v = gaussian(rng, dim, 1.0);
    if basis.len() < dim {
        for b in basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    }
    normalize(&mut v);
    v
}

struct PairGeometry {
    nuisance_axis: Vec<f64>,
}

pub fn gen_synthetic(config: &SynthConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = config.num_classes;
    let dv = config.visual_dim;

    let mut centroids: Vec<Vec<f64>> = (0..c)
        .map(|_| gaussian(&mut rng, dv, config.centroid_scale))
        .collect();
    let mut pair_of: Vec<Option<usize>> = vec![None; c];
    let mut pairs = Vec::new();
    for (p, &[a, b]) in config.confusable_pairs.iter().enumerate() {
        let nuisance = orthogonal_unit(&mut rng, dv, &[]);
        let disc = orthogonal_unit(&mut rng, dv, std::slice::from_ref(&nuisance));
        let half = config.confusable_separation / 2.0 / std::f64::consts::SQRT_2;
        let base = centroids[a].clone();
        for (class, sign) in [(a, 1.0), (b, -1.0)] {
            centroids[class] = base
                .iter()
                .zip(nuisance.iter().zip(&disc))
                .map(|(&m, (&n, &d))| m + sign * half * (n + d))
                .collect();
            pair_of[class] = Some(p);
        }
        pairs.push(PairGeometry {
            nuisance_axis: nuisance,
        });
    }

    // Clips, grouped by class.
    let mut features: Vec<(usize, Vec<f32>)> = Vec::with_capacity(c * config.clips_per_class);
    for (class, centroid) in centroids.iter().enumerate() {
        for _ in 0..config.clips_per_class {
            let nuisance = rng.sample::<f64, _>(StandardNormal) * config.nuisance_scale;
            let mut feature = Vec::with_capacity(dv * config.tokens_per_clip);
            for _ in 0..config.tokens_per_clip {
                let noise = gaussian(&mut rng, dv, config.visual_spread);
                for j in 0..dv {
                    let mut x = centroid[j] + noise[j];
                    if let Some(p) = pair_of[class] {
                        x += nuisance * pairs[p].nuisance_axis[j];
                    }
                    feature.push(x as f32);
                }
            }
            features.push((class, feature));
        }
    }

    // Text features.
    let dt = config.text_dim;
    let mut bases: Vec<Vec<f64>> = Vec::with_capacity(c);
    for _ in 0..c {
        let v = orthogonal_unit(&mut rng, dt, &bases);
        bases.push(v);
    }
    let offsets: Vec<Vec<f64>> = config
        .templates
        .iter()
        .map(|_| {
            let mut v = gaussian(&mut rng, dt, 1.0);
            normalize(&mut v);
            v.iter().map(|x| x * config.template_offset).collect()
        })
        .collect();
    let classes = (0..c)
        .map(|id| {
            let text_features = config
                .templates
                .iter()
                .zip(&offsets)
                .map(|(t, off)| {
                    let v = bases[id]
                        .iter()
                        .zip(off)
                        .map(|(b, o)| (b + o) as f32)
                        .collect();
                    (t.id.clone(), v)
                })
                .collect::<BTreeMap<_, _>>();
            VocabClass {
                id,
                name: GESTURE_NAMES
                    .get(id)
                    .map_or_else(|| format!("gesture {id}"), |s| s.to_string()),
                text_features,
            }
        })
        .collect();
    let vocabulary = LabelVocabulary {
        classes,
        templates: config.templates.clone(),
    };

    // Videos: each has a latent emotion that biases which gesture parity its
    // clips are drawn from; the label itself comes from the rule.
    let mut even: Vec<usize> = (0..features.len())
        .filter(|&i| features[i].0.is_multiple_of(2))
        .collect();
    let mut odd: Vec<usize> = (0..features.len())
        .filter(|&i| features[i].0 % 2 == 1)
        .collect();
    even.shuffle(&mut rng);
    odd.shuffle(&mut rng);
    let [lo, hi] = config.clips_per_video;
    let mut records = Vec::with_capacity(features.len());
    let mut videos = Vec::new();
    while !even.is_empty() || !odd.is_empty() {
        let len = rng.gen_range(lo..=hi);
        let favour_even = rng.gen_bool(0.5);
        let video_id = format!("video_{:04}", videos.len());
        let mut clip_ids = Vec::with_capacity(len);
        let mut gestures = Vec::with_capacity(len);
        for clip_index in 0..len {
            let preferred = rng.gen_bool(config.emotion_bias);
            let take_even = preferred == favour_even;
            let pool = match (take_even, even.is_empty(), odd.is_empty()) {
                (_, true, true) => break,
                (true, false, _) | (false, _, true) => &mut even,
                _ => &mut odd,
            };
            let (label, feature) = std::mem::take(&mut features[pool.pop().unwrap()]);
            let clip_id = format!("clip_{:05}", records.len());
            clip_ids.push(clip_id.clone());
            gestures.push(label);
            records.push(FeatureRecord {
                clip_id,
                video_id: video_id.clone(),
                clip_index,
                label_id: label,
                visual_feature: feature,
            });
        }
        videos.push(VideoEmotionRecord {
            video_id,
            clip_ids,
            emotion_label: config.emotion_rule.label(&gestures),
        });
    }

    let corpus = Corpus {
        records,
        vocabulary,
        videos,
    };
    corpus.validate()?;
    Ok(corpus)
}
