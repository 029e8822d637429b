//! Stage wiring shared by the command-line tool and end-to-end tests.

use std::collections::HashMap;

use log::info;
use mgr_autodiff::ParamStore;

use crate::alignment::{
    align_train, gather_features, gather_labels, init_alignment, AlignmentModel,
};
use crate::baseline::NearestCentroid;
use crate::config::RunConfig;
use crate::dataio::{Corpus, Split};
use crate::emotion::{
    build_sequence, emotion_train, ClipOutput, EmotionConfig, EmotionSequence, Modality,
};
use crate::error::{Error, Result};
use crate::metrics::{argmax, topk_accuracy, ConfusionMatrix};
use crate::mgr_head::{finetune, FinetuneOutcome, MgrPrediction, MlpClassifier};
use crate::prompting::PromptMode;

/// A corpus with its video-level train/test partition.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub corpus: Corpus,
    pub split: Split,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Prepared {
    pub fn new(corpus: Corpus, cfg: &RunConfig) -> Result<Self> {
        corpus.validate()?;
        cfg.check_vocabulary(&corpus.vocabulary)?;
        let split = Split::by_video(&corpus.records, cfg.data.test_fraction, cfg.seed)?;
        split.check_disjoint()?;
        let (train, test) = split.indices(&corpus.records);
        info!("{} train clips, {} test clips", train.len(), test.len());
        Ok(Self {
            corpus,
            split,
            train,
            test,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.corpus.num_classes()
    }

    fn eval_set(&self) -> Result<&[usize]> {
        if self.test.is_empty() {
            return Err(Error::Data("the held-out split is empty".into()));
        }
        Ok(&self.test)
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        gather_labels(&self.corpus, indices)
    }
}

/// Ranking quality of a score matrix over a set of clips.
#[derive(Clone, Debug)]
pub struct Ranking {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    /// `indices.len() × C`.
    pub scores: Vec<f32>,
    pub top1: f64,
    pub top5: f64,
}

impl Ranking {
    fn new(
        indices: Vec<usize>,
        labels: Vec<usize>,
        scores: Vec<f32>,
        num_classes: usize,
    ) -> Result<Self> {
        let top1 = topk_accuracy(&scores, num_classes, &labels, 1)?;
        let top5 = topk_accuracy(&scores, num_classes, &labels, 5.min(num_classes))?;
        Ok(Self {
            indices,
            labels,
            scores,
            top1,
            top5,
        })
    }

    pub fn predicted(&self) -> Vec<usize> {
        let c = self.scores.len() / self.labels.len();
        self.scores.chunks(c).map(argmax).collect()
    }

    pub fn confusion(&self) -> Result<ConfusionMatrix> {
        let c = self.scores.len() / self.labels.len();
        ConfusionMatrix::new(c, &self.predicted(), &self.labels)
    }

    /// Top-1 over the clips whose true label is in `classes`.
    pub fn top1_within(&self, classes: &[usize]) -> Result<f64> {
        let c = self.scores.len() / self.labels.len();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (row, &l) in self.scores.chunks(c).zip(&self.labels) {
            if classes.contains(&l) {
                scores.extend_from_slice(row);
                labels.push(l);
            }
        }
        topk_accuracy(&scores, c, &labels, 1)
    }
}

/// Zero-shot retrieval of the held-out clips against every class.
pub fn zero_shot(p: &Prepared, model: &AlignmentModel, store: &ParamStore<f32>) -> Result<Ranking> {
    let test = p.eval_set()?.to_vec();
    let features = gather_features(&p.corpus, &test);
    let scores = model.class_scores(store, &p.corpus.vocabulary, &features, test.len())?;
    Ranking::new(test.clone(), p.labels(&test), scores, p.num_classes())
}

/// Nearest-centroid classification of the held-out clips on raw features.
pub fn nearest_centroid(p: &Prepared) -> Result<Ranking> {
    let test = p.eval_set()?.to_vec();
    let train: Vec<&[f32]> = p
        .train
        .iter()
        .map(|&i| &p.corpus.records[i].visual_feature[..])
        .collect();
    let nc = NearestCentroid::fit(&train, &p.labels(&p.train), p.num_classes())?;
    let scores = test
        .iter()
        .flat_map(|&i| nc.scores(&p.corpus.records[i].visual_feature))
        .map(|s| s as f32)
        .collect();
    Ranking::new(test.clone(), p.labels(&test), scores, p.num_classes())
}

/// Frozen aligned representation of every clip in corpus order, `N × D`.
pub fn visual_features(
    p: &Prepared,
    model: &AlignmentModel,
    store: &ParamStore<f32>,
) -> Result<Vec<f32>> {
    let all: Vec<usize> = (0..p.corpus.records.len()).collect();
    model.pooled_visual(store, &gather_features(&p.corpus, &all), all.len())
}

fn rows(features: &[f32], dim: usize, indices: &[usize]) -> Vec<f32> {
    indices
        .iter()
        .flat_map(|&i| features[i * dim..(i + 1) * dim].iter().copied())
        .collect()
}

/// Trains the clip classifier on the training clips' frozen features.
pub fn train_classifier(
    p: &Prepared,
    features: &[f32],
    cfg: &RunConfig,
) -> Result<FinetuneOutcome> {
    let dim = features.len() / p.corpus.records.len();
    finetune(
        &rows(features, dim, &p.train),
        &p.labels(&p.train),
        p.num_classes(),
        &cfg.finetune,
        cfg.seed,
    )
}

/// Classifier logits for every clip in corpus order.
pub fn classifier_logits(
    p: &Prepared,
    features: &[f32],
    model: &MlpClassifier,
    store: &ParamStore<f32>,
) -> Result<Vec<f32>> {
    model.logits(store, features, p.corpus.records.len())
}

/// Held-out ranking from per-clip logits in corpus order.
pub fn classifier_ranking(p: &Prepared, logits: &[f32]) -> Result<Ranking> {
    let test = p.eval_set()?.to_vec();
    let c = p.num_classes();
    Ranking::new(test.clone(), p.labels(&test), rows(logits, c, &test), c)
}

pub fn predictions(p: &Prepared, logits: &[f32], indices: &[usize]) -> Vec<MgrPrediction> {
    let c = p.num_classes();
    indices
        .iter()
        .map(|&i| {
            MgrPrediction::from_logits(
                &p.corpus.records[i].clip_id,
                &logits[i * c..(i + 1) * c],
                &p.corpus.vocabulary,
            )
        })
        .collect()
}

/// Recognition outputs of every clip, keyed by clip id.
pub fn clip_outputs(p: &Prepared, features: &[f32], logits: &[f32]) -> HashMap<String, ClipOutput> {
    let all: Vec<usize> = (0..p.corpus.records.len()).collect();
    let dim = features.len() / all.len().max(1);
    predictions(p, logits, &all)
        .into_iter()
        .zip(&p.corpus.records)
        .enumerate()
        .map(|(i, (pred, r))| {
            (
                r.clip_id.clone(),
                ClipOutput {
                    clip_index: r.clip_index,
                    label_id: pred.label_id,
                    probs: pred.probs,
                    visual: features[i * dim..(i + 1) * dim].to_vec(),
                },
            )
        })
        .collect()
}

/// Emotion sequences of the train and test videos.
pub fn emotion_sets(
    p: &Prepared,
    outputs: &HashMap<String, ClipOutput>,
    modality: Modality,
    max_len: usize,
) -> Result<(Vec<EmotionSequence>, Vec<EmotionSequence>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for v in &p.corpus.videos {
        let seq = build_sequence(v, outputs, modality, max_len)?;
        if p.split.test_videos.contains(&v.video_id) {
            test.push(seq);
        } else {
            train.push(seq);
        }
    }
    Ok((train, test))
}

/// Held-out emotion accuracy for each input modality under one budget.
pub fn modality_comparison(
    p: &Prepared,
    outputs: &HashMap<String, ClipOutput>,
    config: &EmotionConfig,
    seed: u64,
) -> Result<Vec<(Modality, f64)>> {
    let mut report = Vec::with_capacity(3);
    for modality in Modality::ALL {
        let cfg = EmotionConfig {
            modality,
            ..config.clone()
        };
        let (train, test) = emotion_sets(p, outputs, modality, cfg.max_len)?;
        if test.is_empty() {
            return Err(Error::Data("no held-out videos".into()));
        }
        let out = emotion_train(&train, &test, p.num_classes(), &cfg, seed)?;
        info!("{modality}: {:.2}", out.test_accuracy);
        report.push((modality, out.test_accuracy));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub top1: f64,
    pub top5: f64,
}

pub const ABLATION_ROWS: [&str; 5] = [
    "Baseline",
    "+ Visual-text contrastive learning",
    "+ Handcrafted prompting",
    "+ Adaptive prompting",
    "+ Finetune",
];

/// The five-row protocol. The first row trains the classifier on frozen,
/// never-aligned projections; the middle rows are zero-shot retrieval after
/// alignment with each prompt mode; the last fine-tunes on the adaptive one.
pub fn ablation(p: &Prepared, cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let mut out = Vec::with_capacity(5);
    let row = |name, r: &Ranking| AblationRow {
        name,
        top1: r.top1,
        top5: r.top5,
    };

    let (store, model) = init_alignment(&p.corpus, &cfg.align, cfg.data.visual_tokens, cfg.seed)?;
    let features = visual_features(p, &model, &store)?;
    let ft = train_classifier(p, &features, cfg)?;
    let logits = classifier_logits(p, &features, &ft.model, &ft.store)?;
    out.push(row(ABLATION_ROWS[0], &classifier_ranking(p, &logits)?));

    let modes = [
        PromptMode::None,
        PromptMode::Handcrafted(cfg.ablation.template.clone()),
        PromptMode::Adaptive,
    ];
    let mut last = None;
    for (name, prompt) in ABLATION_ROWS[1..4].iter().zip(modes) {
        let align = crate::alignment::AlignConfig {
            prompt,
            ..cfg.align.clone()
        };
        let trained = align_train(
            &p.corpus,
            &p.train,
            &align,
            cfg.data.visual_tokens,
            cfg.seed,
        )?;
        out.push(row(name, &zero_shot(p, &trained.model, &trained.store)?));
        last = Some(trained);
    }

    let trained = last.expect("three alignment rows");
    let features = visual_features(p, &trained.model, &trained.store)?;
    let ft = train_classifier(p, &features, cfg)?;
    let logits = classifier_logits(p, &features, &ft.model, &ft.store)?;
    out.push(row(ABLATION_ROWS[4], &classifier_ranking(p, &logits)?));
    Ok(out)
}
