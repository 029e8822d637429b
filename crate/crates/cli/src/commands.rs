use std::path::{Path, PathBuf};

use log::info;
use mgr_autodiff::{load_checkpoint, save_checkpoint, ParamStore};
use mgr_core::alignment::{align_train, init_alignment, AlignmentModel};
use mgr_core::config::RunConfig;
use mgr_core::dataio::{gen_synthetic, Corpus};
use mgr_core::emotion::{emotion_train, input_dim, EmotionModel};
use mgr_core::metrics::{argmax, ConfusionMatrix};
use mgr_core::mgr_head::{MgrPrediction, MlpClassifier};
use mgr_core::pipeline::{self, Prepared, Ranking};
use mgr_core::{Error, Result};
use serde_json::json;

use crate::artifacts::{self, PREDICTIONS};

pub const ALIGN_CHECKPOINT: &str = "align.mgrc";
pub const MGR_CHECKPOINT: &str = "mgr.mgrc";
pub const EMOTION_CHECKPOINT: &str = "emotion.mgrc";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenSynth,
    AlignTrain,
    ZeroShotEval,
    FinetuneCls,
    EvalMgr,
    TrainEmotion,
    EvalEmotion,
    Ablate,
    ModalityCompare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenSynth => "gen-synth",
            Command::AlignTrain => "align-train",
            Command::ZeroShotEval => "zero-shot-eval",
            Command::FinetuneCls => "finetune-cls",
            Command::EvalMgr => "eval-mgr",
            Command::TrainEmotion => "train-emotion",
            Command::EvalEmotion => "eval-emotion",
            Command::Ablate => "ablate",
            Command::ModalityCompare => "modality-compare",
        }
    }
}

/// Directory receiving a subcommand's metrics and traces.
pub fn stage_dir(cfg: &RunConfig, command: Command) -> PathBuf {
    match command {
        Command::GenSynth => cfg.paths.corpus.clone(),
        _ => cfg.paths.out.join(command.name()),
    }
}

pub fn execute(command: Command, cfg: RunConfig) -> Result<()> {
    let dir = stage_dir(&cfg, command);
    artifacts::create_dir(&dir)?;
    if command != Command::GenSynth {
        artifacts::create_dir(&cfg.paths.checkpoint_dir())?;
    }
    info!("{} -> {}", command.name(), dir.display());
    match command {
        Command::GenSynth => gen_synth(&cfg, &dir)?,
        Command::AlignTrain => align(&cfg, &dir)?,
        Command::ZeroShotEval => zero_shot_eval(&cfg, &dir)?,
        Command::FinetuneCls => finetune_cls(&cfg, &dir)?,
        Command::EvalMgr => eval_mgr(&cfg, &dir)?,
        Command::TrainEmotion => train_emotion(&cfg, &dir)?,
        Command::EvalEmotion => eval_emotion(&cfg, &dir)?,
        Command::Ablate => ablate(&cfg, &dir)?,
        Command::ModalityCompare => modality_compare(&cfg, &dir)?,
    }
    artifacts::write_resolved_config(&dir, &cfg)
}

fn checkpoint(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.checkpoint_dir().join(name)
}

fn load_into(store: &mut ParamStore<f32>, path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Data(format!(
            "checkpoint {} not found; run the stage that produces it first",
            path.display()
        )));
    }
    load_checkpoint(store, path)?;
    Ok(())
}

fn prepared(cfg: &RunConfig) -> Result<Prepared> {
    Prepared::new(Corpus::load(&cfg.paths.corpus)?, cfg)
}

fn load_alignment(cfg: &RunConfig, p: &Prepared) -> Result<(ParamStore<f32>, AlignmentModel)> {
    let (mut store, model) =
        init_alignment(&p.corpus, &cfg.align, cfg.data.visual_tokens, cfg.seed)?;
    load_into(&mut store, &checkpoint(cfg, ALIGN_CHECKPOINT))?;
    Ok((store, model))
}

/// Frozen features and classifier logits for every clip.
fn recognition(cfg: &RunConfig, p: &Prepared) -> Result<(Vec<f32>, Vec<f32>)> {
    let (astore, amodel) = load_alignment(cfg, p)?;
    let features = pipeline::visual_features(p, &amodel, &astore)?;
    let mut store = ParamStore::new(cfg.seed);
    let model = MlpClassifier::new(
        &mut store,
        cfg.align.embed_dim,
        cfg.finetune.hidden,
        p.num_classes(),
    )?;
    load_into(&mut store, &checkpoint(cfg, MGR_CHECKPOINT))?;
    let logits = pipeline::classifier_logits(p, &features, &model, &store)?;
    Ok((features, logits))
}

fn class_names(p: &Prepared) -> Vec<String> {
    p.corpus
        .vocabulary
        .classes
        .iter()
        .map(|c| c.name.clone())
        .collect()
}

fn write_ranking(dir: &Path, p: &Prepared, r: &Ranking) -> Result<()> {
    let c = p.num_classes();
    let lines = r.indices.iter().zip(r.scores.chunks(c)).map(|(&i, row)| {
        MgrPrediction::from_logits(&p.corpus.records[i].clip_id, row, &p.corpus.vocabulary)
            .to_json_line()
    });
    artifacts::write_lines(&dir.join(PREDICTIONS), lines)?;
    artifacts::write_confusion(dir, &r.confusion()?, &class_names(p))
}

fn gen_synth(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let corpus = gen_synthetic(&cfg.synth, cfg.seed)?;
    corpus.save(dir)?;
    info!(
        "wrote {} clips in {} videos",
        corpus.records.len(),
        corpus.videos.len()
    );
    Ok(())
}

fn align(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let p = prepared(cfg)?;
    let out = align_train(
        &p.corpus,
        &p.train,
        &cfg.align,
        cfg.data.visual_tokens,
        cfg.seed,
    )?;
    save_checkpoint(&out.store, &checkpoint(cfg, ALIGN_CHECKPOINT))?;
    artifacts::write_loss_trace(dir, &out.loss_trace)?;
    let mut metrics = vec![
        ("first_epoch_loss", out.epoch_means[0]),
        ("final_epoch_loss", *out.epoch_means.last().unwrap()),
    ];
    if !p.test.is_empty() {
        let r = pipeline::zero_shot(&p, &out.model, &out.store)?;
        metrics.extend([("zero_shot_top1", r.top1), ("zero_shot_top5", r.top5)]);
    }
    artifacts::write_metrics(dir, &metrics)
}

fn confusable_classes(cfg: &RunConfig, num_classes: usize) -> Vec<usize> {
    cfg.synth
        .confusable_pairs
        .iter()
        .flatten()
        .copied()
        .filter(|&c| c < num_classes)
        .collect()
}

fn zero_shot_eval(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let p = prepared(cfg)?;
    let (store, model) = load_alignment(cfg, &p)?;
    let r = pipeline::zero_shot(&p, &model, &store)?;
    let nc = pipeline::nearest_centroid(&p)?;
    let mut metrics = vec![
        ("top1", r.top1),
        ("top5", r.top5),
        ("nearest_centroid_top1", nc.top1),
    ];
    let pairs = confusable_classes(cfg, p.num_classes());
    if r.labels.iter().any(|l| pairs.contains(l)) {
        metrics.push(("confusable_top1", r.top1_within(&pairs)?));
        metrics.push(("nearest_centroid_confusable_top1", nc.top1_within(&pairs)?));
    }
    artifacts::write_metrics(dir, &metrics)?;
    write_ranking(dir, &p, &r)
}

fn finetune_cls(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let p = prepared(cfg)?;
    let (astore, amodel) = load_alignment(cfg, &p)?;
    let features = pipeline::visual_features(&p, &amodel, &astore)?;
    let out = pipeline::train_classifier(&p, &features, cfg)?;
    save_checkpoint(&out.store, &checkpoint(cfg, MGR_CHECKPOINT))?;
    artifacts::write_loss_trace(dir, &out.loss_trace)?;
    let mut metrics = vec![("train_top1", out.train_accuracy)];
    if !p.test.is_empty() {
        let logits = pipeline::classifier_logits(&p, &features, &out.model, &out.store)?;
        let r = pipeline::classifier_ranking(&p, &logits)?;
        metrics.extend([("top1", r.top1), ("top5", r.top5)]);
    }
    artifacts::write_metrics(dir, &metrics)
}

fn eval_mgr(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let p = prepared(cfg)?;
    let (_, logits) = recognition(cfg, &p)?;
    let r = pipeline::classifier_ranking(&p, &logits)?;
    artifacts::write_metrics(dir, &[("top1", r.top1), ("top5", r.top5)])?;
    write_ranking(dir, &p, &r)
}

fn train_emotion(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let p = prepared(cfg)?;
    let (features, logits) = recognition(cfg, &p)?;
    let outputs = pipeline::clip_outputs(&p, &features, &logits);
    let (train, test) =
        pipeline::emotion_sets(&p, &outputs, cfg.emotion.modality, cfg.emotion.max_len)?;
    let out = emotion_train(&train, &test, p.num_classes(), &cfg.emotion, cfg.seed)?;
    save_checkpoint(&out.store, &checkpoint(cfg, EMOTION_CHECKPOINT))?;
    artifacts::write_loss_trace(dir, &out.loss_trace)?;
    let mut metrics = vec![("train_top1", out.train_accuracy)];
    if !test.is_empty() {
        metrics.push(("top1", out.test_accuracy));
    }
    artifacts::write_metrics(dir, &metrics)
}

fn eval_emotion(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let p = prepared(cfg)?;
    let (features, logits) = recognition(cfg, &p)?;
    let outputs = pipeline::clip_outputs(&p, &features, &logits);
    let (train, test) =
        pipeline::emotion_sets(&p, &outputs, cfg.emotion.modality, cfg.emotion.max_len)?;
    if test.is_empty() {
        return Err(Error::Data("the held-out split is empty".into()));
    }
    let mut store = ParamStore::new(cfg.seed);
    let dim = input_dim(cfg.emotion.modality, p.num_classes(), &train);
    let model = EmotionModel::new(&mut store, &cfg.emotion, dim)?;
    load_into(&mut store, &checkpoint(cfg, EMOTION_CHECKPOINT))?;
    let mut lines = Vec::with_capacity(test.len());
    let mut predicted = Vec::with_capacity(test.len());
    let actual: Vec<usize> = test.iter().map(|s| s.emotion_label).collect();
    for seq in &test {
        let (logits, pred) = mgr_core::emotion::classify_emotion(seq, &model, &store)?;
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exp: Vec<f32> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f32 = exp.iter().sum();
        let probs: Vec<f32> = exp.iter().map(|e| e / sum).collect();
        debug_assert_eq!(pred, argmax(&probs));
        lines.push(
            json!({"video_id": seq.video_id, "emotion_id": pred, "probs": probs}).to_string(),
        );
        predicted.push(pred);
    }
    let correct = predicted
        .iter()
        .zip(&actual)
        .filter(|(a, b)| a == b)
        .count();
    artifacts::write_metrics(dir, &[("top1", 100.0 * correct as f64 / test.len() as f64)])?;
    artifacts::write_lines(&dir.join(PREDICTIONS), lines)?;
    let names: Vec<String> = (0..cfg.emotion.num_emotions)
        .map(|e| format!("emotion_{e}"))
        .collect();
    artifacts::write_confusion(
        dir,
        &ConfusionMatrix::new(cfg.emotion.num_emotions, &predicted, &actual)?,
        &names,
    )
}

fn ablate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let p = prepared(cfg)?;
    let rows: Vec<Vec<String>> = pipeline::ablation(&p, cfg)?
        .into_iter()
        .map(|r| vec![r.name.to_string(), r.top1.to_string(), r.top5.to_string()])
        .collect();
    artifacts::write_csv(
        &dir.join(artifacts::METRICS),
        &["setting", "top1", "top5"],
        &rows,
    )
}

fn modality_compare(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let p = prepared(cfg)?;
    let (features, logits) = recognition(cfg, &p)?;
    let outputs = pipeline::clip_outputs(&p, &features, &logits);
    let rows: Vec<Vec<String>> =
        pipeline::modality_comparison(&p, &outputs, &cfg.emotion, cfg.seed)?
            .into_iter()
            .map(|(m, acc)| vec![m.to_string(), acc.to_string()])
            .collect();
    artifacts::write_csv(&dir.join(artifacts::METRICS), &["modality", "top1"], &rows)
}
