//! Visual-text contrastive alignment: similarity, ground truth, KL objective
//! and the training loop.

use log::{debug, info};
use mgr_autodiff::{AdamW, DiffArray, ParamId, ParamStore, Real, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::dataio::{BatchMode, BatchPlan, Corpus, LabelVocabulary};
use crate::encoders::{ProjectionHead, DEFAULT_EMBED_DIM};
use crate::error::{Error, Result};
use crate::prompting::{AdaptivePrompting, PromptMode, DEFAULT_HEADS};

pub const DEFAULT_TAU: f64 = 0.05;
/// Template holding the bare label text.
pub const BASE_TEMPLATE: &str = "label";

/// Argument order of the KL terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(target ‖ prediction)`.
    #[default]
    TargetPred,
    /// `KL(prediction ‖ target)`.
    PredTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub lambda_init: f64,
    pub tau: f64,
    /// L2-normalize both towers before the dot product.
    pub normalize: bool,
    pub kl_direction: KlDirection,
    pub prompt: PromptMode,
    pub visual_lr: f64,
    pub text_lr: f64,
    pub prompting_lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            embed_dim: DEFAULT_EMBED_DIM,
            heads: DEFAULT_HEADS,
            lambda_init: 0.0,
            tau: DEFAULT_TAU,
            normalize: true,
            kl_direction: KlDirection::TargetPred,
            prompt: PromptMode::Adaptive,
            visual_lr: 1e-4,
            text_lr: 1e-5,
            prompting_lr: 1e-5,
            weight_decay: 0.01,
            epochs: 10,
            batch_size: 32,
        }
    }
}

/// `GT[i][j] = 1` iff `labels[i] == labels[j]`, row-major `n × n`.
pub fn build_gt(labels: &[usize]) -> Result<Vec<f64>> {
    if labels.len() < 2 {
        return Err(Error::contract(format!(
            "ground truth needs a batch of at least 2, got {}",
            labels.len()
        )));
    }
    Ok(labels
        .iter()
        .flat_map(|a| labels.iter().map(move |b| if a == b { 1.0 } else { 0.0 }))
        .collect())
}

/// Returns `(S_visual, S_text)` with `S_visual = v̂·t̂ᵀ/τ` and `S_text` its
/// transpose.
pub fn similarity_scores<T: Real>(
    tape: &mut Tape<T>,
    v_hat: Var,
    t_hat: Var,
    tau: f64,
    normalize: bool,
) -> Result<(Var, Var)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config("tau", format!("must be positive, got {tau}")));
    }
    let (v, t) = if normalize {
        (
            tape.l2_normalize_rows(v_hat)?,
            tape.l2_normalize_rows(t_hat)?,
        )
    } else {
        (v_hat, t_hat)
    };
    let tt = tape.transpose(t)?;
    let dots = tape.matmul(v, tt)?;
    let s_visual = tape.scale(dots, 1.0 / tau);
    let s_text = tape.transpose(s_visual)?;
    Ok((s_visual, s_text))
}

/// Half the sum of the row-mean KL terms of both similarity matrices against
/// the row-normalized ground truth.
pub fn alignment_loss<T: Real>(
    tape: &mut Tape<T>,
    s_visual: Var,
    s_text: Var,
    gt: &[f64],
    direction: KlDirection,
) -> Result<Var> {
    let shape = tape.shape(s_visual).to_vec();
    if shape.len() != 2
        || shape[0] != shape[1]
        || tape.shape(s_text) != &shape[..]
        || gt.len() != shape[0] * shape[0]
    {
        return Err(Error::contract(format!(
            "alignment loss: similarity shapes {:?}/{:?} with {} ground-truth entries",
            shape,
            tape.shape(s_text),
            gt.len()
        )));
    }
    let n = shape[0];
    let mut target = Vec::with_capacity(gt.len());
    for row in gt.chunks(n) {
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            return Err(Error::contract("ground-truth row without a positive"));
        }
        target.extend(row.iter().map(|&g| g / sum));
    }
    let target = tape.constant(DiffArray::from_f64(&[n, n], &target)?);
    let mut terms = Vec::with_capacity(2);
    for s in [s_visual, s_text] {
        let pred = tape.row_softmax(s)?;
        terms.push(match direction {
            KlDirection::TargetPred => tape.kl_divergence_rows(target, pred)?,
            KlDirection::PredTarget => tape.kl_divergence_rows(pred, target)?,
        });
    }
    let total = tape.add(terms[0], terms[1])?;
    Ok(tape.scale(total, 0.5))
}

/// Projection heads plus the prompting module, sharing one parameter store.
///
/// Prompting parameters always exist so that checkpoints have one layout for
/// every prompt mode; they only participate when the mode is adaptive.
#[derive(Clone, Debug)]
pub struct AlignmentModel {
    pub visual: ProjectionHead,
    pub text: ProjectionHead,
    pub prompting: AdaptivePrompting,
    pub prompt: PromptMode,
    pub tau: f64,
    pub normalize: bool,
    pub kl_direction: KlDirection,
    pub tokens_per_clip: usize,
}

impl AlignmentModel {
    /// `visual_dim` is the full per-clip feature width, split evenly into
    /// `tokens_per_clip` tokens.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        config: &AlignConfig,
        visual_dim: usize,
        text_dim: usize,
        tokens_per_clip: usize,
    ) -> Result<Self> {
        if tokens_per_clip == 0 || !visual_dim.is_multiple_of(tokens_per_clip) {
            return Err(Error::config(
                "visual_tokens",
                format!("feature width {visual_dim} does not split into {tokens_per_clip} tokens"),
            ));
        }
        let d = config.embed_dim;
        Ok(Self {
            visual: ProjectionHead::new(store, "visual", visual_dim / tokens_per_clip, d)?,
            text: ProjectionHead::new(store, "text", text_dim, d)?,
            prompting: AdaptivePrompting::new(
                store,
                "prompting",
                d,
                config.heads,
                config.lambda_init,
            )?,
            prompt: config.prompt.clone(),
            tau: config.tau,
            normalize: config.normalize,
            kl_direction: config.kl_direction,
            tokens_per_clip,
        })
    }

    pub fn template(&self) -> &str {
        match &self.prompt {
            PromptMode::Handcrafted(t) => t,
            PromptMode::None | PromptMode::Adaptive => BASE_TEMPLATE,
        }
    }

    /// Projects the raw features of `n` clips; returns the per-token
    /// projections (`n·L × D`) and their per-clip mean (`n × D`).
    pub fn encode_visual<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        features: &[f32],
        n: usize,
    ) -> Result<(Var, Var)> {
        let tokens = self
            .visual
            .project_visual(tape, store, features, n * self.tokens_per_clip)?;
        let pooled = if self.tokens_per_clip == 1 {
            tokens
        } else {
            tape.segment_mean(tokens, self.tokens_per_clip)?
        };
        Ok((tokens, pooled))
    }

    /// Projected class text for the configured template, `C × D`.
    pub fn class_text<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        vocab: &LabelVocabulary,
    ) -> Result<Var> {
        self.text.project_text(tape, store, vocab, self.template())
    }

    /// Alignment loss of one batch of clips with the given labels.
    pub fn batch_loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        vocab: &LabelVocabulary,
        features: &[f32],
        labels: &[usize],
    ) -> Result<Var> {
        let gt = build_gt(labels)?;
        let (tokens, v_bar) = self.encode_visual(tape, store, features, labels.len())?;
        let classes = self.class_text(tape, store, vocab)?;
        let t_bar = tape.gather_rows(classes, labels)?;
        let t_hat = if self.prompt.is_adaptive() {
            self.prompting
                .forward(tape, store, t_bar, tokens, self.tokens_per_clip, 1)?
        } else {
            t_bar
        };
        let (sv, st) = similarity_scores(tape, v_bar, t_hat, self.tau, self.normalize)?;
        alignment_loss(tape, sv, st, &gt, self.kl_direction)
    }

    /// Parameter groups updated during alignment.
    pub fn trainable(&self, config: &AlignConfig) -> Vec<(Vec<ParamId>, f64)> {
        let mut groups = vec![
            (self.visual.params(), config.visual_lr),
            (self.text.params(), config.text_lr),
        ];
        if self.prompt.is_adaptive() {
            groups.push((self.prompting.params(), config.prompting_lr));
        }
        groups
    }

    /// Mean projected visual representation of each clip, `n × D` row-major.
    pub fn pooled_visual(
        &self,
        store: &ParamStore<f32>,
        features: &[f32],
        n: usize,
    ) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(n * self.visual.output_dim);
        let width = features.len() / n.max(1);
        for chunk in features.chunks(EVAL_CHUNK * width) {
            let mut tape = Tape::new();
            let (_, pooled) = self.encode_visual(&mut tape, store, chunk, chunk.len() / width)?;
            out.extend_from_slice(tape.values(pooled));
        }
        Ok(out)
    }

    /// Similarity of every clip to every class, `n × C` row-major. With
    /// adaptive prompting the class text is re-conditioned on each clip.
    pub fn class_scores(
        &self,
        store: &ParamStore<f32>,
        vocab: &LabelVocabulary,
        features: &[f32],
        n: usize,
    ) -> Result<Vec<f32>> {
        let c = vocab.len();
        let d = self.visual.output_dim;
        let width = features.len() / n.max(1);
        let mut out = Vec::with_capacity(n * c);
        for chunk in features.chunks(EVAL_CHUNK * width) {
            let m = chunk.len() / width;
            let mut tape = Tape::new();
            let (tokens, v_bar) = self.encode_visual(&mut tape, store, chunk, m)?;
            let classes = self.class_text(&mut tape, store, vocab)?;
            let (v, t, per_clip) = if self.prompt.is_adaptive() {
                let index: Vec<usize> = (0..m).flat_map(|_| 0..c).collect();
                let queries = tape.gather_rows(classes, &index)?;
                let t_hat = self.prompting.forward(
                    &mut tape,
                    store,
                    queries,
                    tokens,
                    self.tokens_per_clip,
                    c,
                )?;
                (v_bar, t_hat, true)
            } else {
                (v_bar, classes, false)
            };
            let (v, t) = if self.normalize {
                (tape.l2_normalize_rows(v)?, tape.l2_normalize_rows(t)?)
            } else {
                (v, t)
            };
            let (vv, tv) = (tape.values(v), tape.values(t));
            let inv_tau = (1.0 / self.tau) as f32;
            for i in 0..m {
                let vi = &vv[i * d..(i + 1) * d];
                for k in 0..c {
                    let row = if per_clip { i * c + k } else { k };
                    let tk = &tv[row * d..(row + 1) * d];
                    out.push(vi.iter().zip(tk).map(|(a, b)| a * b).sum::<f32>() * inv_tau);
                }
            }
        }
        Ok(out)
    }
}

const EVAL_CHUNK: usize = 256;

/// Raw features of the selected records, concatenated row-major.
pub fn gather_features(corpus: &Corpus, indices: &[usize]) -> Vec<f32> {
    indices
        .iter()
        .flat_map(|&i| corpus.records[i].visual_feature.iter().copied())
        .collect()
}

pub fn gather_labels(corpus: &Corpus, indices: &[usize]) -> Vec<usize> {
    indices
        .iter()
        .map(|&i| corpus.records[i].label_id)
        .collect()
}

#[derive(Clone, Debug)]
pub struct AlignOutcome {
    pub store: ParamStore<f32>,
    pub model: AlignmentModel,
    /// `(step, loss)` for every optimizer step.
    pub loss_trace: Vec<(usize, f64)>,
    pub epoch_means: Vec<f64>,
}

/// Builds a fresh model over `corpus`'s feature widths.
pub fn init_alignment(
    corpus: &Corpus,
    config: &AlignConfig,
    tokens_per_clip: usize,
    seed: u64,
) -> Result<(ParamStore<f32>, AlignmentModel)> {
    let mut store = ParamStore::new(seed);
    let model = AlignmentModel::new(
        &mut store,
        config,
        corpus.visual_dim(),
        corpus.vocabulary.text_dim(),
        tokens_per_clip,
    )?;
    Ok((store, model))
}

/// Trains the alignment stage on the records in `train`.
pub fn align_train(
    corpus: &Corpus,
    train: &[usize],
    config: &AlignConfig,
    tokens_per_clip: usize,
    seed: u64,
) -> Result<AlignOutcome> {
    let (store, model) = init_alignment(corpus, config, tokens_per_clip, seed)?;
    continue_alignment(corpus, train, config, store, model, seed)
}

/// Runs the alignment loop from an existing parameter state.
pub fn continue_alignment(
    corpus: &Corpus,
    train: &[usize],
    config: &AlignConfig,
    mut store: ParamStore<f32>,
    model: AlignmentModel,
    seed: u64,
) -> Result<AlignOutcome> {
    let plan = BatchPlan::new(
        train.len(),
        config.batch_size,
        seed,
        true,
        BatchMode::Alignment,
    )?;
    let groups = model.trainable(config);
    let optims: Vec<AdamW> = groups
        .iter()
        .map(|(_, lr)| AdamW::new(*lr).with_weight_decay(config.weight_decay))
        .collect();
    let mut loss_trace = Vec::new();
    let mut epoch_means = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut sum = 0.0;
        let batches = plan.epoch(epoch as u64);
        for batch in &batches {
            let idx: Vec<usize> = batch.iter().map(|&b| train[b]).collect();
            let features = gather_features(corpus, &idx);
            let labels = gather_labels(corpus, &idx);
            let mut tape = Tape::new();
            let loss =
                model.batch_loss(&mut tape, &store, &corpus.vocabulary, &features, &labels)?;
            let value = f64::from(tape.value(loss).item());
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "alignment loss is {value} at epoch {epoch}, step {}",
                    loss_trace.len()
                )));
            }
            tape.backward(loss)?;
            store.zero_grad();
            store.accumulate_grads(&tape);
            for ((ids, _), opt) in groups.iter().zip(&optims) {
                opt.step(&mut store, ids)?;
            }
            loss_trace.push((loss_trace.len(), value));
            sum += value;
        }
        let mean = sum / batches.len() as f64;
        debug!("alignment epoch {epoch}: mean loss {mean:.6}");
        epoch_means.push(mean);
    }
    if let Some(last) = epoch_means.last() {
        info!(
            "alignment finished after {} epochs, mean loss {last:.6}",
            config.epochs
        );
    }
    Ok(AlignOutcome {
        store,
        model,
        loss_trace,
        epoch_means,
    })
}
