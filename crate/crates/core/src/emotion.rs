//! Video-level emotion classification over sequences of clip-level outputs.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use log::{debug, warn};
use mgr_autodiff::{AdamW, DiffArray, Init, ParamId, ParamStore, Real, Segment, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::dataio::{BatchMode, BatchPlan, VideoEmotionRecord};
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::nn::{FeedForward, LayerNorm, Linear};

/// Form in which clip-level recognition results enter the emotion model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    VisualRepresentation,
    ProbabilityVector,
    TextualPrediction,
}

impl Modality {
    pub const ALL: [Modality; 3] = [
        Modality::VisualRepresentation,
        Modality::ProbabilityVector,
        Modality::TextualPrediction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::VisualRepresentation => "visual_representation",
            Modality::ProbabilityVector => "probability_vector",
            Modality::TextualPrediction => "textual_prediction",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything the recognition stage produced for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipOutput {
    pub clip_index: usize,
    pub label_id: usize,
    pub probs: Vec<f32>,
    pub visual: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tokens {
    Ids(Vec<usize>),
    /// `len × dim` row-major.
    Vectors {
        dim: usize,
        data: Vec<f32>,
    },
}

impl Tokens {
    pub fn len(&self) -> usize {
        match self {
            Tokens::Ids(ids) => ids.len(),
            Tokens::Vectors { dim, data } => data.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmotionSequence {
    pub video_id: String,
    pub modality: Modality,
    pub tokens: Tokens,
    pub emotion_label: usize,
}

/// Assembles a video's clip outputs in temporal order, keeping at most
/// `max_len` tokens.
pub fn build_sequence(
    video: &VideoEmotionRecord,
    outputs: &HashMap<String, ClipOutput>,
    modality: Modality,
    max_len: usize,
) -> Result<EmotionSequence> {
    if video.clip_ids.is_empty() {
        return Err(Error::Data(format!(
            "video `{}` has no clips",
            video.video_id
        )));
    }
    let mut clips = Vec::with_capacity(video.clip_ids.len());
    for id in &video.clip_ids {
        let out = outputs.get(id).ok_or_else(|| {
            Error::Data(format!(
                "no recognition output for clip `{id}` of video `{}`",
                video.video_id
            ))
        })?;
        clips.push(out);
    }
    clips.sort_by_key(|c| c.clip_index);
    if clips.len() > max_len {
        warn!(
            "video `{}` has {} clips; keeping the first {max_len}",
            video.video_id,
            clips.len()
        );
        clips.truncate(max_len);
    }
    let tokens = match modality {
        Modality::TextualPrediction => Tokens::Ids(clips.iter().map(|c| c.label_id).collect()),
        Modality::ProbabilityVector => Tokens::Vectors {
            dim: clips[0].probs.len(),
            data: clips.iter().flat_map(|c| c.probs.iter().copied()).collect(),
        },
        Modality::VisualRepresentation => Tokens::Vectors {
            dim: clips[0].visual.len(),
            data: clips
                .iter()
                .flat_map(|c| c.visual.iter().copied())
                .collect(),
        },
    };
    Ok(EmotionSequence {
        video_id: video.video_id.clone(),
        modality,
        tokens,
        emotion_label: video.emotion_label,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmotionConfig {
    pub modality: Modality,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Longest token sequence, excluding the class token.
    pub max_len: usize,
    pub ffn_hidden: usize,
    pub positional: bool,
    pub num_emotions: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for EmotionConfig {
    fn default() -> Self {
        Self {
            modality: Modality::TextualPrediction,
            embed_dim: 128,
            depth: 2,
            heads: 4,
            max_len: 64,
            ffn_hidden: 256,
            positional: true,
            num_emotions: 2,
            lr: 1e-5,
            weight_decay: 0.01,
            epochs: 20,
            batch_size: 4,
        }
    }
}

#[derive(Clone, Debug)]
enum Embedding {
    Lookup { table: ParamId, vocab: usize },
    Affine(Linear),
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl Block {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            q: Linear::new(store, &format!("{name}.attn.q"), d, d, true)?,
            k: Linear::new(store, &format!("{name}.attn.k"), d, d, true)?,
            v: Linear::new(store, &format!("{name}.attn.v"), d, d, true)?,
            out: Linear::new(store, &format!("{name}.attn.out"), d, d, true)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, hidden, d)?,
        })
    }

    fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        heads: usize,
        segments: &[Segment],
    ) -> Result<Var> {
        let h = self.ln1.forward(tape, store, x)?;
        let q = self.q.forward(tape, store, h)?;
        let k = self.k.forward(tape, store, h)?;
        let v = self.v.forward(tape, store, h)?;
        let a = tape.attention(q, k, v, heads, segments)?;
        let a = self.out.forward(tape, store, a)?;
        let x = tape.add(x, a)?;
        let h = self.ln2.forward(tape, store, x)?;
        let f = self.ffn.forward(tape, store, h)?;
        Ok(tape.add(x, f)?)
    }
}

/// Sinusoidal position code, `rows × dim`.
pub fn sinusoidal_positions(rows: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; rows * dim];
    for pos in 0..rows {
        for i in 0..dim {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
            let angle = pos as f64 * freq;
            pe[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Class-token transformer encoder with a linear emotion head.
#[derive(Clone, Debug)]
pub struct EmotionModel {
    pub modality: Modality,
    pub embed_dim: usize,
    pub heads: usize,
    pub max_len: usize,
    pub positional: bool,
    pub num_emotions: usize,
    embedding: Embedding,
    class_token: ParamId,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    head: Linear,
}

impl EmotionModel {
    /// `input_dim` is the label count for textual input, else the vector width.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        config: &EmotionConfig,
        input_dim: usize,
    ) -> Result<Self> {
        let d = config.embed_dim;
        if config.heads == 0 || !d.is_multiple_of(config.heads) {
            return Err(Error::config(
                "emotion.heads",
                format!(
                    "embedding width {d} is not divisible by {} heads",
                    config.heads
                ),
            ));
        }
        let embedding = match config.modality {
            Modality::TextualPrediction => Embedding::Lookup {
                table: store.add(
                    "emotion.embed.table",
                    &[input_dim, d],
                    Init::Uniform { fan_in: d },
                )?,
                vocab: input_dim,
            },
            _ => Embedding::Affine(Linear::new(store, "emotion.embed", input_dim, d, true)?),
        };
        let class_token = store.add("emotion.class_token", &[1, d], Init::Uniform { fan_in: d })?;
        let blocks = (0..config.depth)
            .map(|i| Block::new(store, &format!("emotion.block{i}"), d, config.ffn_hidden))
            .collect::<Result<_>>()?;
        Ok(Self {
            modality: config.modality,
            embed_dim: d,
            heads: config.heads,
            max_len: config.max_len,
            positional: config.positional,
            num_emotions: config.num_emotions,
            embedding,
            class_token,
            blocks,
            final_ln: LayerNorm::new(store, "emotion.final_ln", d)?,
            head: Linear::new(store, "emotion.head", d, config.num_emotions, true)?,
        })
    }

    fn embed<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        seqs: &[&EmotionSequence],
    ) -> Result<Var> {
        let x = match &self.embedding {
            Embedding::Lookup { table, vocab } => {
                let mut ids = Vec::new();
                for s in seqs {
                    match &s.tokens {
                        Tokens::Ids(v) => ids.extend_from_slice(v),
                        Tokens::Vectors { .. } => unreachable!("modality checked"),
                    }
                }
                if let Some(&bad) = ids.iter().find(|&&i| i >= *vocab) {
                    return Err(Error::Data(format!(
                        "token id {bad} outside vocabulary of {vocab}"
                    )));
                }
                let t = tape.param(store, *table);
                tape.gather_rows(t, &ids)?
            }
            Embedding::Affine(lin) => {
                let mut data = Vec::new();
                let mut rows = 0;
                for s in seqs {
                    match &s.tokens {
                        Tokens::Vectors { dim, data: d } if *dim == lin.in_dim => {
                            data.extend(d.iter().map(|&x| T::from_f64c(f64::from(x))));
                            rows += d.len() / dim;
                        }
                        _ => {
                            return Err(Error::contract(format!(
                                "sequence `{}` tokens do not have width {}",
                                s.video_id, lin.in_dim
                            )))
                        }
                    }
                }
                let x = tape.constant(DiffArray::new(&[rows, lin.in_dim], data)?);
                lin.forward(tape, store, x)?
            }
        };
        Ok(tape.scale(x, (self.embed_dim as f64).sqrt()))
    }

    /// Final-layer input for a batch of sequences, one class row followed by
    /// the tokens of each sequence, and the row index of every class token.
    pub fn encode<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        seqs: &[&EmotionSequence],
    ) -> Result<(Var, Vec<usize>)> {
        for s in seqs {
            if s.modality != self.modality {
                return Err(Error::contract(format!(
                    "sequence `{}` is {} but the model expects {}",
                    s.video_id, s.modality, self.modality
                )));
            }
            if s.tokens.is_empty() || s.tokens.len() > self.max_len {
                return Err(Error::contract(format!(
                    "sequence `{}` has {} tokens; expected 1..={}",
                    s.video_id,
                    s.tokens.len(),
                    self.max_len
                )));
            }
        }
        let tokens = self.embed(tape, store, seqs)?;
        let cls = tape.param(store, self.class_token);
        let mut parts = Vec::with_capacity(seqs.len() * 2);
        let mut segments = Vec::with_capacity(seqs.len());
        let mut starts = Vec::with_capacity(seqs.len());
        let (mut row, mut tok) = (0, 0);
        for s in seqs {
            let n = s.tokens.len();
            parts.push(cls);
            parts.push(tape.slice_rows(tokens, tok, n)?);
            segments.push(Segment::square(row, n + 1));
            starts.push(row);
            row += n + 1;
            tok += n;
        }
        let mut x = tape.concat_rows(&parts)?;
        if self.positional {
            let d = self.embed_dim;
            let table = sinusoidal_positions(self.max_len + 1, d);
            let mut pe = Vec::with_capacity(row * d);
            for s in seqs {
                pe.extend_from_slice(&table[..(s.tokens.len() + 1) * d]);
            }
            let pe = tape.constant(DiffArray::from_f64(&[row, d], &pe)?);
            x = tape.add(x, pe)?;
        }
        for b in &self.blocks {
            x = b.forward(tape, store, x, self.heads, &segments)?;
        }
        Ok((x, starts))
    }

    /// Emotion logits from the class-token rows of `hidden`.
    pub fn readout<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        hidden: Var,
        starts: &[usize],
    ) -> Result<Var> {
        let cls = tape.gather_rows(hidden, starts)?;
        let h = self.final_ln.forward(tape, store, cls)?;
        self.head.forward(tape, store, h)
    }

    /// `batch × E` logits.
    pub fn logits<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        seqs: &[&EmotionSequence],
    ) -> Result<Var> {
        let (hidden, starts) = self.encode(tape, store, seqs)?;
        self.readout(tape, store, hidden, &starts)
    }
}

/// Logits and predicted emotion of one sequence.
pub fn classify_emotion(
    seq: &EmotionSequence,
    model: &EmotionModel,
    store: &ParamStore<f32>,
) -> Result<(Vec<f32>, usize)> {
    let mut tape = Tape::new();
    let y = model.logits(&mut tape, store, &[seq])?;
    let logits = tape.values(y).to_vec();
    let pred = argmax(&logits);
    Ok((logits, pred))
}

/// Percentage of sequences classified correctly.
pub fn emotion_accuracy(
    model: &EmotionModel,
    store: &ParamStore<f32>,
    seqs: &[EmotionSequence],
) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::Data("no sequences to evaluate".into()));
    }
    let mut correct = 0;
    for chunk in seqs.chunks(64) {
        let refs: Vec<&EmotionSequence> = chunk.iter().collect();
        let mut tape = Tape::new();
        let y = model.logits(&mut tape, store, &refs)?;
        for (row, s) in tape.values(y).chunks(model.num_emotions).zip(chunk) {
            correct += usize::from(argmax(row) == s.emotion_label);
        }
    }
    Ok(100.0 * correct as f64 / seqs.len() as f64)
}

#[derive(Clone, Debug)]
pub struct EmotionOutcome {
    pub store: ParamStore<f32>,
    pub model: EmotionModel,
    pub loss_trace: Vec<(usize, f64)>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

fn check_no_leakage(train: &[EmotionSequence], test: &[EmotionSequence]) -> Result<()> {
    let ids: BTreeSet<&str> = train.iter().map(|s| s.video_id.as_str()).collect();
    if let Some(s) = test.iter().find(|s| ids.contains(s.video_id.as_str())) {
        return Err(Error::config(
            "split",
            format!("video `{}` appears in both train and test", s.video_id),
        ));
    }
    Ok(())
}

/// Input width the model needs for `seqs`.
pub fn input_dim(modality: Modality, num_classes: usize, seqs: &[EmotionSequence]) -> usize {
    match modality {
        Modality::TextualPrediction => num_classes,
        _ => seqs
            .iter()
            .find_map(|s| match &s.tokens {
                Tokens::Vectors { dim, .. } => Some(*dim),
                Tokens::Ids(_) => None,
            })
            .unwrap_or(num_classes),
    }
}

/// Trains on `train` and reports accuracy on both partitions.
pub fn emotion_train(
    train: &[EmotionSequence],
    test: &[EmotionSequence],
    num_classes: usize,
    config: &EmotionConfig,
    seed: u64,
) -> Result<EmotionOutcome> {
    check_no_leakage(train, test)?;
    if let Some(s) = train
        .iter()
        .chain(test)
        .find(|s| s.emotion_label >= config.num_emotions)
    {
        return Err(Error::Data(format!(
            "video `{}` has emotion {} but only {} are configured",
            s.video_id, s.emotion_label, config.num_emotions
        )));
    }
    let mut store = ParamStore::new(seed);
    let model = EmotionModel::new(
        &mut store,
        config,
        input_dim(config.modality, num_classes, train),
    )?;
    let ids: Vec<ParamId> = store.ids().collect();
    let opt = AdamW::new(config.lr).with_weight_decay(config.weight_decay);
    let plan = BatchPlan::new(train.len(), config.batch_size, seed, true, BatchMode::Plain)?;
    let mut loss_trace = Vec::new();
    for epoch in 0..config.epochs {
        let mut sum = 0.0;
        let batches = plan.epoch(epoch as u64);
        for batch in &batches {
            let seqs: Vec<&EmotionSequence> = batch.iter().map(|&i| &train[i]).collect();
            let targets: Vec<usize> = seqs.iter().map(|s| s.emotion_label).collect();
            let mut tape = Tape::new();
            let logits = model.logits(&mut tape, &store, &seqs)?;
            let loss = tape.cross_entropy(logits, &targets)?;
            let value = f64::from(tape.value(loss).item());
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "emotion loss is {value} at epoch {epoch}"
                )));
            }
            tape.backward(loss)?;
            store.zero_grad();
            store.accumulate_grads(&tape);
            opt.step(&mut store, &ids)?;
            loss_trace.push((loss_trace.len(), value));
            sum += value;
        }
        debug!(
            "emotion epoch {epoch}: mean loss {:.6}",
            sum / batches.len() as f64
        );
    }
    let train_accuracy = emotion_accuracy(&model, &store, train)?;
    let test_accuracy = if test.is_empty() {
        f64::NAN
    } else {
        emotion_accuracy(&model, &store, test)?
    };
    Ok(EmotionOutcome {
        store,
        model,
        loss_trace,
        train_accuracy,
        test_accuracy,
    })
}
