//! Visual-conditioned text prompting and the fixed-template baseline.

use std::fmt;
use std::str::FromStr;

use mgr_autodiff::{Error as AdError, Init, ParamId, ParamStore, Real, Segment, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::dataio::LabelVocabulary;
use crate::encoders::ProjectionHead;
use crate::error::{Error, Result};
use crate::nn::{FeedForward, Linear};

pub const DEFAULT_HEADS: usize = 4;

/// How class text representations are formed before alignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PromptMode {
    /// Bare label text, no prompting.
    None,
    /// A fixed template from the vocabulary.
    Handcrafted(String),
    /// Bare label text enhanced by cross-attention over the clip's visual tokens.
    Adaptive,
}

impl PromptMode {
    pub fn is_adaptive(&self) -> bool {
        matches!(self, PromptMode::Adaptive)
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptMode::None => f.write_str("none"),
            PromptMode::Handcrafted(t) => write!(f, "handcrafted:{t}"),
            PromptMode::Adaptive => f.write_str("adaptive"),
        }
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(PromptMode::None),
            "adaptive" => Ok(PromptMode::Adaptive),
            _ => match s.strip_prefix("handcrafted:") {
                Some(t) if !t.is_empty() => Ok(PromptMode::Handcrafted(t.to_string())),
                _ => Err(format!(
                    "invalid prompt mode `{s}`; expected none, adaptive or handcrafted:<template>"
                )),
            },
        }
    }
}

impl TryFrom<String> for PromptMode {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<PromptMode> for String {
    fn from(m: PromptMode) -> String {
        m.to_string()
    }
}

/// Cross-attention from text rows to their own clip's visual tokens, gated by
/// a learnable scalar that starts at zero.
#[derive(Clone, Debug)]
pub struct AdaptivePrompting {
    pub dim: usize,
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub lambda: ParamId,
    pub post: FeedForward,
}

impl AdaptivePrompting {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        lambda_init: f64,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config(
                "heads",
                format!("embedding width {dim} is not divisible by {heads} heads"),
            ));
        }
        Ok(Self {
            dim,
            heads,
            wq: Linear::new(store, &format!("{name}.wq"), dim, dim, false)?,
            wk: Linear::new(store, &format!("{name}.wk"), dim, dim, false)?,
            wv: Linear::new(store, &format!("{name}.wv"), dim, dim, false)?,
            lambda: store.add(&format!("{name}.lambda"), &[1], Init::Constant(lambda_init))?,
            post: FeedForward::new(store, &format!("{name}.fnn"), dim, dim, dim)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.wq.weight, self.wk.weight, self.wv.weight, self.lambda];
        p.extend(self.post.params());
        p
    }

    /// Enhances `t_bar` (`n·queries_per_clip × D`) with `tokens`
    /// (`n·tokens_per_clip × D`). Query rows `i·Q..(i+1)·Q` attend only to the
    /// tokens of clip `i`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        t_bar: Var,
        tokens: Var,
        tokens_per_clip: usize,
        queries_per_clip: usize,
    ) -> Result<Var> {
        let (ts, vs) = (tape.shape(t_bar).to_vec(), tape.shape(tokens).to_vec());
        let shape_err = || -> Error {
            AdError::Shape {
                op: "adaptive prompting",
                left: ts.clone(),
                right: vs.clone(),
            }
            .into()
        };
        if ts.len() != 2 || vs.len() != 2 || ts[1] != self.dim || vs[1] != self.dim {
            return Err(shape_err());
        }
        if tokens_per_clip == 0 || queries_per_clip == 0 || vs[0] % tokens_per_clip != 0 {
            return Err(shape_err());
        }
        let n = vs[0] / tokens_per_clip;
        if ts[0] != n * queries_per_clip {
            return Err(shape_err());
        }
        let segments: Vec<Segment> = (0..n)
            .map(|i| Segment {
                q_start: i * queries_per_clip,
                q_len: queries_per_clip,
                k_start: i * tokens_per_clip,
                k_len: tokens_per_clip,
            })
            .collect();
        let q = self.wq.forward(tape, store, t_bar)?;
        let k = self.wk.forward(tape, store, tokens)?;
        let v = self.wv.forward(tape, store, tokens)?;
        let attended = tape.attention(q, k, v, self.heads, &segments)?;
        let att = tape.add(t_bar, attended)?;
        let f = self.post.forward(tape, store, att)?;
        let inner = tape.add(att, f)?;
        let lambda = tape.param(store, self.lambda);
        let gated = tape.scale_by(lambda, inner)?;
        Ok(tape.add(t_bar, gated)?)
    }
}

/// Projected class text for one fixed template, with no visual conditioning.
pub fn handcrafted_prompt<T: Real>(
    text_head: &ProjectionHead,
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    vocab: &LabelVocabulary,
    template_id: &str,
) -> Result<Var> {
    text_head.project_text(tape, store, vocab, template_id)
}
