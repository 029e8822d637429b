//! Trainable projection heads into the shared embedding space.
//!
//! The backbones are frozen and external; their exported features enter the
//! tape as constants, so only head parameters and downstream modules ever
//! receive gradients.

use mgr_autodiff::{Error as AdError, ParamId, ParamStore, Real, Tape, Var};

use crate::dataio::LabelVocabulary;
use crate::error::Result;
use crate::nn::{feature_array, FeedForward};

pub const DEFAULT_EMBED_DIM: usize = 256;

/// `input_dim → max(input_dim, output_dim) → output_dim`, GELU between.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub input_dim: usize,
    pub output_dim: usize,
    ffn: FeedForward,
}

impl ProjectionHead {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        output_dim: usize,
    ) -> Result<Self> {
        let hidden = input_dim.max(output_dim);
        Ok(Self {
            input_dim,
            output_dim,
            ffn: FeedForward::new(store, name, input_dim, hidden, output_dim)?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let cols = tape.shape(x).get(1).copied();
        if cols != Some(self.input_dim) {
            return Err(AdError::Shape {
                op: "projection head",
                left: tape.shape(x).to_vec(),
                right: vec![self.input_dim, self.output_dim],
            }
            .into());
        }
        self.ffn.forward(tape, store, x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.ffn.params()
    }

    /// Projects `n` raw visual rows of width `input_dim`.
    pub fn project_visual<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        features: &[f32],
        n: usize,
    ) -> Result<Var> {
        if n == 0 || features.len() != n * self.input_dim {
            return Err(AdError::Shape {
                op: "project_visual",
                left: vec![n, features.len() / n.max(1)],
                right: vec![n, self.input_dim],
            }
            .into());
        }
        let x = tape.constant(feature_array(n, self.input_dim, features)?);
        self.forward(tape, store, x)
    }

    /// Projects every class's raw text feature for one template, `C × D`.
    pub fn project_text<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        vocab: &LabelVocabulary,
        template_id: &str,
    ) -> Result<Var> {
        let raw = vocab.text_matrix(template_id)?;
        let x = tape.constant(feature_array(vocab.len(), vocab.text_dim(), &raw)?);
        self.forward(tape, store, x)
    }
}
