//! Run configuration: one JSON document covering every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::AlignConfig;
use crate::dataio::{LabelVocabulary, SynthConfig};
use crate::emotion::EmotionConfig;
use crate::error::{Error, Result};
use crate::mgr_head::FinetuneConfig;
use crate::prompting::PromptMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub out: PathBuf,
    /// Defaults to `<out>/checkpoints`.
    pub checkpoints: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            out: PathBuf::from("out"),
            checkpoints: None,
        }
    }
}

impl Paths {
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoints
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoints"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Visual tokens per clip; the feature width must split evenly.
    pub visual_tokens: usize,
    /// Fraction of videos held out for evaluation.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            visual_tokens: 1,
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Template used by the handcrafted-prompting row.
    pub template: String,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            template: "a_photo_of".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub align: AlignConfig,
    pub finetune: FinetuneConfig,
    pub emotion: EmotionConfig,
    pub ablation: AblationConfig,
}

fn positive_rate(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(
            path,
            format!("must be finite and non-negative, got {v}"),
        ))
    }
}

fn at_least(path: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::config(
            path,
            format!("must be at least {min}, got {v}"),
        ))
    }
}

fn divisible(path: &str, dim: usize, heads: usize) -> Result<()> {
    if heads > 0 && dim.is_multiple_of(heads) {
        Ok(())
    } else {
        Err(Error::config(
            path,
            format!("width {dim} is not divisible by {heads} heads"),
        ))
    }
}

impl RunConfig {
    /// Parses JSON; errors carry the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path == "." {
                    String::from("<root>")
                } else {
                    path
                },
                e.into_inner().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        at_least("data.visual_tokens", self.data.visual_tokens, 1)?;
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::config("data.test_fraction", "must be in [0, 1)"));
        }
        self.synth.validate().map_err(|e| match e {
            Error::Config { path, msg } => Error::config(format!("synth.{path}"), msg),
            other => other,
        })?;

        let a = &self.align;
        at_least("align.embed_dim", a.embed_dim, 1)?;
        divisible("align.heads", a.embed_dim, a.heads)?;
        if !(a.tau > 0.0 && a.tau.is_finite()) {
            return Err(Error::config(
                "align.tau",
                format!("must be positive, got {}", a.tau),
            ));
        }
        if !a.lambda_init.is_finite() {
            return Err(Error::config("align.lambda_init", "must be finite"));
        }
        positive_rate("align.visual_lr", a.visual_lr)?;
        positive_rate("align.text_lr", a.text_lr)?;
        positive_rate("align.prompting_lr", a.prompting_lr)?;
        positive_rate("align.weight_decay", a.weight_decay)?;
        at_least("align.epochs", a.epochs, 1)?;
        at_least("align.batch_size", a.batch_size, 2)?;

        let f = &self.finetune;
        at_least("finetune.hidden", f.hidden, 1)?;
        positive_rate("finetune.lr", f.lr)?;
        positive_rate("finetune.weight_decay", f.weight_decay)?;
        at_least("finetune.epochs", f.epochs, 1)?;
        at_least("finetune.batch_size", f.batch_size, 1)?;

        let e = &self.emotion;
        at_least("emotion.embed_dim", e.embed_dim, 1)?;
        divisible("emotion.heads", e.embed_dim, e.heads)?;
        at_least("emotion.max_len", e.max_len, 1)?;
        at_least("emotion.ffn_hidden", e.ffn_hidden, 1)?;
        at_least("emotion.num_emotions", e.num_emotions, 2)?;
        positive_rate("emotion.lr", e.lr)?;
        positive_rate("emotion.weight_decay", e.weight_decay)?;
        at_least("emotion.epochs", e.epochs, 1)?;
        at_least("emotion.batch_size", e.batch_size, 1)?;

        if self.ablation.template.is_empty() {
            return Err(Error::config("ablation.template", "must name a template"));
        }
        Ok(())
    }

    /// Checks the template references against a loaded vocabulary.
    pub fn check_vocabulary(&self, vocab: &LabelVocabulary) -> Result<()> {
        let known = || vocab.template_ids().join(", ");
        if let PromptMode::Handcrafted(t) = &self.align.prompt {
            if !vocab.has_template(t) {
                return Err(Error::config(
                    "align.prompt",
                    format!("unknown template `{t}`; known: {}", known()),
                ));
            }
        }
        if !vocab.has_template(&self.ablation.template) {
            return Err(Error::config(
                "ablation.template",
                format!(
                    "unknown template `{}`; known: {}",
                    self.ablation.template,
                    known()
                ),
            ));
        }
        if !vocab.has_template(crate::alignment::BASE_TEMPLATE) {
            return Err(Error::Data(format!(
                "vocabulary lacks the `{}` template",
                crate::alignment::BASE_TEMPLATE
            )));
        }
        Ok(())
    }
}
