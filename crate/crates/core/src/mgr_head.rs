//! Clip-level gesture classifier on frozen aligned visual representations.

use log::debug;
use mgr_autodiff::{AdamW, DiffArray, ParamId, ParamStore, Tape};
use serde::{Deserialize, Serialize};

use crate::dataio::{BatchMode, BatchPlan, LabelVocabulary};
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::nn::{feature_array, FeedForward};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            lr: 1e-3,
            weight_decay: 0.01,
            epochs: 20,
            batch_size: 32,
        }
    }
}

/// `input → hidden → classes` with GELU between.
#[derive(Clone, Debug)]
pub struct MlpClassifier {
    pub input_dim: usize,
    pub num_classes: usize,
    ffn: FeedForward,
}

impl MlpClassifier {
    pub fn new(
        store: &mut ParamStore<f32>,
        input_dim: usize,
        hidden: usize,
        num_classes: usize,
    ) -> Result<Self> {
        Ok(Self {
            input_dim,
            num_classes,
            ffn: FeedForward::new(store, "mgr", input_dim, hidden, num_classes)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.ffn.params()
    }

    /// Logits for `n` feature rows, `n × C` row-major.
    pub fn logits(&self, store: &ParamStore<f32>, features: &[f32], n: usize) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let x = tape.constant(feature_array(n, self.input_dim, features)?);
        let y = self.ffn.forward(&mut tape, store, x)?;
        Ok(tape.values(y).to_vec())
    }
}

/// Clip-level output of the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct MgrPrediction {
    pub clip_id: String,
    pub logits: Vec<f32>,
    pub probs: Vec<f32>,
    pub label_id: usize,
    pub label_name: String,
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    clip_id: &'a str,
    label_id: usize,
    label_name: &'a str,
    probs: &'a [f32],
}

impl MgrPrediction {
    pub fn from_logits(clip_id: &str, logits: &[f32], vocab: &LabelVocabulary) -> Self {
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exp: Vec<f64> = logits.iter().map(|&l| f64::from(l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        let probs = exp.iter().map(|e| (e / sum) as f32).collect();
        let label_id = argmax(logits);
        Self {
            clip_id: clip_id.to_string(),
            logits: logits.to_vec(),
            probs,
            label_id,
            label_name: vocab.name(label_id).to_string(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&PredictionLine {
            clip_id: &self.clip_id,
            label_id: self.label_id,
            label_name: &self.label_name,
            probs: &self.probs,
        })
        .expect("prediction serializes")
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub store: ParamStore<f32>,
    pub model: MlpClassifier,
    pub loss_trace: Vec<(usize, f64)>,
    /// Accuracy on the training rows after the last epoch, in percent.
    pub train_accuracy: f64,
}

/// Trains the classifier with cross-entropy on fixed feature rows.
pub fn finetune(
    features: &[f32],
    labels: &[usize],
    num_classes: usize,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    let n = labels.len();
    if n == 0 || !features.len().is_multiple_of(n) {
        return Err(Error::contract(format!(
            "finetune: {} feature values for {n} labels",
            features.len()
        )));
    }
    let dim = features.len() / n;
    let mut store = ParamStore::new(seed);
    let model = MlpClassifier::new(&mut store, dim, config.hidden, num_classes)?;
    let ids = model.params();
    let opt = AdamW::new(config.lr).with_weight_decay(config.weight_decay);
    let plan = BatchPlan::new(n, config.batch_size, seed, true, BatchMode::Plain)?;
    let mut loss_trace = Vec::new();
    for epoch in 0..config.epochs {
        let mut sum = 0.0;
        let batches = plan.epoch(epoch as u64);
        for batch in &batches {
            let rows: Vec<f32> = batch
                .iter()
                .flat_map(|&i| features[i * dim..(i + 1) * dim].iter().copied())
                .collect();
            let targets: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let x = tape.constant(DiffArray::new(&[batch.len(), dim], rows)?);
            let logits = model.ffn.forward(&mut tape, &store, x)?;
            let loss = tape.cross_entropy(logits, &targets)?;
            let value = f64::from(tape.value(loss).item());
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "classifier loss is {value} at epoch {epoch}"
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
            "finetune epoch {epoch}: mean loss {:.6}",
            sum / batches.len() as f64
        );
    }
    let logits = model.logits(&store, features, n)?;
    let correct = logits
        .chunks(num_classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(FinetuneOutcome {
        store,
        model,
        loss_trace,
        train_accuracy: 100.0 * correct as f64 / n as f64,
    })
}
