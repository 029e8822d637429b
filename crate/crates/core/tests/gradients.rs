//! Model-level gradients against central finite differences at 64-bit.

mod common;

use common::param_grad_error;
use mgr_autodiff::{DiffArray, ParamId, ParamStore, Tape};
use mgr_core::alignment::{AlignConfig, AlignmentModel};
use mgr_core::dataio::{LabelVocabulary, Template, VocabClass};
use mgr_core::emotion::{EmotionConfig, EmotionModel, EmotionSequence, Modality, Tokens};
use mgr_core::encoders::ProjectionHead;
use mgr_core::prompting::{AdaptivePrompting, PromptMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const COMPOSITE_TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn weighted_sum(
    tape: &mut Tape<f64>,
    y: mgr_autodiff::Var,
    rng: &mut ChaCha8Rng,
) -> mgr_autodiff::Var {
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(DiffArray::new(&shape, random(rng, shape.iter().product())).unwrap());
    let p = tape.mul(y, w).unwrap();
    tape.sum(p)
}

fn vocab(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> LabelVocabulary {
    LabelVocabulary {
        classes: (0..classes)
            .map(|id| VocabClass {
                id,
                name: format!("g{id}"),
                text_features: ["label", "a_photo_of"]
                    .iter()
                    .map(|t| {
                        (
                            t.to_string(),
                            random(rng, dim).iter().map(|&x| x as f32).collect(),
                        )
                    })
                    .collect(),
            })
            .collect(),
        templates: ["label", "a_photo_of"]
            .iter()
            .map(|t| Template {
                id: t.to_string(),
                text: t.to_string(),
            })
            .collect(),
    }
}

#[test]
fn projection_head_parameters() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new(seed);
        let head = ProjectionHead::new(&mut store, "visual", 5, 4).unwrap();
        let x: Vec<f32> = random(&mut rng, 15).iter().map(|&v| v as f32).collect();
        let wseed = rng.gen();
        let err = param_grad_error(&mut store, &head.params(), &|t, s| {
            let y = head.project_visual(t, s, &x, 3).unwrap();
            weighted_sum(t, y, &mut ChaCha8Rng::seed_from_u64(wseed))
        });
        assert!(err < COMPOSITE_TOL, "instance {seed}: {err:e}");
    }
}

#[test]
fn adaptive_prompting_parameters_with_one_and_four_heads() {
    for heads in [1, 4] {
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new(seed);
            let ap = AdaptivePrompting::new(&mut store, "prompting", 8, heads, 0.7).unwrap();
            let t = DiffArray::new(&[2, 8], random(&mut rng, 16)).unwrap();
            let v = DiffArray::new(&[6, 8], random(&mut rng, 48)).unwrap();
            let wseed = rng.gen();
            let err = param_grad_error(&mut store, &ap.params(), &|tape, s| {
                let tb = tape.constant(t.clone());
                let vb = tape.constant(v.clone());
                let y = ap.forward(tape, s, tb, vb, 3, 1).unwrap();
                weighted_sum(tape, y, &mut ChaCha8Rng::seed_from_u64(wseed))
            });
            assert!(
                err < COMPOSITE_TOL,
                "heads {heads}, instance {seed}: {err:e}"
            );
        }
    }
}

/// Projection, prompting, similarity and the bidirectional KL objective,
/// checked against every upstream parameter.
#[test]
fn alignment_objective_through_every_parameter() {
    for (mode, tokens) in [
        (PromptMode::Adaptive, 2),
        (PromptMode::Adaptive, 1),
        (PromptMode::None, 1),
    ] {
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = AlignConfig {
                embed_dim: 8,
                heads: 2,
                lambda_init: 0.5,
                prompt: mode.clone(),
                ..AlignConfig::default()
            };
            let mut store = ParamStore::<f64>::new(seed);
            let model = AlignmentModel::new(&mut store, &cfg, 6 * tokens, 5, tokens).unwrap();
            let vocab = vocab(&mut rng, 3, 5);
            let labels = [0, 2, 0, 1];
            let feats: Vec<f32> = random(&mut rng, 4 * 6 * tokens)
                .iter()
                .map(|&v| v as f32)
                .collect();
            let ids: Vec<ParamId> = model
                .trainable(&cfg)
                .into_iter()
                .flat_map(|(ids, _)| ids)
                .collect();
            let err = param_grad_error(&mut store, &ids, &|t, s| {
                model.batch_loss(t, s, &vocab, &feats, &labels).unwrap()
            });
            assert!(
                err < COMPOSITE_TOL,
                "{mode} L={tokens}, instance {seed}: {err:e}"
            );
        }
    }
}

fn sequences(rng: &mut ChaCha8Rng, modality: Modality) -> Vec<EmotionSequence> {
    [3usize, 1, 4]
        .iter()
        .enumerate()
        .map(|(i, &n)| EmotionSequence {
            video_id: format!("v{i}"),
            modality,
            tokens: match modality {
                Modality::TextualPrediction => {
                    Tokens::Ids((0..n).map(|_| rng.gen_range(0..5)).collect())
                }
                _ => Tokens::Vectors {
                    dim: 5,
                    data: random(rng, n * 5).iter().map(|&v| v as f32).collect(),
                },
            },
            emotion_label: i % 2,
        })
        .collect()
}

/// Embedding, class token, positional code, attention blocks and the head.
#[test]
fn emotion_model_end_to_end() {
    for modality in [Modality::TextualPrediction, Modality::ProbabilityVector] {
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = EmotionConfig {
                modality,
                embed_dim: 8,
                heads: 2,
                depth: 2,
                ffn_hidden: 12,
                max_len: 6,
                ..EmotionConfig::default()
            };
            let mut store = ParamStore::<f64>::new(seed);
            let model = EmotionModel::new(&mut store, &cfg, 5).unwrap();
            let seqs = sequences(&mut rng, modality);
            let refs: Vec<&EmotionSequence> = seqs.iter().collect();
            let targets: Vec<usize> = seqs.iter().map(|s| s.emotion_label).collect();
            let ids: Vec<ParamId> = store.ids().collect();
            let err = param_grad_error(&mut store, &ids, &|t, s| {
                let logits = model.logits(t, s, &refs).unwrap();
                t.cross_entropy(logits, &targets).unwrap()
            });
            assert!(err < COMPOSITE_TOL, "{modality}, instance {seed}: {err:e}");
        }
    }
}
