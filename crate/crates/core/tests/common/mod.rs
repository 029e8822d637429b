#![allow(dead_code)]

use mgr_autodiff::gradcheck::{max_rel_error, numeric_grad};
use mgr_autodiff::{ParamId, ParamStore, Tape, Var};
use mgr_core::dataio::{gen_synthetic, Corpus, SynthConfig};

pub const H: f64 = 1e-5;
/// Composite losses pass through a 1/τ = 20 scaling, so central differences
/// carry ~1e-10 of absolute roundoff; gradients below this magnitude are
/// compared absolutely.
pub const FLOOR: f64 = 1e-5;

/// Worst relative error between reverse-mode and central-difference
/// gradients of `loss` with respect to each parameter in `ids`.
pub fn param_grad_error(
    store: &mut ParamStore<f64>,
    ids: &[ParamId],
    loss: &dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let l = loss(&mut tape, store);
    tape.backward(l).unwrap();
    store.zero_grad();
    store.accumulate_grads(&tape);
    let mut worst: f64 = 0.0;
    for &id in ids {
        let analytic = store
            .get(id)
            .array
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; store.get(id).array.numel()]);
        let x0 = store.get(id).array.values().to_vec();
        let mut probe = store.clone();
        let mut f = |x: &[f64]| {
            probe.get_mut(id).array.values_mut().copy_from_slice(x);
            let mut t = Tape::new();
            let l = loss(&mut t, &probe);
            t.values(l)[0]
        };
        let numeric = numeric_grad(&mut f, &x0, H);
        let err = max_rel_error(&analytic, &numeric, FLOOR);
        assert!(err.is_finite(), "{}: non-finite error", store.get(id).name);
        worst = worst.max(err);
    }
    worst
}

pub fn small_synth() -> SynthConfig {
    SynthConfig {
        num_classes: 6,
        clips_per_class: 40,
        visual_dim: 16,
        text_dim: 16,
        confusable_pairs: vec![[0, 1]],
        ..SynthConfig::default()
    }
}

pub fn small_corpus(seed: u64) -> Corpus {
    gen_synthetic(&small_synth(), seed).unwrap()
}
