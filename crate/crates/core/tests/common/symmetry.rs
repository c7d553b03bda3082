//! Equivariance and invariance checks shared by the property tests and the acceptance run.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use viewrefer::encoders::Vocabulary;
use viewrefer::fusion::{
    aggregate, argmax, build_model, inject_context, view_guided_context, view_scores,
    AblationFlags, ContextMode, FusionBlock, ModelInput, Pooling,
};
use viewrefer::numeric::{batched_key_padding_bias, ParamStore, Scope, Tape, Tensor};
use viewrefer::scenegen::{generate_dataset, rotate_views, GenConfig, GroundingSample};

use super::gradients::{random, small_config};
use super::{exact, within, Check};

pub const TOLERANCE: f64 = 1e-9;

/// Reorders axis `axis` of `t` so that output slice `i` is input slice `perm[i]`.
pub fn permute_axis(t: &Tensor, axis: usize, perm: &[usize]) -> Tensor {
    let shape = t.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = Vec::with_capacity(t.len());
    for o in 0..outer {
        for &p in perm {
            let start = (o * n + p) * inner;
            out.extend_from_slice(&t.data()[start..start + inner]);
        }
    }
    Tensor::new(shape.to_vec(), out).unwrap()
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.max_abs_diff(b)
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    while n > 1 && p.iter().enumerate().all(|(i, &v)| i == v) {
        p.shuffle(rng);
    }
    p
}

fn samples(count: usize, seed: u64) -> Vec<GroundingSample> {
    let config = GenConfig {
        samples: count,
        ..GenConfig::default()
    };
    generate_dataset(&config, seed).unwrap()
}

fn vocab_for(samples: &[GroundingSample]) -> Vocabulary {
    Vocabulary::build(samples.iter().map(|s| s.utterance.as_str()))
}

/// Permuting the view axis of `F_v` permutes the fusion block's output the same way.
pub fn fusion_view_equivariance(trials: usize) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    (0..trials)
        .map(|t| {
            let (n, k, d, m, l) = (2 + t % 4, 3 + t % 3, 8, 2, 4);
            let mut store = ParamStore::new();
            let block = FusionBlock::new(&mut store, "b", d, 2, t % 2 == 0, &mut rng).unwrap();
            let f_v = random(&mut rng, &[n, k, d]);
            let f_t = random(&mut rng, &[m, l, d]);
            let bias = batched_key_padding_bias(&[vec![
                true, true, true, false, true, true, false, false,
            ]])
            .unwrap();
            let perm = shuffled(n, &mut rng);
            let run = |x: &Tensor| {
                let tape = Tape::new();
                let s = Scope::new(&tape, &store);
                let out = block
                    .forward(
                        s,
                        tape.constant(x.clone()),
                        tape.constant(f_t.clone()),
                        &bias,
                        true,
                    )
                    .unwrap();
                out.value().as_ref().clone()
            };
            let expected = permute_axis(&run(&f_v), 0, &perm);
            let got = run(&permute_axis(&f_v, 0, &perm));
            within(
                "fusion block view-permutation equivariance",
                max_diff(&expected, &got),
                TOLERANCE,
            )
        })
        .collect()
}

/// Full model: permuting the input views together with the prototype rows permutes the
/// per-view logits and the view scores, and leaves the aggregated logits unchanged.
pub fn model_view_equivariance(trials: usize) -> Vec<Check> {
    let data = samples(trials, 22);
    let vocab = vocab_for(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    data.iter()
        .enumerate()
        .map(|(i, sample)| {
            let config = small_config(8, 4, 1);
            let (model, store) = build_model(config.clone(), vocab.len(), i as u64).unwrap();
            let input = ModelInput::new(
                sample,
                std::slice::from_ref(&sample.utterance),
                &vocab,
                &config,
            )
            .unwrap();
            let perm = shuffled(4, &mut rng);
            let mut permuted_input = input.clone();
            permuted_input.scene.views =
                perm.iter().map(|&p| input.scene.views[p].clone()).collect();
            let mut permuted_store = store.clone();
            let proto = permute_axis(store.get(model.bank.proto).value(), 0, &perm);
            *permuted_store.get_mut(model.bank.proto).value_mut() = proto;

            let run = |store: &ParamStore, input: &ModelInput| {
                let tape = Tape::new();
                let out = model
                    .forward(Scope::new(&tape, store), input, false)
                    .unwrap();
                (
                    out.per_view_logits.value().as_ref().clone(),
                    out.scores.unwrap().value().as_ref().clone(),
                    out.aggregated.value().as_ref().clone(),
                )
            };
            let (logits, scores, agg) = run(&store, &input);
            let (p_logits, p_scores, p_agg) = run(&permuted_store, &permuted_input);
            let deviation = max_diff(&permute_axis(&logits, 0, &perm), &p_logits)
                .max(max_diff(&permute_axis(&scores, 0, &perm), &p_scores))
                .max(max_diff(&agg, &p_agg));
            within("model view-permutation equivariance", deviation, TOLERANCE)
        })
        .collect()
}

/// Permuting a scene's objects permutes the encoded object features and the intra-view
/// attention output along the object axis.
pub fn object_equivariance(trials: usize) -> Vec<Check> {
    let data = samples(trials, 23);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut checks = Vec::new();
    for (i, sample) in data.iter().enumerate() {
        let config = small_config(8, 4, 1);
        let (model, store) = build_model(config, 8, i as u64).unwrap();
        let perm = shuffled(sample.objects.len(), &mut rng);
        let mut permuted = sample.clone();
        permuted.objects = perm.iter().map(|&p| sample.objects[p].clone()).collect();
        let encode = |s: &GroundingSample| {
            let tape = Tape::new();
            let scene = rotate_views(s, 4).unwrap();
            model
                .objects
                .encode(Scope::new(&tape, &store), &scene)
                .unwrap()
                .value()
                .as_ref()
                .clone()
        };
        let base = encode(sample);
        let expected = permute_axis(&base, 1, &perm);
        checks.push(within(
            "object encoder object-permutation equivariance",
            max_diff(&expected, &encode(&permuted)),
            TOLERANCE,
        ));

        let block = &model.blocks[0];
        let intra = |x: &Tensor| {
            let tape = Tape::new();
            let s = Scope::new(&tape, &store);
            let v = tape.constant(x.clone());
            block
                .intra
                .forward(s, v, v, v, None)
                .unwrap()
                .value()
                .as_ref()
                .clone()
        };
        checks.push(within(
            "intra-view attention object-permutation equivariance",
            max_diff(&permute_axis(&intra(&base), 1, &perm), &intra(&expected)),
            TOLERANCE,
        ));
    }
    checks
}

/// View scores are cosine similarities: positive rescaling of the fused features leaves
/// them unchanged once the feature projection has no offset.
pub fn cosine_scale_invariance(trials: usize) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    (0..trials)
        .map(|t| {
            let (n, k, d) = (1 + t % 6, 2 + t % 5, 8);
            let config = small_config(d, n, 1);
            let (model, mut store) = build_model(config, 8, t as u64).unwrap();
            let bias = model.bank.proj_f.as_ref().unwrap().bias;
            *store.get_mut(bias).value_mut() = Tensor::zeros(vec![d]);
            let pooling = [Pooling::Max, Pooling::Avg, Pooling::MaxAvg][t % 3];
            let f_vt = random(&mut rng, &[n, k, d]);
            let scores = |x: Tensor| {
                let tape = Tape::new();
                view_scores(
                    Scope::new(&tape, &store),
                    tape.constant(x),
                    &model.bank,
                    pooling,
                )
                .unwrap()
                .value()
                .as_ref()
                .clone()
            };
            let base = scores(f_vt.clone());
            let scaled = scores(f_vt.map(|x| 10.0 * x));
            within(
                "cosine scale invariance of view scores",
                max_diff(&base, &scaled),
                1e-12,
            )
        })
        .collect()
}

/// Adding a constant to every view score changes neither the aggregation weights nor the
/// predicted object.
pub fn aggregation_shift_invariance(trials: usize) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let store = ParamStore::new();
    (0..trials)
        .map(|t| {
            let (n, k) = (1 + t % 6, 3 + t % 7);
            let logits = random(&mut rng, &[n, k]).map(|x| 4.0 * x);
            let scores = random(&mut rng, &[n]);
            let shift = 5.0 * (t as f64 - trials as f64 / 2.0);
            let run = |sc: Tensor| {
                let tape = Tape::new();
                let s = Scope::new(&tape, &store);
                let (out, w) = aggregate(
                    s,
                    tape.constant(logits.clone()),
                    Some(tape.constant(sc)),
                    1.0,
                    false,
                )
                .unwrap();
                (argmax(out.value().data()), w)
            };
            let (a, wa) = run(scores.clone());
            let (b, wb) = run(scores.map(|x| x + shift));
            let dev = wa
                .iter()
                .zip(&wb)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            Check {
                property: "aggregation argmax shift invariance",
                passed: a == b && dev <= TOLERANCE,
                detail: format!("argmax {a} vs {b}, weight deviation {dev:.3e}"),
            }
        })
        .collect()
}

/// With a zero balance factor the context injection is the identity, and the full model
/// matches the same model without view-guided context bit for bit.
pub fn alpha_zero_identity(trials: usize) -> Vec<Check> {
    let data = samples(trials, 26);
    let vocab = vocab_for(&data);
    let mut checks = Vec::new();
    for (i, sample) in data.iter().enumerate() {
        let mut config = small_config(8, 4, 1);
        config.alpha = 0.0;
        let (model, store) = build_model(config.clone(), vocab.len(), i as u64).unwrap();
        let input = ModelInput::new(
            sample,
            std::slice::from_ref(&sample.utterance),
            &vocab,
            &config,
        )
        .unwrap();

        let tape = Tape::new();
        let s = Scope::new(&tape, &store);
        let f_t = model.text.encode(s, &input.texts).unwrap();
        let f_q = view_guided_context(s, &model.bank, 4, 1).unwrap();
        let mode = if i % 2 == 0 {
            ContextMode::Global
        } else {
            ContextMode::Each
        };
        let injected = inject_context(
            s,
            f_t,
            f_q,
            s.param(model.bank.alpha),
            &input.texts.masks,
            mode,
        )
        .unwrap();
        checks.push(exact(
            "alpha = 0 context injection is the identity",
            injected.value().data() == f_t.value().data(),
        ));

        let mut without = model.clone();
        without.config.flags = AblationFlags {
            vg_context: false,
            ..AblationFlags::full()
        };
        let run = |m: &viewrefer::fusion::ViewRefer| {
            let tape = Tape::new();
            let out = m.forward(Scope::new(&tape, &store), &input, false).unwrap();
            out.aggregated.value().data().to_vec()
        };
        checks.push(exact(
            "alpha = 0 model equals the model without view-guided context",
            run(&model) == run(&without),
        ));
    }
    checks
}

/// The whole equivariance and invariance suite.
pub fn all_checks() -> Vec<Check> {
    let mut out = fusion_view_equivariance(8);
    out.extend(model_view_equivariance(6));
    out.extend(object_equivariance(6));
    out.extend(cosine_scale_invariance(12));
    out.extend(aggregation_shift_invariance(12));
    out.extend(alpha_zero_identity(6));
    out
}
