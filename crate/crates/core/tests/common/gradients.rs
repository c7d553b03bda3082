//! Central finite-difference oracle and the per-operation gradient cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewrefer::fusion::{
    build_model, view_guided_context, view_scores, AblationFlags, ForwardOutput, FusionBlock,
    ModelConfig, Pooling, PrototypeBank,
};
use viewrefer::numeric::{
    batched_key_padding_bias, key_padding_bias, MultiHeadAttention, ParamGroup, ParamStore, Scope,
    Tape, Tensor, Var,
};
use viewrefer::training::loss;
use viewrefer::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Worst relative error of one (operation, shape) case.
#[derive(Clone, Debug)]
pub struct Case {
    pub op: &'static str,
    pub shape: String,
    pub rel_err: f64,
}

impl Case {
    pub fn passed(&self) -> bool {
        self.rel_err <= TOLERANCE
    }
}

pub type Forward = dyn for<'t> Fn(Scope<'t>, &[Var<'t>]) -> Result<Var<'t>>;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn projected(store: &ParamStore, inputs: &[Tensor], f: &Forward, weights: &Tensor) -> f64 {
    let tape = Tape::new();
    let s = Scope::new(&tape, store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = f(s, &vars).unwrap();
    y.mul(tape.constant(weights.clone()))
        .unwrap()
        .sum()
        .value()
        .item()
}

/// `||a - n|| / max(||a||, ||n||, 1e-5)` with Euclidean norms over one tensor. The floor keeps
/// structurally zero gradients (a key bias under softmax) from dividing rounding noise by zero.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied())
        .max(norm(&mut numeric.iter().copied()))
        .max(1e-5);
    diff / scale
}

/// Compares reverse-mode gradients of `sum(f(inputs) * R)` against central differences, for
/// every input tensor and every parameter the forward pass reaches. `R` is a fixed random
/// tensor of the output's shape, so every output entry contributes.
pub fn gradcheck(store: &mut ParamStore, inputs: &[Tensor], f: &Forward) -> f64 {
    let tape = Tape::new();
    let s = Scope::new(&tape, store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let y = f(s, &vars).unwrap();
    let weights = random(&mut ChaCha8Rng::seed_from_u64(99), &y.shape());
    let l = y.mul(tape.constant(weights.clone())).unwrap().sum();
    let grads = tape.backward(l).unwrap();

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[i])
            .map_or_else(|| vec![0.0; input.len()], |g| g.data().to_vec());
        let mut numeric = Vec::with_capacity(input.len());
        for j in 0..input.len() {
            let mut probe = inputs.to_vec();
            probe[i].data_mut()[j] += STEP;
            let up = projected(store, &probe, f, &weights);
            probe[i].data_mut()[j] -= 2.0 * STEP;
            let down = projected(store, &probe, f, &weights);
            numeric.push((up - down) / (2.0 * STEP));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    // A parameter read several times appears once per read.
    let mut params: Vec<(viewrefer::numeric::ParamId, Tensor)> = Vec::new();
    for (id, g) in grads.params() {
        match params.iter_mut().find(|(p, _)| p == id) {
            Some((_, total)) => {
                for (t, v) in total.data_mut().iter_mut().zip(g.data()) {
                    *t += v;
                }
            }
            None => params.push((*id, g.clone())),
        }
    }
    for (id, analytic) in params {
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..analytic.len() {
            let original = store.get(id).value().data()[j];
            store.get_mut(id).value_mut().data_mut()[j] = original + STEP;
            let up = projected(store, inputs, f, &weights);
            store.get_mut(id).value_mut().data_mut()[j] = original - STEP;
            let down = projected(store, inputs, f, &weights);
            store.get_mut(id).value_mut().data_mut()[j] = original;
            numeric.push((up - down) / (2.0 * STEP));
        }
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    worst
}

fn case(
    op: &'static str,
    shape: String,
    store: &mut ParamStore,
    inputs: &[Tensor],
    f: &Forward,
) -> Case {
    Case {
        op,
        shape,
        rel_err: gradcheck(store, inputs, f),
    }
}

pub fn matmul_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shapes: [(&[usize], &[usize]); 5] = [
        (&[2, 3], &[3, 4]),
        (&[1, 5], &[5, 1]),
        (&[4, 4], &[4, 2]),
        (&[2, 3, 4], &[4, 2]),
        (&[3, 2, 5], &[3, 5, 2]),
    ];
    shapes
        .iter()
        .map(|(a, b)| {
            let inputs = [random(&mut rng, a), random(&mut rng, b)];
            case(
                "matmul",
                format!("{a:?}x{b:?}"),
                &mut ParamStore::new(),
                &inputs,
                &|_, v| v[0].matmul(v[1]),
            )
        })
        .collect()
}

pub fn softmax_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shapes: [(&[usize], usize); 5] = [
        (&[5], 0),
        (&[3, 4], 1),
        (&[3, 4], 0),
        (&[2, 3, 4], 2),
        (&[2, 2, 3, 3], 3),
    ];
    shapes
        .iter()
        .map(|&(shape, axis)| {
            let inputs = [random(&mut rng, shape).map(|x| 3.0 * x)];
            case(
                "softmax",
                format!("{shape:?} axis {axis}"),
                &mut ParamStore::new(),
                &inputs,
                &move |_, v| v[0].softmax(axis),
            )
        })
        .collect()
}

pub fn layer_norm_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shapes: [&[usize]; 5] = [&[4], &[3, 5], &[2, 3, 6], &[1, 8], &[2, 2, 4]];
    shapes
        .iter()
        .map(|&shape| {
            let d = *shape.last().unwrap();
            let inputs = [
                random(&mut rng, shape),
                random(&mut rng, &[d]).map(|x| 1.0 + 0.5 * x),
                random(&mut rng, &[d]),
            ];
            case(
                "layer_norm",
                format!("{shape:?}"),
                &mut ParamStore::new(),
                &inputs,
                &|_, v| v[0].layer_norm(v[1], v[2], 1e-5),
            )
        })
        .collect()
}

pub fn attention_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // (dim, heads, query shape, key shape, masked key)
    type Shape<'a> = (usize, usize, &'a [usize], &'a [usize], Option<usize>);
    let shapes: [Shape; 5] = [
        (4, 1, &[3, 4], &[5, 4], None),
        (8, 2, &[2, 8], &[3, 8], Some(2)),
        (6, 3, &[2, 3, 6], &[2, 4, 6], Some(0)),
        (4, 2, &[1, 4], &[1, 4], None),
        (8, 4, &[4, 8], &[6, 8], Some(5)),
    ];
    shapes
        .iter()
        .map(|&(dim, heads, qs, ks, masked)| {
            let mut store = ParamStore::new();
            let mha =
                MultiHeadAttention::new(&mut store, "mha", dim, heads, ParamGroup::Other, &mut rng)
                    .unwrap();
            let inputs = [
                random(&mut rng, qs),
                random(&mut rng, ks),
                random(&mut rng, ks),
            ];
            let len = ks[ks.len() - 2];
            let bias = masked.map(|j| {
                let mask: Vec<bool> = (0..len).map(|i| i != j).collect();
                if ks.len() == 3 {
                    batched_key_padding_bias(&vec![mask; ks[0]]).unwrap()
                } else {
                    key_padding_bias(&mask)
                }
            });
            case(
                "multi_head_attention",
                format!("d{dim} h{heads} q{qs:?} k{ks:?} masked {masked:?}"),
                &mut store,
                &inputs,
                &move |s, v| mha.forward(s, v[0], v[1], v[2], bias.as_ref()),
            )
        })
        .collect()
}

fn text_mask(m: usize, l: usize) -> Vec<Vec<bool>> {
    (0..m)
        .map(|i| (0..l).map(|j| j < l - i.min(l - 1)).collect())
        .collect()
}

pub fn fusion_block_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // (N, K, D, heads, M, L, feed-forward)
    let shapes = [
        (2, 3, 8, 2, 2, 4, false),
        (1, 2, 4, 1, 1, 3, false),
        (3, 4, 8, 2, 2, 3, true),
        (4, 3, 4, 2, 3, 2, false),
        (2, 5, 6, 3, 1, 4, true),
    ];
    shapes
        .iter()
        .map(|&(n, k, d, heads, m, l, ffn)| {
            let mut store = ParamStore::new();
            let block = FusionBlock::new(&mut store, "block", d, heads, ffn, &mut rng).unwrap();
            let inputs = [random(&mut rng, &[n, k, d]), random(&mut rng, &[m, l, d])];
            let flat: Vec<bool> = text_mask(m, l).concat();
            let bias = batched_key_padding_bias(&[flat]).unwrap();
            case(
                "fusion_block",
                format!("N{n} K{k} D{d} M{m} L{l} ffn {ffn}"),
                &mut store,
                &inputs,
                &move |s, v| block.forward(s, v[0], v[1], &bias, true),
            )
        })
        .collect()
}

fn bank(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    d: usize,
    heads: usize,
    shared: bool,
) -> PrototypeBank {
    PrototypeBank::new(store, n, m, d, heads, 0.1, shared, rng).unwrap()
}

pub fn view_guided_context_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shapes = [
        (1, 1, 4, 1),
        (2, 3, 4, 2),
        (4, 4, 8, 2),
        (3, 2, 6, 3),
        (6, 4, 8, 4),
    ];
    shapes
        .iter()
        .map(|&(n, m, d, heads)| {
            let mut store = ParamStore::new();
            let bank = bank(&mut store, &mut rng, n, m, d, heads, false);
            case(
                "view_guided_context",
                format!("N{n} M{m} D{d}"),
                &mut store,
                &[],
                &move |s, _| view_guided_context(s, &bank, n, m),
            )
        })
        .collect()
}

pub fn view_scores_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shapes = [
        (2, 3, 4, Pooling::Max, false),
        (4, 5, 8, Pooling::Max, false),
        (1, 2, 4, Pooling::Avg, false),
        (3, 4, 6, Pooling::MaxAvg, true),
        (6, 3, 8, Pooling::Max, true),
    ];
    shapes
        .iter()
        .map(|&(n, k, d, pooling, shared)| {
            let mut store = ParamStore::new();
            let bank = bank(&mut store, &mut rng, n, 2, d, 2, shared);
            let inputs = [random(&mut rng, &[n, k, d])];
            case(
                "view_scores",
                format!("N{n} K{k} D{d} {pooling:?} shared {shared}"),
                &mut store,
                &inputs,
                &move |s, v| view_scores(s, v[0], &bank, pooling),
            )
        })
        .collect()
}

pub fn small_config(dim: usize, views: usize, texts: usize) -> ModelConfig {
    ModelConfig {
        dim,
        class_dim: 4,
        text_layers: 1,
        text_heads: 2,
        fusion_blocks: 1,
        fusion_heads: 2,
        views,
        texts,
        flags: AblationFlags::full(),
        ..ModelConfig::default()
    }
}

pub fn predict_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shapes = [(2, 3, 4), (1, 4, 4), (4, 3, 8), (3, 6, 6), (2, 2, 8)];
    shapes
        .iter()
        .map(|&(n, k, d)| {
            let (model, mut store) = build_model(small_config(d, n, 2), 12, 3).unwrap();
            let inputs = [random(&mut rng, &[n, k, d])];
            case(
                "predict",
                format!("N{n} K{k} D{d}"),
                &mut store,
                &inputs,
                &move |s, v| model.predict(s, v[0]),
            )
        })
        .collect()
}

pub fn loss_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // (N, K, M, C)
    let shapes = [
        (2, 3, 2, 4),
        (1, 5, 1, 3),
        (4, 4, 4, 16),
        (3, 8, 2, 6),
        (4, 12, 4, 16),
    ];
    shapes
        .iter()
        .map(|&(n, k, m, c)| {
            let inputs = [
                random(&mut rng, &[k]).map(|x| 2.0 * x),
                random(&mut rng, &[m, c]),
                random(&mut rng, &[n, k, c]),
            ];
            let target = rng.gen_range(0..k);
            let target_class = rng.gen_range(0..c);
            let classes: Vec<usize> = (0..k).map(|_| rng.gen_range(0..c)).collect();
            case(
                "loss",
                format!("N{n} K{k} M{m} C{c}"),
                &mut ParamStore::new(),
                &inputs,
                &move |s, v| {
                    let out = ForwardOutput {
                        aggregated: v[0],
                        per_view_logits: s.constant(Tensor::zeros(vec![n, k])),
                        scores: None,
                        weights: vec![1.0 / n as f64; n],
                        text_logits: v[1],
                        object_logits: v[2],
                        block_scores: Vec::new(),
                    };
                    Ok(loss(&out, target, target_class, &classes, 0.5, 0.5)?.0)
                },
            )
        })
        .collect()
}

/// Every operation of the gradient suite, in reporting order.
pub fn all_cases() -> Vec<Case> {
    [
        matmul_cases,
        softmax_cases,
        layer_norm_cases,
        attention_cases,
        fusion_block_cases,
        view_guided_context_cases,
        view_scores_cases,
        predict_cases,
        loss_cases,
    ]
    .iter()
    .flat_map(|f| f())
    .collect()
}
