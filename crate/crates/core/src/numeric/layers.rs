//! Layer primitives shared by the encoders and the fusion transformer.

use rand_chacha::ChaCha8Rng;

use super::params::{ParamGroup, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Additive score bias for masked attention keys. Finite so fully masked rows stay defined.
pub const MASKED_SCORE: f64 = -1e30;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Tape plus the parameter values a forward pass reads.
#[derive(Clone, Copy)]
pub struct Scope<'t> {
    pub tape: &'t Tape,
    pub store: &'t ParamStore,
}

impl<'t> Scope<'t> {
    pub fn new(tape: &'t Tape, store: &'t ParamStore) -> Self {
        Self { tape, store }
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        self.tape.param(self.store, id)
    }

    pub fn constant(&self, value: Tensor) -> Var<'t> {
        self.tape.constant(value)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        group: ParamGroup,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add_xavier(
            format!("{name}.weight"),
            &[in_dim, out_dim],
            in_dim,
            out_dim,
            group,
            rng,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_dim]), group);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// `x @ W + b` over the last axis of `x`.
    pub fn forward<'t>(&self, s: Scope<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.last() != Some(&self.in_dim) {
            return Err(Error::shape("linear", &shape, &[self.in_dim, self.out_dim]));
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = x.reshape(&[rows, self.in_dim])?;
        let y = flat.matmul(s.param(self.weight))?.add(s.param(self.bias))?;
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = self.out_dim;
        y.reshape(&out_shape)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, group: ParamGroup) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(vec![dim], 1.0), group),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![dim]), group),
        }
    }

    pub fn forward<'t>(&self, s: Scope<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(s.param(self.gain), s.param(self.bias), LAYER_NORM_EPS)
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: (usize, usize, usize),
        group: ParamGroup,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            first: Linear::new(store, &format!("{name}.0"), dims.0, dims.1, group, rng),
            second: Linear::new(store, &format!("{name}.1"), dims.1, dims.2, group, rng),
        }
    }

    pub fn forward<'t>(&self, s: Scope<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.first.forward(s, x)?.relu();
        self.second.forward(s, h)
    }
}

/// Scaled dot-product attention split over `heads`, with input and output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        group: ParamGroup,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "feature dimension {dim} is not divisible by {heads} attention heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, group, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, group, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, group, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, group, rng),
            heads,
            dim,
        })
    }

    /// Attends `q` (`[A, D]` or `[B, A, D]`) over `k`/`v` (`[Bk, D]` or `[B, Bk, D]`).
    ///
    /// `key_bias`, when given, is added to the scores and must broadcast to
    /// `[B, heads, A, Bk]`; use [`MASKED_SCORE`] for keys that must be ignored.
    pub fn forward<'t>(
        &self,
        s: Scope<'t>,
        q: Var<'t>,
        k: Var<'t>,
        v: Var<'t>,
        key_bias: Option<&Tensor>,
    ) -> Result<Var<'t>> {
        Ok(self.forward_with_weights(s, q, k, v, key_bias)?.0)
    }

    /// Same as [`forward`](Self::forward), also returning the `[B, heads, A, Bk]` weights.
    pub fn forward_with_weights<'t>(
        &self,
        s: Scope<'t>,
        q: Var<'t>,
        k: Var<'t>,
        v: Var<'t>,
        key_bias: Option<&Tensor>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let unbatched = q.shape().len() == 2;
        let lift = |x: Var<'t>| -> Result<Var<'t>> {
            let shape = x.shape();
            match shape.len() {
                2 => x.reshape(&[1, shape[0], shape[1]]),
                3 => Ok(x),
                _ => Err(Error::shape("attention", &shape, &[self.dim])),
            }
        };
        let (q, k, v) = (lift(q)?, lift(k)?, lift(v)?);
        let (qs, ks) = (q.shape(), k.shape());
        if qs[2] != self.dim || ks[2] != self.dim || v.shape() != ks || qs[0] != ks[0] {
            return Err(Error::shape("attention", &qs, &ks));
        }
        let (batch, a, bk) = (qs[0], qs[1], ks[1]);
        let dh = self.dim / self.heads;

        let split = |x: Var<'t>, len: usize| -> Result<Var<'t>> {
            Ok(x.reshape(&[batch, len, self.heads, dh])?
                .permute(&[0, 2, 1, 3]))
        };
        let qh = split(self.query.forward(s, q)?, a)?;
        let kh = split(self.key.forward(s, k)?, bk)?;
        let vh = split(self.value.forward(s, v)?, bk)?;

        let mut scores = qh.matmul(kh.transpose())?.scale(1.0 / (dh as f64).sqrt());
        if let Some(bias) = key_bias {
            scores = scores.add(s.constant(bias.clone()))?;
        }
        let weights = scores.softmax(3)?;
        let context = weights
            .matmul(vh)?
            .permute(&[0, 2, 1, 3])
            .reshape(&[batch, a, self.dim])?;
        let mut out = self.output.forward(s, context)?;
        if unbatched {
            out = out.reshape(&[a, self.dim])?;
        }
        Ok((out, weights))
    }
}

/// Score bias `[1, 1, 1, len]` that hides keys whose mask entry is false.
pub fn key_padding_bias(mask: &[bool]) -> Tensor {
    let data = mask
        .iter()
        .map(|&keep| if keep { 0.0 } else { MASKED_SCORE })
        .collect();
    Tensor::from_parts(vec![1, 1, 1, mask.len()], data)
}

/// Score bias `[B, 1, 1, len]` with one padding mask per batch entry.
pub fn batched_key_padding_bias(masks: &[Vec<bool>]) -> Result<Tensor> {
    let len = masks.first().map_or(0, Vec::len);
    if masks.iter().any(|m| m.len() != len) {
        return Err(Error::Usage("padding masks differ in length".into()));
    }
    let data = masks
        .iter()
        .flatten()
        .map(|&keep| if keep { 0.0 } else { MASKED_SCORE })
        .collect();
    Ok(Tensor::from_parts(vec![masks.len(), 1, 1, len], data))
}

/// Sinusoidal position table `[len, dim]`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_parts(vec![len, dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        use rand::Rng;
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = MultiHeadAttention::new(&mut store, "a", 10, 3, ParamGroup::Other, &mut rng);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn single_key_output_ignores_query() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mha =
            MultiHeadAttention::new(&mut store, "a", 8, 2, ParamGroup::Other, &mut rng).unwrap();
        let kv = random(&[1, 8], &mut rng);
        let tape = Tape::new();
        let s = Scope::new(&tape, &store);
        let q1 = s.constant(random(&[3, 8], &mut rng));
        let q2 = s.constant(random(&[3, 8], &mut rng));
        let kv = s.constant(kv);
        let o1 = mha.forward(s, q1, kv, kv, None).unwrap().value();
        let o2 = mha.forward(s, q2, kv, kv, None).unwrap().value();
        assert!(o1.max_abs_diff(&o2) < 1e-12);
        // every row equals the projected value row
        for r in 1..3 {
            for c in 0..8 {
                assert!((o1.get(&[r, c]) - o1.get(&[0, c])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn key_permutation_invariance_and_row_stochastic_weights() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mha =
            MultiHeadAttention::new(&mut store, "a", 8, 2, ParamGroup::Other, &mut rng).unwrap();
        let q = random(&[3, 8], &mut rng);
        let kv = random(&[4, 8], &mut rng);
        let tape = Tape::new();
        let s = Scope::new(&tape, &store);
        let (qv, kvv) = (s.constant(q), s.constant(kv));
        let (out, w) = mha.forward_with_weights(s, qv, kvv, kvv, None).unwrap();
        let perm = kvv.index_select(&[2, 0, 3, 1]);
        let out_p = mha.forward(s, qv, perm, perm, None).unwrap();
        assert!(out.value().max_abs_diff(&out_p.value()) < 1e-12);
        for row in w.value().data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mha =
            MultiHeadAttention::new(&mut store, "a", 4, 1, ParamGroup::Other, &mut rng).unwrap();
        let tape = Tape::new();
        let s = Scope::new(&tape, &store);
        let q = s.constant(random(&[2, 4], &mut rng));
        let kv = s.constant(random(&[3, 4], &mut rng));
        let bias = key_padding_bias(&[true, false, true]);
        let (_, w) = mha.forward_with_weights(s, q, kv, kv, Some(&bias)).unwrap();
        for row in w.value().data().chunks(3) {
            assert_eq!(row[1], 0.0);
        }
    }
}
