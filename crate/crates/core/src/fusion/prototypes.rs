use rand_chacha::ChaCha8Rng;

use super::config::{ContextMode, Pooling};
use crate::error::{Error, Result};
use crate::numeric::{
    concat, Linear, MultiHeadAttention, ParamGroup, ParamId, ParamStore, Scope, Tensor, Var,
};

/// Cosine guard for zero-length projections.
pub const COSINE_EPS: f64 = 1e-8;

/// Learnable view prototypes, text context queries and the scoring projections.
#[derive(Clone, Debug)]
pub struct PrototypeBank {
    /// `Proto [N, D]`.
    pub proto: ParamId,
    /// `Q [M, D]`.
    pub query: ParamId,
    /// Frozen balance factor; stored as a parameter so checkpoints carry it.
    pub alpha: ParamId,
    pub context_attn: MultiHeadAttention,
    pub proj_p: Linear,
    /// `None` when the prototype projection is shared.
    pub proj_f: Option<Linear>,
}

impl PrototypeBank {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        views: usize,
        texts: usize,
        dim: usize,
        heads: usize,
        alpha: f64,
        shared_projection: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let g = ParamGroup::Other;
        let proto = store.add_xavier("bank.proto", &[views, dim], views, dim, g, rng);
        let query = store.add_xavier("bank.query", &[texts, dim], texts, dim, g, rng);
        let alpha = store.add_frozen("bank.alpha", Tensor::scalar(alpha));
        let context_attn = MultiHeadAttention::new(store, "bank.context_attn", dim, heads, g, rng)?;
        let proj_p = Linear::new(store, "bank.proj_p", dim, dim, g, rng);
        let proj_f =
            (!shared_projection).then(|| Linear::new(store, "bank.proj_f", dim, dim, g, rng));
        Ok(Self {
            proto,
            query,
            alpha,
            context_attn,
            proj_p,
            proj_f,
        })
    }

    /// First `n` prototype rows.
    pub fn prototypes<'t>(&self, s: Scope<'t>, n: usize) -> Result<Var<'t>> {
        rows(s.param(self.proto), n, "prototypes")
    }

    pub fn alpha(&self, store: &ParamStore) -> f64 {
        store.get(self.alpha).value().item()
    }
}

fn rows<'t>(x: Var<'t>, n: usize, what: &str) -> Result<Var<'t>> {
    let available = x.shape()[0];
    if n > available {
        return Err(Error::Config(format!(
            "{what}: {n} rows requested, {available} allocated"
        )));
    }
    Ok(if n == available { x } else { x.narrow(0, 0, n) })
}

/// `F_q = Q + Attn(Q, Proto, Proto)`, shape `[M, D]`.
pub fn view_guided_context<'t>(
    s: Scope<'t>,
    bank: &PrototypeBank,
    views: usize,
    texts: usize,
) -> Result<Var<'t>> {
    let q = rows(s.param(bank.query), texts, "context queries")?;
    let proto = bank.prototypes(s, views)?;
    q.add(bank.context_attn.forward(s, q, proto, proto, None)?)
}

/// `F_t' = F_t + alpha * F_q`, added to the `[GLO]` token only or to every unmasked token.
pub fn inject_context<'t>(
    s: Scope<'t>,
    f_t: Var<'t>,
    f_q: Var<'t>,
    alpha: Var<'t>,
    masks: &[Vec<bool>],
    mode: ContextMode,
) -> Result<Var<'t>> {
    let shape = f_t.shape();
    let (m, l, d) = (shape[0], shape[1], shape[2]);
    if f_q.shape() != [m, d] || masks.len() != m || masks.iter().any(|r| r.len() != l) {
        return Err(Error::shape("inject_context", &shape, &f_q.shape()));
    }
    let scaled = f_q.mul(alpha)?.reshape(&[m, 1, d])?;
    let placed = match mode {
        ContextMode::Global => {
            if l == 1 {
                scaled
            } else {
                let zeros = s.constant(Tensor::zeros(vec![m, l - 1, d]));
                concat(&[scaled, zeros], 1)?
            }
        }
        ContextMode::Each => {
            let gate: Vec<f64> = masks
                .iter()
                .flatten()
                .map(|&k| if k { 1.0 } else { 0.0 })
                .collect();
            let gate = s.constant(Tensor::new(vec![m, l, 1], gate)?);
            scaled.mul(gate)?
        }
    };
    f_t.add(placed)
}

/// Pools `[N, K, D]` over objects to `[N, D]`.
pub fn pool_views<'t>(f_vt: Var<'t>, pooling: Pooling) -> Var<'t> {
    let k = f_vt.shape()[1] as f64;
    match pooling {
        Pooling::Max => f_vt.max_axis(1),
        Pooling::Avg => f_vt.sum_axis(1).scale(1.0 / k),
        Pooling::MaxAvg => {
            let avg = f_vt.sum_axis(1).scale(1.0 / k);
            f_vt.max_axis(1).add(avg).expect("same shape")
        }
    }
}

/// Cosine similarity of projected prototypes and projected pooled view features, shape `[N]`.
pub fn view_scores<'t>(
    s: Scope<'t>,
    f_vt: Var<'t>,
    bank: &PrototypeBank,
    pooling: Pooling,
) -> Result<Var<'t>> {
    let shape = f_vt.shape();
    if shape.len() != 3 || shape[1] == 0 {
        return Err(Error::shape("view_scores", &shape, &[0, 1, 0]));
    }
    let n = shape[0];
    let pooled = pool_views(f_vt, pooling);
    let f = bank
        .proj_f
        .as_ref()
        .unwrap_or(&bank.proj_p)
        .forward(s, pooled)?;
    let p = bank.proj_p.forward(s, bank.prototypes(s, n)?)?;
    Ok(p.normalize(COSINE_EPS)
        .mul(f.normalize(COSINE_EPS))?
        .sum_axis(1))
}
