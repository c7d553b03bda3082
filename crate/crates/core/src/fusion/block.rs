use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::{
    LayerNorm, Mlp, MultiHeadAttention, ParamGroup, ParamStore, Scope, Tensor, Var,
};

/// Intra-view, cross-modal and inter-view attention, each pre-normed with a residual.
#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub intra_norm: LayerNorm,
    pub intra: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub cross: MultiHeadAttention,
    pub inter_norm: LayerNorm,
    pub inter: MultiHeadAttention,
    pub ffn: Option<(LayerNorm, Mlp)>,
}

impl FusionBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let g = ParamGroup::Fusion;
        let ln = |store: &mut ParamStore, part: &str| {
            LayerNorm::new(store, &format!("{name}.{part}"), dim, g)
        };
        Ok(Self {
            intra_norm: ln(store, "intra_norm"),
            intra: MultiHeadAttention::new(store, &format!("{name}.intra"), dim, heads, g, rng)?,
            cross_norm: ln(store, "cross_norm"),
            cross: MultiHeadAttention::new(store, &format!("{name}.cross"), dim, heads, g, rng)?,
            inter_norm: ln(store, "inter_norm"),
            inter: MultiHeadAttention::new(store, &format!("{name}.inter"), dim, heads, g, rng)?,
            ffn: if ffn {
                Some((
                    ln(store, "ffn_norm"),
                    Mlp::new(store, &format!("{name}.ffn"), (dim, 2 * dim, dim), g, rng),
                ))
            } else {
                None
            },
        })
    }

    /// `F_v [N, K, D]` against text tokens `F_t' [M, L, D]`; `text_bias` is the `[1, 1, 1, M*L]`
    /// padding bias of the flattened tokens.
    pub fn forward<'t>(
        &self,
        s: Scope<'t>,
        f_v: Var<'t>,
        f_t: Var<'t>,
        text_bias: &Tensor,
        inter_view: bool,
    ) -> Result<Var<'t>> {
        let vs = f_v.shape();
        let ts = f_t.shape();
        if vs.len() != 3 || ts.len() != 3 || vs[2] != ts[2] {
            return Err(Error::shape("fusion_block", &vs, &ts));
        }
        let (n, k, d) = (vs[0], vs[1], vs[2]);

        let h = self.intra_norm.forward(s, f_v)?;
        let x = f_v.add(self.intra.forward(s, h, h, h, None)?)?;

        let tokens = f_t.reshape(&[ts[0] * ts[1], d])?;
        let h = self.cross_norm.forward(s, x)?.reshape(&[n * k, d])?;
        let crossed = self.cross.forward(s, h, tokens, tokens, Some(text_bias))?;
        let mut x = x.add(crossed.reshape(&[n, k, d])?)?;

        if inter_view {
            let xt = x.permute(&[1, 0, 2]);
            let h = self.inter_norm.forward(s, xt)?;
            x = xt
                .add(self.inter.forward(s, h, h, h, None)?)?
                .permute(&[1, 0, 2]);
        }
        if let Some((norm, mlp)) = &self.ffn {
            let h = norm.forward(s, x)?;
            x = x.add(mlp.forward(s, h)?)?;
        }
        Ok(x)
    }
}
