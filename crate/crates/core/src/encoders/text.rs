use rand_chacha::ChaCha8Rng;

use super::vocab::TokenizedText;
use crate::error::{Error, Result};
use crate::numeric::{
    batched_key_padding_bias, sinusoidal_positions, LayerNorm, Mlp, MultiHeadAttention, ParamGroup,
    ParamId, ParamStore, Scope, Tensor, Var,
};

/// `M` tokenized texts of a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct TextBatch {
    pub ids: Vec<Vec<usize>>,
    pub masks: Vec<Vec<bool>>,
}

impl TextBatch {
    pub fn new(texts: &[TokenizedText]) -> Result<Self> {
        let len = texts
            .first()
            .map(|t| t.ids.len())
            .ok_or_else(|| Error::Usage("empty text batch".into()))?;
        if texts.iter().any(|t| t.ids.len() != len) {
            return Err(Error::Usage(
                "texts in a batch must share one padded length".into(),
            ));
        }
        Ok(Self {
            ids: texts.iter().map(|t| t.ids.clone()).collect(),
            masks: texts.iter().map(|t| t.mask.clone()).collect(),
        })
    }

    pub fn texts(&self) -> usize {
        self.ids.len()
    }

    pub fn len(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops trailing columns that are padding in every text. Masked positions never reach
    /// unmasked outputs, so encoder outputs at kept positions are unchanged.
    pub fn cropped(&self) -> Self {
        let keep = (0..self.len())
            .rev()
            .find(|&j| self.masks.iter().any(|m| m[j]))
            .map_or(1, |j| j + 1);
        Self {
            ids: self.ids.iter().map(|r| r[..keep].to_vec()).collect(),
            masks: self.masks.iter().map(|r| r[..keep].to_vec()).collect(),
        }
    }

    /// Keeps the texts at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            masks: indices.iter().map(|&i| self.masks[i].clone()).collect(),
        }
    }
}

/// Pre-norm self-attention block with a position-wise feed-forward sublayer.
#[derive(Clone, Debug)]
pub struct TextBlock {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: Mlp,
}

/// Token embedding plus sinusoidal positions through masked transformer blocks.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub embedding: ParamId,
    pub blocks: Vec<TextBlock>,
    pub final_norm: LayerNorm,
    pub dim: usize,
}

impl TextEncoder {
    pub fn new(
        store: &mut ParamStore,
        vocab_size: usize,
        dim: usize,
        layers: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let g = ParamGroup::Other;
        let embedding = store.add_xavier("text.embedding", &[vocab_size, dim], dim, dim, g, rng);
        let mut blocks = Vec::with_capacity(layers);
        for i in 0..layers {
            let p = format!("text.block{i}");
            blocks.push(TextBlock {
                attn_norm: LayerNorm::new(store, &format!("{p}.attn_norm"), dim, g),
                attn: MultiHeadAttention::new(store, &format!("{p}.attn"), dim, heads, g, rng)?,
                ffn_norm: LayerNorm::new(store, &format!("{p}.ffn_norm"), dim, g),
                ffn: Mlp::new(store, &format!("{p}.ffn"), (dim, 2 * dim, dim), g, rng),
            });
        }
        Ok(Self {
            embedding,
            blocks,
            final_norm: LayerNorm::new(store, "text.final_norm", dim, g),
            dim,
        })
    }

    /// `F_t` of shape `[M, L, D]`.
    pub fn encode<'t>(&self, s: Scope<'t>, batch: &TextBatch) -> Result<Var<'t>> {
        let (m, l) = (batch.texts(), batch.len());
        let flat: Vec<usize> = batch.ids.iter().flatten().copied().collect();
        let vocab = s.store.get(self.embedding).value().shape()[0];
        if let Some(&bad) = flat.iter().find(|&&i| i >= vocab) {
            return Err(Error::Usage(format!(
                "token id {bad} outside a vocabulary of {vocab}"
            )));
        }
        let tokens = s
            .param(self.embedding)
            .index_select(&flat)
            .reshape(&[m, l, self.dim])?;
        let mut x = tokens.add(s.constant(sinusoidal_positions(l, self.dim)))?;
        let bias: Tensor = batched_key_padding_bias(&batch.masks)?;
        for b in &self.blocks {
            let h = b.attn_norm.forward(s, x)?;
            x = x.add(b.attn.forward(s, h, h, h, Some(&bias))?)?;
            let h = b.ffn_norm.forward(s, x)?;
            x = x.add(b.ffn.forward(s, h)?)?;
        }
        self.final_norm.forward(s, x)
    }
}
