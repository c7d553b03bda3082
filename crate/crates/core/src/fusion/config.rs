use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the prototype context reaches the text tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// Only the `[GLO]` token of each text.
    Global,
    /// Every unmasked token.
    Each,
}

impl std::str::FromStr for ContextMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "each" => Ok(Self::Each),
            other => Err(Error::Config(format!(
                "unknown context mode {other:?}; use global or each"
            ))),
        }
    }
}

/// Reduction over the objects of a view before scoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Max,
    Avg,
    MaxAvg,
}

/// Component switches; the ablation lattice is expressed entirely through these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// Fusion transformer between encoders and prediction head.
    pub decoder: bool,
    /// `N` rotated views instead of the input frame only.
    pub multi_view: bool,
    pub inter_view: bool,
    /// `M` expanded texts instead of the original utterance only.
    pub llm_text: bool,
    pub vg_score: bool,
    pub vg_context: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::full()
    }
}

impl AblationFlags {
    pub fn full() -> Self {
        Self {
            decoder: true,
            multi_view: true,
            inter_view: true,
            llm_text: true,
            vg_score: true,
            vg_context: true,
        }
    }

    pub fn none() -> Self {
        Self {
            decoder: false,
            multi_view: false,
            inter_view: false,
            llm_text: false,
            vg_score: false,
            vg_context: false,
        }
    }

    /// The cumulative component rows: nothing, then each switch added in turn.
    pub fn table_rows() -> Vec<(&'static str, AblationFlags)> {
        let mut f = Self::none();
        let mut rows = vec![("no decoder", f)];
        f.decoder = true;
        rows.push(("single-view decoder", f));
        f.multi_view = true;
        rows.push(("+ multi-view input", f));
        f.inter_view = true;
        rows.push(("+ inter-view attention", f));
        f.llm_text = true;
        rows.push(("+ LLM-expanded text", f));
        f.vg_score = true;
        rows.push(("+ view-guided scoring", f));
        f.vg_context = true;
        rows.push(("+ view-guided context", f));
        rows
    }

    pub fn count_on(&self) -> usize {
        [
            self.decoder,
            self.multi_view,
            self.inter_view,
            self.llm_text,
            self.vg_score,
            self.vg_context,
        ]
        .iter()
        .filter(|&&b| b)
        .count()
    }
}

/// Every shape constant and architectural switch of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub class_dim: usize,
    pub max_len: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub fusion_blocks: usize,
    pub fusion_heads: usize,
    /// Feed-forward sublayer after the three attention sublayers of each fusion block.
    pub fusion_ffn: bool,
    pub views: usize,
    pub texts: usize,
    pub alpha: f64,
    pub context_mode: ContextMode,
    pub pooling: Pooling,
    pub score_temperature: f64,
    /// Use cosine scores directly as aggregation weights instead of their softmax.
    pub raw_score_weights: bool,
    /// One projection for both prototypes and pooled features.
    pub shared_projection: bool,
    pub flags: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            class_dim: 16,
            max_len: 24,
            text_layers: 3,
            text_heads: 8,
            fusion_blocks: 4,
            fusion_heads: 8,
            fusion_ffn: false,
            views: 4,
            texts: 4,
            alpha: 0.1,
            context_mode: ContextMode::Global,
            pooling: Pooling::Max,
            score_temperature: 1.0,
            raw_score_weights: false,
            shared_projection: false,
            flags: AblationFlags::full(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.views == 0 || self.texts == 0 {
            return fail("dim, views and texts must be positive".into());
        }
        for (what, heads) in [("text", self.text_heads), ("fusion", self.fusion_heads)] {
            if heads == 0 || !self.dim.is_multiple_of(heads) {
                return fail(format!(
                    "dim {} is not divisible by {heads} {what} heads",
                    self.dim
                ));
            }
        }
        if self.dim < 2 {
            return fail("dim must be at least 2 for the prediction head".into());
        }
        if self.max_len < 2 {
            return fail("max_len must hold [GLO] and one word".into());
        }
        if self.score_temperature.is_nan() || self.score_temperature <= 0.0 {
            return fail("score_temperature must be positive".into());
        }
        if !self.alpha.is_finite() {
            return fail("alpha must be finite".into());
        }
        Ok(())
    }

    /// Views actually used: `N`, or 1 without multi-view input.
    pub fn active_views(&self) -> usize {
        if self.flags.multi_view {
            self.views
        } else {
            1
        }
    }

    /// Texts actually used: `M`, or 1 without expansion.
    pub fn active_texts(&self) -> usize {
        if self.flags.llm_text {
            self.texts
        } else {
            1
        }
    }
}
