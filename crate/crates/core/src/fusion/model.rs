use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::FusionBlock;
use super::config::ModelConfig;
use super::prototypes::{inject_context, view_guided_context, view_scores, PrototypeBank};
use crate::encoders::{tokenize, ClassHeads, ObjectEncoder, TextBatch, TextEncoder, Vocabulary};
use crate::error::{Error, Result};
use crate::numeric::{
    batched_key_padding_bias, LayerNorm, Mlp, ParamGroup, ParamStore, Scope, Tensor, Var,
};
use crate::scenegen::{rotate_views, GroundingSample, MultiViewScene};

/// Everything one forward pass reads about a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub scene: MultiViewScene,
    pub texts: TextBatch,
}

impl ModelInput {
    /// Rotates the scene into the active view count and tokenizes the first active texts.
    /// `texts[0]` must be the original utterance.
    pub fn new(
        sample: &GroundingSample,
        texts: &[String],
        vocab: &Vocabulary,
        config: &ModelConfig,
    ) -> Result<Self> {
        let m = config.active_texts();
        if texts.len() < m {
            return Err(Error::Config(format!(
                "model uses {m} texts per sample but only {} were provided",
                texts.len()
            )));
        }
        let tokenized: Vec<_> = texts[..m]
            .iter()
            .map(|t| tokenize(t, vocab, config.max_len))
            .collect();
        Ok(Self {
            scene: rotate_views(sample, config.active_views())?,
            texts: TextBatch::new(&tokenized)?.cropped(),
        })
    }
}

/// Forward results; tensors stay on the tape so losses can be built from them.
pub struct ForwardOutput<'t> {
    /// `[K]`.
    pub aggregated: Var<'t>,
    /// `[N, K]`.
    pub per_view_logits: Var<'t>,
    /// Cosine scores `[N]` of the final features, when scoring or diagnostics ran.
    pub scores: Option<Var<'t>>,
    /// Aggregation weights `[N]`.
    pub weights: Vec<f64>,
    /// `[M, C]`.
    pub text_logits: Var<'t>,
    /// `[N, K, C]`.
    pub object_logits: Var<'t>,
    /// Per fusion block, the `N` scores of that block's output.
    pub block_scores: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ViewRefer {
    pub config: ModelConfig,
    pub objects: ObjectEncoder,
    pub text: TextEncoder,
    pub heads: ClassHeads,
    pub blocks: Vec<FusionBlock>,
    pub bank: PrototypeBank,
    pub head_norm: LayerNorm,
    pub predictor: Mlp,
}

impl ViewRefer {
    /// Registers every parameter in `store`, initialized from `seed`.
    pub fn new(
        config: ModelConfig,
        vocab_size: usize,
        store: &mut ParamStore,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let objects = ObjectEncoder::new(store, d, config.class_dim, &mut rng);
        let text = TextEncoder::new(
            store,
            vocab_size,
            d,
            config.text_layers,
            config.text_heads,
            &mut rng,
        )?;
        let heads = ClassHeads::new(store, d, &mut rng);
        let blocks = (0..config.fusion_blocks)
            .map(|i| {
                FusionBlock::new(
                    store,
                    &format!("fusion.block{i}"),
                    d,
                    config.fusion_heads,
                    config.fusion_ffn,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let bank = PrototypeBank::new(
            store,
            config.views,
            config.texts,
            d,
            config.fusion_heads,
            config.alpha,
            config.shared_projection,
            &mut rng,
        )?;
        let head_norm = LayerNorm::new(store, "predict.norm", d, ParamGroup::Other);
        let predictor = Mlp::new(
            store,
            "predict.mlp",
            (d, d / 2, 1),
            ParamGroup::Other,
            &mut rng,
        );
        Ok(Self {
            config,
            objects,
            text,
            heads,
            blocks,
            bank,
            head_norm,
            predictor,
        })
    }

    /// Per-view grounding logits `[N, K]` from fused features.
    pub fn predict<'t>(&self, s: Scope<'t>, f_vt: Var<'t>) -> Result<Var<'t>> {
        let shape = f_vt.shape();
        let h = self.head_norm.forward(s, f_vt)?;
        self.predictor.forward(s, h)?.reshape(&shape[..2])
    }

    /// Runs encoders, context injection, fusion blocks, scoring, prediction and aggregation.
    /// With `diagnostics`, every block's output is scored even when scoring is disabled.
    pub fn forward<'t>(
        &self,
        s: Scope<'t>,
        input: &ModelInput,
        diagnostics: bool,
    ) -> Result<ForwardOutput<'t>> {
        let cfg = &self.config;
        let flags = cfg.flags;
        let n = input.scene.view_count();
        let m = input.texts.texts();
        if n != cfg.active_views() || m != cfg.active_texts() {
            return Err(Error::Config(format!(
                "input has {n} views and {m} texts, model expects {} and {}",
                cfg.active_views(),
                cfg.active_texts()
            )));
        }
        let f_v = self.objects.encode(s, &input.scene)?;
        let f_t = self.text.encode(s, &input.texts)?;
        let text_logits = self.heads.text_logits(s, f_t)?;
        let object_logits = self.heads.object_logits(s, f_v)?;

        let f_t = if flags.vg_context {
            let f_q = view_guided_context(s, &self.bank, n, m)?;
            inject_context(
                s,
                f_t,
                f_q,
                s.param(self.bank.alpha),
                &input.texts.masks,
                cfg.context_mode,
            )?
        } else {
            f_t
        };

        let score_blocks = diagnostics || flags.vg_score;
        let mut block_scores = Vec::new();
        let mut x = f_v;
        let mut scores = None;
        if flags.decoder {
            let flat_masks = vec![input
                .texts
                .masks
                .iter()
                .flatten()
                .copied()
                .collect::<Vec<bool>>()];
            let bias = batched_key_padding_bias(&flat_masks)?;
            for block in &self.blocks {
                x = block.forward(s, x, f_t, &bias, flags.inter_view)?;
                if score_blocks {
                    let sc = view_scores(s, x, &self.bank, cfg.pooling)?;
                    block_scores.push(sc.value().data().to_vec());
                    scores = Some(sc);
                }
            }
        }
        if scores.is_none() && score_blocks {
            scores = Some(view_scores(s, x, &self.bank, cfg.pooling)?);
        }

        let per_view_logits = self.predict(s, x)?;
        let used = if flags.vg_score { scores } else { None };
        let (aggregated, weights) = aggregate(
            s,
            per_view_logits,
            used,
            cfg.score_temperature,
            cfg.raw_score_weights,
        )?;
        Ok(ForwardOutput {
            aggregated,
            per_view_logits,
            scores,
            weights,
            text_logits,
            object_logits,
            block_scores,
        })
    }
}

/// `out[k] = sum_n w[n] * logits[n, k]` with `w = softmax(S / temperature)`, raw `S`, or `1/N`.
pub fn aggregate<'t>(
    s: Scope<'t>,
    logits: Var<'t>,
    scores: Option<Var<'t>>,
    temperature: f64,
    raw: bool,
) -> Result<(Var<'t>, Vec<f64>)> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::shape("aggregate", &shape, &[0, 0]));
    }
    let (n, k) = (shape[0], shape[1]);
    let weights = match scores {
        Some(sc) => {
            if sc.shape() != [n] {
                return Err(Error::shape("aggregate", &shape, &sc.shape()));
            }
            if raw {
                sc
            } else {
                sc.scale(1.0 / temperature).softmax(0)?
            }
        }
        None => s.constant(Tensor::full(vec![n], 1.0 / n as f64)),
    };
    let w = weights.value().data().to_vec();
    let out = weights.reshape(&[1, n])?.matmul(logits)?.reshape(&[k])?;
    Ok((out, w))
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fresh store plus model, the usual entry point.
pub fn build_model(
    config: ModelConfig,
    vocab_size: usize,
    seed: u64,
) -> Result<(ViewRefer, ParamStore)> {
    let mut store = ParamStore::new();
    let model = ViewRefer::new(config, vocab_size, &mut store, seed)?;
    Ok((model, store))
}
