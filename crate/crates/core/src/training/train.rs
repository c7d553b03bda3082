use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ModelInput, ViewRefer};
use crate::numeric::{ParamGroup, ParamStore, Scope, Tape, Tensor};
use crate::scenegen::scene::{rotate2, rotate_point};
use crate::scenegen::{rotate_views, GroundingSample};

use super::config::{AugmentConfig, TrainConfig};
use super::data::PreparedSample;
use super::eval::{evaluate, EvalReport};
use super::loss::{loss, LossBreakdown};
use super::optim::AdamW;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr_scale: f64,
    /// Mean training loss terms over the epoch.
    pub train: LossBreakdown,
    pub eval: Option<EvalReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

/// Column order of [`History::to_csv`].
pub const HISTORY_HEADER: &str =
    "epoch,overall,easy,hard,view_dep,view_indep,l_ref,l_text,l_3d,total,lr_scale";

impl History {
    /// One row per epoch; accuracy columns are empty when the epoch was not evaluated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let acc = match &r.eval {
                Some(e) => e.accuracies().map(|a| a.to_string()).join(","),
                None => ",,,,".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                acc,
                r.train.l_ref,
                r.train.l_text,
                r.train.l_3d,
                r.train.total,
                r.lr_scale
            ));
        }
        out
    }
}

fn augmented_input(
    base: &PreparedSample,
    aug: &AugmentConfig,
    views: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<ModelInput>> {
    if aug.rotation_step_degrees <= 0.0 && aug.jitter <= 0.0 {
        return Ok(None);
    }
    let angle = if aug.rotation_step_degrees <= 0.0 {
        0.0
    } else if aug.rotation_step_degrees < 1.0 {
        rng.gen_range(0.0..2.0 * PI)
    } else {
        let steps = (360.0 / aug.rotation_step_degrees).floor().max(1.0) as usize;
        rng.gen_range(0..steps) as f64 * aug.rotation_step_degrees.to_radians()
    };
    let mut sample: GroundingSample = base.sample.clone();
    for o in &mut sample.objects {
        o.center = rotate_point(o.center, angle);
        o.facing = rotate2(o.facing, angle);
        if aug.jitter > 0.0 {
            o.center[0] += rng.gen_range(-aug.jitter..=aug.jitter);
            o.center[1] += rng.gen_range(-aug.jitter..=aug.jitter);
        }
    }
    Ok(Some(ModelInput {
        scene: rotate_views(&sample, views)?,
        texts: base.input.texts.clone(),
    }))
}

/// Mini-batch training with per-sample tapes and gradient accumulation.
///
/// `on_epoch` sees each finished epoch with the parameters it produced.
/// A non-finite loss aborts the run, restores the parameters of the last completed epoch
/// and returns [`Error::Diverged`].
pub fn train(
    model: &ViewRefer,
    store: &mut ParamStore,
    data: &[PreparedSample],
    eval: Option<&[PreparedSample]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ParamStore),
) -> Result<History> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let mut opt = AdamW::new(
        store,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
        cfg.weight_decay,
    );
    let mut history = History::default();
    let views = model.config.active_views();
    let mut last_good: Vec<(String, Tensor)> = store.to_named();

    for epoch in 0..cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let scale = cfg.lr_scale(epoch);
        let mut epoch_loss = LossBreakdown::default();

        for batch in order.chunks(cfg.batch_size) {
            store.zero_grad();
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let sample = &data[i];
                let aug = augmented_input(sample, &cfg.augment, views, &mut rng)?;
                let input = aug.as_ref().unwrap_or(&sample.input);
                let tape = Tape::new();
                let out = model.forward(Scope::new(&tape, store), input, false)?;
                let (total, parts) = loss(
                    &out,
                    sample.target(),
                    sample.target_class,
                    &sample.object_classes,
                    cfg.beta,
                    cfg.gamma,
                )?;
                if !parts.is_finite() {
                    store.load_named(&last_good)?;
                    return Err(Error::Diverged { epoch });
                }
                let grads = tape.backward(total)?;
                store.accumulate(&grads, w);
                epoch_loss.add_scaled(&parts, 1.0 / data.len() as f64);
            }
            opt.step(store, |g| {
                scale
                    * match g {
                        ParamGroup::Fusion => cfg.lr_fusion,
                        ParamGroup::Other => cfg.lr_other,
                    }
            });
        }
        let report = match eval {
            Some(e) => Some(evaluate(model, store, e)?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            lr_scale: scale,
            train: epoch_loss,
            eval: report,
        };
        on_epoch(&record, store);
        history.epochs.push(record);
        last_good = store.to_named();
    }
    Ok(history)
}
