//! Experiment config resolution: defaults < data-directory snapshot < `--config` file < flags.

use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use viewrefer::fusion::AblationFlags;
use viewrefer::training::ExperimentConfig;

/// Flags that override individual config fields.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// TOML experiment config layered over the data directory's snapshot.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training and initialization seed.
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_fusion: Option<f64>,
    #[arg(long)]
    pub lr_other: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub text_layers: Option<usize>,
    #[arg(long)]
    pub fusion_blocks: Option<usize>,
    /// Number of views N.
    #[arg(long)]
    pub views: Option<usize>,
    /// Number of texts M per utterance.
    #[arg(long)]
    pub texts: Option<usize>,
    /// Use the flags of this ablation row (0 = no decoder, 6 = full model).
    #[arg(long)]
    pub row: Option<usize>,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn read_toml(path: &Path) -> Result<toml::Value> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Resolves the experiment config for commands that read a data directory.
pub fn resolve(data_dir: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut value = toml::Value::try_from(ExperimentConfig::default())?;
    if let Some(dir) = data_dir {
        let snapshot = dir.join(crate::commands::CONFIG_FILE);
        if snapshot.exists() {
            merge(&mut value, read_toml(&snapshot)?);
        }
    }
    if let Some(path) = &overrides.config {
        merge(&mut value, read_toml(path)?);
    }
    let mut cfg: ExperimentConfig = value.try_into().context("invalid experiment config")?;
    apply(&mut cfg, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<()> {
    if let Some(v) = o.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = o.train_seed {
        cfg.train.seed = v;
    }
    if let Some(v) = o.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = o.lr_fusion {
        cfg.train.lr_fusion = v;
    }
    if let Some(v) = o.lr_other {
        cfg.train.lr_other = v;
    }
    if let Some(v) = o.dim {
        cfg.model.dim = v;
    }
    if let Some(v) = o.text_layers {
        cfg.model.text_layers = v;
    }
    if let Some(v) = o.fusion_blocks {
        cfg.model.fusion_blocks = v;
    }
    if let Some(v) = o.views {
        cfg.model.views = v;
    }
    if let Some(v) = o.texts {
        cfg.model.texts = v;
    }
    if let Some(row) = o.row {
        let rows = AblationFlags::table_rows();
        let (_, flags) = rows.get(row).ok_or_else(|| {
            viewrefer::Error::Usage(format!("ablation row {row} out of range 0..{}", rows.len()))
        })?;
        cfg.model.flags = *flags;
    }
    Ok(())
}
