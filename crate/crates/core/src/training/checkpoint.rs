//! Checkpoint directories: parameters in the tensor container, plus the experiment
//! config and vocabulary needed to rebuild the model.

use std::fs;
use std::path::Path;

use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::fusion::{build_model, ViewRefer};
use crate::numeric::{checkpoint, ParamStore};

use super::config::ExperimentConfig;

pub const PARAMS_FILE: &str = "params.vrtn";
pub const CONFIG_FILE: &str = "config.toml";
pub const VOCAB_FILE: &str = "vocab.txt";

/// A model restored from disk.
#[derive(Debug)]
pub struct Restored {
    pub config: ExperimentConfig,
    pub vocab: Vocabulary,
    pub model: ViewRefer,
    pub store: ParamStore,
}

pub fn save_checkpoint(
    dir: &Path,
    config: &ExperimentConfig,
    vocab: &Vocabulary,
    store: &ParamStore,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    checkpoint::save(&dir.join(PARAMS_FILE), &store.to_named())?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, config.to_toml()?).map_err(|e| Error::io(&config_path, e))?;
    vocab.save(&dir.join(VOCAB_FILE))
}

pub fn load_checkpoint(dir: &Path) -> Result<Restored> {
    let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let (model, mut store) = build_model(config.model.clone(), vocab.len(), config.train.seed)?;
    store.load_named(&checkpoint::load(&dir.join(PARAMS_FILE))?)?;
    Ok(Restored {
        config,
        vocab,
        model,
        store,
    })
}
