use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::fusion::{ModelConfig, ModelInput};
use crate::scenegen::{canonical_view, generate_range, GroundingSample};
use crate::textexp::{ExpandedTextSet, Expander};

use super::config::ExperimentConfig;

/// A sample with its expanded texts and the model input built from them.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub sample: GroundingSample,
    pub texts: Vec<String>,
    pub input: ModelInput,
    pub target_class: usize,
    pub object_classes: Vec<usize>,
    /// Canonical view under the model's active view count, for view-dependent samples.
    pub canonical_view: Option<usize>,
}

impl PreparedSample {
    pub fn target(&self) -> usize {
        self.sample.target_index
    }
}

/// Generated train/test samples with their expansions and the vocabulary of the training texts.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<GroundingSample>,
    pub test: Vec<GroundingSample>,
    pub train_texts: Vec<ExpandedTextSet>,
    pub test_texts: Vec<ExpandedTextSet>,
    pub vocab: Vocabulary,
}

impl Corpus {
    /// Train and test come from disjoint index ranges of one seeded stream.
    pub fn generate(cfg: &ExperimentConfig, expander: &Expander) -> Result<Self> {
        cfg.validate()?;
        let train = generate_range(&cfg.generator, cfg.data_seed, 0, cfg.train_samples)?;
        let test = generate_range(
            &cfg.generator,
            cfg.data_seed,
            cfg.train_samples,
            cfg.test_samples,
        )?;
        Self::from_samples(train, test, cfg.model.texts, expander)
    }

    /// Assembles a corpus from already expanded samples; the vocabulary covers the
    /// training texts.
    pub fn from_parts(
        train: Vec<GroundingSample>,
        test: Vec<GroundingSample>,
        train_texts: Vec<ExpandedTextSet>,
        test_texts: Vec<ExpandedTextSet>,
    ) -> Result<Self> {
        if train.len() != train_texts.len() || test.len() != test_texts.len() {
            return Err(Error::Usage(format!(
                "{} train / {} test samples but {} / {} expansions",
                train.len(),
                test.len(),
                train_texts.len(),
                test_texts.len()
            )));
        }
        let vocab = Vocabulary::build(
            train_texts
                .iter()
                .flat_map(|e| e.texts.iter().map(String::as_str)),
        );
        Ok(Self {
            train,
            test,
            train_texts,
            test_texts,
            vocab,
        })
    }

    pub fn from_samples(
        train: Vec<GroundingSample>,
        test: Vec<GroundingSample>,
        texts: usize,
        expander: &Expander,
    ) -> Result<Self> {
        let expand = |set: &[GroundingSample]| -> Result<Vec<ExpandedTextSet>> {
            set.iter()
                .map(|s| expander.expand(&s.utterance, texts))
                .collect()
        };
        let train_texts = expand(&train)?;
        let test_texts = expand(&test)?;
        Self::from_parts(train, test, train_texts, test_texts)
    }

    pub fn prepare_train(&self, model: &ModelConfig) -> Result<Vec<PreparedSample>> {
        prepare(&self.train, &self.train_texts, &self.vocab, model)
    }

    pub fn prepare_test(&self, model: &ModelConfig) -> Result<Vec<PreparedSample>> {
        prepare(&self.test, &self.test_texts, &self.vocab, model)
    }
}

pub fn prepare(
    samples: &[GroundingSample],
    texts: &[ExpandedTextSet],
    vocab: &Vocabulary,
    model: &ModelConfig,
) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .zip(texts)
        .map(|(s, t)| prepare_one(s, &t.texts, vocab, model))
        .collect()
}

pub fn prepare_one(
    sample: &GroundingSample,
    texts: &[String],
    vocab: &Vocabulary,
    model: &ModelConfig,
) -> Result<PreparedSample> {
    Ok(PreparedSample {
        input: ModelInput::new(sample, texts, vocab, model)?,
        target_class: sample.objects[sample.target_index].class.0,
        object_classes: sample.objects.iter().map(|o| o.class.0).collect(),
        canonical_view: canonical_view(sample, model.active_views()),
        texts: texts.to_vec(),
        sample: sample.clone(),
    })
}
