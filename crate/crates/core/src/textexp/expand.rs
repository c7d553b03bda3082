use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backend::{
    cache_key, FallbackBackend, GenerationBackend, GenerationRequest, ResponseCache,
};
use super::dictionary::PhraseDictionary;
use super::templates::{build_opposite_template, build_rephrase_template};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Opposite,
    ParaphraseOfOriginal,
    ParaphraseOfOpposite,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Provenance::Original => "original",
            Provenance::Opposite => "opposite",
            Provenance::ParaphraseOfOriginal => "paraphrase_of_original",
            Provenance::ParaphraseOfOpposite => "paraphrase_of_opposite",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandedTextSet {
    pub texts: Vec<String>,
    pub provenance: Vec<Provenance>,
    pub view_dependent: bool,
}

impl ExpandedTextSet {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&q| q == p).count()
    }
}

/// Turns one utterance into `M` texts through a backend, routing every call through the cache.
pub struct Expander {
    pub dictionary: PhraseDictionary,
    pub backend: Box<dyn GenerationBackend>,
    pub cache: ResponseCache,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Expander {
    pub fn new(backend: Box<dyn GenerationBackend>, cache: ResponseCache) -> Self {
        Self {
            dictionary: PhraseDictionary::default(),
            backend,
            cache,
            max_tokens: 64,
            temperature: 0.7,
        }
    }

    /// Offline expander with an in-memory cache.
    pub fn fallback() -> Self {
        Self::new(
            Box::new(FallbackBackend::default()),
            ResponseCache::in_memory(),
        )
    }

    fn call(&self, prompt: String, slot: usize, variant: usize) -> Result<String> {
        let request = GenerationRequest {
            cache_key: cache_key(&prompt, slot, self.backend.id()),
            prompt,
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            variant,
        };
        let response = self
            .cache
            .get_or_generate(&request, self.backend.as_ref())?;
        let text = response.text.trim().trim_matches('"').trim();
        if text.is_empty() {
            return Err(Error::Expansion {
                prompt: request.prompt,
                message: "backend returned empty text".into(),
            });
        }
        Ok(text.to_string())
    }

    pub fn expand(&self, utterance: &str, m: usize) -> Result<ExpandedTextSet> {
        if utterance.trim().is_empty() {
            return Err(Error::Usage("cannot expand an empty utterance".into()));
        }
        let view_dependent = self.dictionary.classify_view_dependence(utterance);
        let mut texts = vec![utterance.to_string()];
        let mut provenance = vec![Provenance::Original];
        if view_dependent {
            if m < 2 || !m.is_multiple_of(2) {
                return Err(Error::Config(format!(
                    "view-dependent expansion needs an even M >= 2 so that (M−2)/2 is a whole number of paraphrases, got M = {m}"
                )));
            }
            let phrases = self.dictionary.opposite_phrases(utterance);
            let opposite = self.call(build_opposite_template(utterance, &phrases)?, 1, 0)?;
            texts.push(opposite.clone());
            provenance.push(Provenance::Opposite);
            let half = (m - 2) / 2;
            for (source, kind, offset) in [
                (utterance, Provenance::ParaphraseOfOriginal, 2),
                (
                    opposite.as_str(),
                    Provenance::ParaphraseOfOpposite,
                    2 + half,
                ),
            ] {
                let prompt = build_rephrase_template(source)?;
                for j in 0..half {
                    texts.push(self.call(prompt.clone(), offset + j, j)?);
                    provenance.push(kind);
                }
            }
        } else {
            if m < 1 {
                return Err(Error::Config(
                    "view-independent expansion needs M >= 1".into(),
                ));
            }
            let prompt = build_rephrase_template(utterance)?;
            for j in 0..m - 1 {
                texts.push(self.call(prompt.clone(), 1 + j, j)?);
                provenance.push(Provenance::ParaphraseOfOriginal);
            }
        }
        Ok(ExpandedTextSet {
            texts,
            provenance,
            view_dependent,
        })
    }
}

pub fn write_expanded(path: &Path, sets: &[ExpandedTextSet]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in sets {
        let line = serde_json::to_string(s).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_expanded(path: &Path) -> Result<Vec<ExpandedTextSet>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
