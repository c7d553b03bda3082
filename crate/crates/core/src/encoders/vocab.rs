use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scenegen::utterance::words;

pub const GLO: &str = "[GLO]";
pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const GLO_ID: usize = 0;
pub const PAD_ID: usize = 1;
pub const UNK_ID: usize = 2;
const SPECIALS: [&str; 3] = [GLO, PAD, UNK];

/// Token ↔ id map. Ids 0..3 are the specials, the rest follow in sorted order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(rest: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(rest.into_iter().filter(|t| !SPECIALS.contains(&t.as_str())));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    /// Sorted unique words of `texts`, so the mapping depends only on the corpus content.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = texts.into_iter().flat_map(words).collect();
        Self::from_tokens(set)
    }

    /// One token per line; line `i` gets id `3 + i`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut rest = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if !seen.insert(t.to_string()) || SPECIALS.contains(&t) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate token {t:?}"),
                });
            }
            rest.push(t.to_string());
        }
        Ok(Self::from_tokens(rest))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.tokens[SPECIALS.len()..].join("\n");
        out.push('\n');
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }
}

/// Token ids padded to a fixed length, with the mask of real positions.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedText {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    /// Words dropped to fit the length.
    pub truncated: usize,
}

impl TokenizedText {
    /// Number of real tokens, `[GLO]` included.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// `[GLO]` followed by up to `max_len - 1` words, then `[PAD]` up to `max_len`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenizedText {
    assert!(max_len >= 2, "sequence length must hold [GLO] and one word");
    let w = words(text);
    let keep = w.len().min(max_len - 1);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(GLO_ID);
    ids.extend(w[..keep].iter().map(|t| vocab.id(t)));
    let mut mask = vec![true; ids.len()];
    ids.resize(max_len, PAD_ID);
    mask.resize(max_len, false);
    TokenizedText {
        ids,
        mask,
        truncated: w.len() - keep,
    }
}
