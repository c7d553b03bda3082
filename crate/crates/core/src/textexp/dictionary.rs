//! View-related phrase dictionary and the single-pass opposite-perspective rewriter.

use crate::error::{Error, Result};

/// Ordered (phrase, opposite) pairs.
///
/// Lookups are symmetric: the opposite of a second element is the first element of the
/// first pair that lists it, so `with back to` maps back to `facing`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhraseDictionary {
    pairs: Vec<(String, String)>,
    /// Every phrase from either side, longest first.
    keys: Vec<String>,
}

/// The shipped pairs, one `phrase => opposite` per line.
pub const DEFAULT_DICTIONARY: &str = "\
facing => with back to
looking at => with back to
left => right
in front of => behind
";

impl Default for PhraseDictionary {
    fn default() -> Self {
        Self::parse(DEFAULT_DICTIONARY).expect("built-in dictionary is valid")
    }
}

/// One dictionary match inside a text.
#[derive(Clone, Debug, PartialEq)]
pub struct PhraseMatch {
    pub start: usize,
    pub end: usize,
    /// Canonical lowercase phrase that matched.
    pub phrase: String,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

impl PhraseDictionary {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = pairs
            .into_iter()
            .map(|(a, b)| (normalize(&a), normalize(&b)))
            .collect();
        pairs.dedup();
        for (a, b) in &pairs {
            if a.is_empty() || b.is_empty() {
                return Err(Error::Config("empty phrase in dictionary".into()));
            }
            if a == b || contains_words(b, a) || contains_words(a, b) {
                return Err(Error::Config(format!(
                    "phrase {a:?} overlaps its opposite {b:?}; rewriting would not be reversible"
                )));
            }
        }
        let mut keys: Vec<String> = pairs
            .iter()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect();
        keys.sort_by(|x, y| y.len().cmp(&x.len()).then_with(|| x.cmp(y)));
        keys.dedup();
        Ok(Self { pairs, keys })
    }

    /// Reads `phrase => opposite` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (a, b) = line.split_once("=>").ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `phrase => opposite`".into(),
            })?;
            pairs.push((a.trim().to_string(), b.trim().to_string()));
        }
        Self::new(pairs)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// Opposite of a phrase from either side of a pair.
    pub fn lookup(&self, phrase: &str) -> Option<&str> {
        let p = normalize(phrase);
        self.pairs
            .iter()
            .find(|(a, _)| *a == p)
            .map(|(_, b)| b.as_str())
            .or_else(|| {
                self.pairs
                    .iter()
                    .find(|(_, b)| *b == p)
                    .map(|(a, _)| a.as_str())
            })
    }

    /// Left-to-right, longest-first, whole-word, case-insensitive matches.
    pub fn find(&self, text: &str) -> Vec<PhraseMatch> {
        let lower: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
        let chars: Vec<char> = text.chars().collect();
        // the lowercase mapping is length-preserving for the closed vocabulary; fall back
        // to a per-char comparison if it is not
        let folded: Vec<char> = if lower.len() == chars.len() {
            lower
        } else {
            chars
                .iter()
                .map(|c| c.to_lowercase().next().unwrap_or(*c))
                .collect()
        };
        let key_chars: Vec<(Vec<char>, &String)> =
            self.keys.iter().map(|k| (k.chars().collect(), k)).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < folded.len() {
            let at_boundary = i == 0 || !is_word_char(folded[i - 1]);
            let mut matched = None;
            if at_boundary {
                for (kc, key) in &key_chars {
                    let end = i + kc.len();
                    if end <= folded.len()
                        && folded[i..end] == kc[..]
                        && (end == folded.len() || !is_word_char(folded[end]))
                    {
                        matched = Some((end, *key));
                        break;
                    }
                }
            }
            match matched {
                Some((end, key)) => {
                    out.push(PhraseMatch {
                        start: i,
                        end,
                        phrase: key.clone(),
                    });
                    i = end;
                }
                None => i += 1,
            }
        }
        out
    }

    /// True iff the text contains any dictionary phrase.
    pub fn classify_view_dependence(&self, utterance: &str) -> bool {
        !self.find(utterance).is_empty()
    }

    /// Opposites of every phrase found, in order of appearance.
    pub fn opposite_phrases(&self, utterance: &str) -> Vec<String> {
        self.find(utterance)
            .iter()
            .filter_map(|m| self.lookup(&m.phrase).map(str::to_string))
            .collect()
    }

    /// Replaces every phrase by its opposite in one pass; replacements are never re-scanned.
    /// A capitalized match yields a capitalized replacement.
    pub fn rewrite_opposite(&self, utterance: &str) -> Result<String> {
        let matches = self.find(utterance);
        if matches.is_empty() {
            return Err(Error::Usage(format!(
                "no view-related phrase in {utterance:?}; it is view-independent"
            )));
        }
        let chars: Vec<char> = utterance.chars().collect();
        let mut out = String::with_capacity(utterance.len() + 16);
        let mut pos = 0;
        for m in matches {
            out.extend(&chars[pos..m.start]);
            let replacement = self.lookup(&m.phrase).expect("matched phrases are keys");
            if chars[m.start].is_uppercase() {
                out.push_str(&super::capitalize(replacement));
            } else {
                out.push_str(replacement);
            }
            pos = m.end;
        }
        out.extend(&chars[pos..]);
        Ok(out)
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn contains_words(haystack: &str, needle: &str) -> bool {
    let h: Vec<&str> = haystack.split(' ').collect();
    let n: Vec<&str> = needle.split(' ').collect();
    h.windows(n.len()).any(|w| w == n.as_slice())
}
