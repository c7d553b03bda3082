//! Deterministic offline paraphraser used when no generation endpoint is configured.

use super::capitalize;

/// Synonyms for non-spatial words. No entry touches a dictionary phrase.
const SYNONYMS_A: [(&str, &str); 8] = [
    ("pick", "choose"),
    ("choose", "select"),
    ("find", "locate"),
    ("select", "pick"),
    ("closest", "nearest"),
    ("nearest", "closest"),
    ("farthest", "furthest"),
    ("furthest", "farthest"),
];
const SYNONYMS_B: [(&str, &str); 6] = [
    ("pick", "select"),
    ("choose", "pick"),
    ("find", "pick"),
    ("select", "find"),
    ("closest", "nearest"),
    ("farthest", "furthest"),
];

fn substitute(text: &str, table: &[(&str, &str)], relative_clause: bool) -> String {
    let pieces: Vec<&str> = text.split(' ').collect();
    let mut out = Vec::with_capacity(pieces.len());
    for (i, piece) in pieces.iter().enumerate() {
        let word_end = piece
            .char_indices()
            .rev()
            .find(|(_, c)| c.is_alphanumeric())
            .map_or(0, |(j, c)| j + c.len_utf8());
        let (word, rest) = piece.split_at(word_end);
        let lower = word.to_lowercase();
        let replacement = if relative_clause && lower == "that" && pieces.get(i + 1) == Some(&"is")
        {
            Some("which")
        } else {
            table
                .iter()
                .find(|(from, _)| *from == lower)
                .map(|(_, to)| *to)
        };
        match replacement {
            Some(r) if word.starts_with(char::is_uppercase) => {
                out.push(format!("{}{rest}", capitalize(r)))
            }
            Some(r) => out.push(format!("{r}{rest}")),
            None => out.push(piece.to_string()),
        }
    }
    out.join(" ")
}

fn decapitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Swaps the two clauses around the first `", "`; single-clause text is unchanged.
fn reorder(text: &str) -> String {
    match text.split_once(", ") {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => {
            format!("{}, {}", capitalize(b), decapitalize(a))
        }
        _ => text.to_string(),
    }
}

/// Variant `k` of a meaning-preserving surface rewrite. Variants cycle with period 4.
pub fn fallback_paraphrase(utterance: &str, k: usize) -> String {
    match k % 4 {
        0 => substitute(utterance, &SYNONYMS_A, false),
        1 => reorder(&substitute(utterance, &SYNONYMS_B, true)),
        2 => reorder(&substitute(utterance, &[], true)),
        _ => reorder(&substitute(utterance, &SYNONYMS_A, true)),
    }
}
