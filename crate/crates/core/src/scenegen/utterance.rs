//! Template rendering and keyword parsing for the closed utterance language.

use rand::seq::SliceRandom;
use rand::Rng;

use super::scene::{ClassId, Perspective, Relation};

const FACING_CLAUSES: [&str; 2] = ["facing the front of the {A}", "facing the {A}"];
const BACK_TO_CLAUSES: [&str; 2] = ["with back to the front of the {A}", "with back to the {A}"];

const SIDE_CLAUSES: [&str; 3] = [
    "pick the {T} that is to the {W} of the {A}",
    "choose the {T} on the {W} of the {A}",
    "find the {T} to the {W} of the {A}",
];
const DEPTH_CLAUSES: [&str; 3] = [
    "pick the {T} that is {W} the {A}",
    "choose the {T} {W} the {A}",
    "find the {T} {W} the {A}",
];
const NEAREST: [&str; 3] = [
    "pick the {T} closest to the {A}",
    "the {T} nearest to the {A}",
    "find the {T} that is closest to the {A}",
];
const FARTHEST: [&str; 3] = [
    "pick the {T} farthest from the {A}",
    "the {T} that is farthest from the {A}",
    "choose the {T} farthest from the {A}",
];
const BETWEEN: [&str; 3] = [
    "pick the {T} between the {A} and the {B}",
    "the {T} that is between the {A} and the {B}",
    "find the {T} between the {A} and the {B}",
];

fn relation_word(relation: Relation) -> &'static str {
    match relation {
        Relation::Left => "left",
        Relation::Right => "right",
        Relation::Front => "in front of",
        Relation::Behind => "behind",
        Relation::Nearest => "closest",
        Relation::Farthest => "farthest",
        Relation::Between => "between",
    }
}

fn fill(
    template: &str,
    target: ClassId,
    anchor: ClassId,
    second: Option<ClassId>,
    word: &str,
) -> String {
    let mut s = template
        .replace("{T}", target.name())
        .replace("{A}", anchor.name())
        .replace("{W}", word);
    if let Some(b) = second {
        s = s.replace("{B}", b.name());
    }
    s
}

pub(crate) fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Renders a grounding utterance from a randomly drawn surface form.
pub fn render<R: Rng>(
    rng: &mut R,
    relation: Relation,
    perspective: Option<Perspective>,
    target: ClassId,
    anchor: ClassId,
    second_anchor: Option<ClassId>,
) -> String {
    let word = relation_word(relation);
    let pick = |pool: &[&'static str], rng: &mut R| *pool.choose(rng).expect("nonempty pool");
    match relation {
        Relation::Left | Relation::Right | Relation::Front | Relation::Behind => {
            let clauses = match perspective.unwrap_or(Perspective::Facing) {
                Perspective::Facing => &FACING_CLAUSES,
                Perspective::BackTo => &BACK_TO_CLAUSES,
            };
            let lead = fill(pick(clauses, rng), target, anchor, None, word);
            let pool: &[&str] = if matches!(relation, Relation::Left | Relation::Right) {
                &SIDE_CLAUSES
            } else {
                &DEPTH_CLAUSES
            };
            let main = fill(pick(pool, rng), target, anchor, None, word);
            capitalize(&format!("{lead}, {main}"))
        }
        Relation::Nearest => capitalize(&fill(pick(&NEAREST, rng), target, anchor, None, word)),
        Relation::Farthest => capitalize(&fill(pick(&FARTHEST, rng), target, anchor, None, word)),
        Relation::Between => capitalize(&fill(
            pick(&BETWEEN, rng),
            target,
            anchor,
            second_anchor,
            word,
        )),
    }
}

/// Lowercased word tokens with punctuation split off.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '\'' || ch == '-' {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn contains_phrase(tokens: &[String], phrase: &[&str]) -> bool {
    tokens
        .windows(phrase.len())
        .any(|w| w.iter().zip(phrase).all(|(a, b)| a == b))
}

/// What the keyword reader extracts from an utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedUtterance {
    pub perspective: Option<Perspective>,
    pub relation: Option<Relation>,
    /// Class mentions in order of appearance, repeats included.
    pub classes: Vec<ClassId>,
}

/// Reads perspective, relation and class mentions. `relation` is `None` when zero or
/// several relation keywords appear.
pub fn parse(text: &str) -> ParsedUtterance {
    let tokens = words(text);
    let perspective = if contains_phrase(&tokens, &["with", "back", "to"]) {
        Some(Perspective::BackTo)
    } else if contains_phrase(&tokens, &["facing"]) || contains_phrase(&tokens, &["looking", "at"])
    {
        Some(Perspective::Facing)
    } else {
        None
    };
    let checks: [(Relation, &[&[&str]]); 7] = [
        (Relation::Left, &[&["left"]]),
        (Relation::Right, &[&["right"]]),
        (Relation::Front, &[&["in", "front", "of"]]),
        (Relation::Behind, &[&["behind"]]),
        (Relation::Nearest, &[&["closest"], &["nearest"]]),
        (Relation::Farthest, &[&["farthest"], &["furthest"]]),
        (Relation::Between, &[&["between"]]),
    ];
    let found: Vec<Relation> = checks
        .iter()
        .filter(|(_, phrases)| phrases.iter().any(|p| contains_phrase(&tokens, p)))
        .map(|(r, _)| *r)
        .collect();
    let relation = if found.len() == 1 {
        Some(found[0])
    } else {
        None
    };
    let classes = tokens
        .iter()
        .filter_map(|t| ClassId::from_name(t))
        .collect();
    ParsedUtterance {
        perspective,
        relation,
        classes,
    }
}
