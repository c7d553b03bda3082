//! Command templates sent to the text-generation backend.

use crate::error::{Error, Result};

pub const OPPOSITE_TEMPLATE: &str =
    "Rephrase the sentence of '[TEXT]' to the opposite perspective, which contains phrases '[PHRASEs]':";
pub const REPHRASE_TEMPLATE: &str = "Rephrase the sentence of '[TEXT]':";

const OPPOSITE_HEAD: &str = "Rephrase the sentence of '";
const OPPOSITE_MIDDLE: &str = "' to the opposite perspective, which contains phrases '";
const TAIL: &str = "':";

/// Fills the opposite-perspective command. Phrases are joined as `a', 'b`.
pub fn build_opposite_template(utterance: &str, phrases: &[String]) -> Result<String> {
    if utterance.is_empty() {
        return Err(Error::Usage(
            "cannot build a command for an empty utterance".into(),
        ));
    }
    if phrases.is_empty() {
        return Err(Error::Usage(format!(
            "no view-related phrases for {utterance:?}; use the rephrase command instead"
        )));
    }
    Ok(OPPOSITE_TEMPLATE.replacen("[TEXT]", utterance, 1).replacen(
        "[PHRASEs]",
        &phrases.join("', '"),
        1,
    ))
}

pub fn build_rephrase_template(utterance: &str) -> Result<String> {
    if utterance.is_empty() {
        return Err(Error::Usage(
            "cannot build a command for an empty utterance".into(),
        ));
    }
    Ok(REPHRASE_TEMPLATE.replacen("[TEXT]", utterance, 1))
}

/// A command recognized by [`parse_command`].
#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Opposite { text: String, phrases: Vec<String> },
    Rephrase { text: String },
}

/// Inverse of the two builders.
pub fn parse_command(prompt: &str) -> Option<Command> {
    let body = prompt.strip_prefix(OPPOSITE_HEAD)?.strip_suffix(TAIL)?;
    if let Some(split) = body.rfind(OPPOSITE_MIDDLE) {
        let text = &body[..split];
        let phrases = &body[split + OPPOSITE_MIDDLE.len()..];
        return Some(Command::Opposite {
            text: text.to_string(),
            phrases: phrases.split("', '").map(str::to_string).collect(),
        });
    }
    Some(Command::Rephrase {
        text: body.to_string(),
    })
}
