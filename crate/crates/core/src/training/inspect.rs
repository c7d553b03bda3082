use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::{argmax, ViewRefer};
use crate::numeric::{ParamStore, Scope, Tape};
use crate::textexp::Provenance;

use super::data::PreparedSample;

/// Everything the model computed for one sample, in printable form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inspection {
    pub utterance: String,
    /// The texts fed to the model, with their origin.
    pub texts: Vec<(String, Provenance)>,
    /// `[block][view]` cosine scores.
    pub block_scores: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub aggregated: Vec<f64>,
    pub predicted: usize,
    pub target: usize,
    pub canonical_view: Option<usize>,
}

/// Runs one diagnostic forward pass. `provenance` labels the sample's expanded texts.
pub fn inspect(
    model: &ViewRefer,
    store: &ParamStore,
    sample: &PreparedSample,
    provenance: &[Provenance],
) -> Result<Inspection> {
    let tape = Tape::new();
    let out = model.forward(Scope::new(&tape, store), &sample.input, true)?;
    let aggregated = out.aggregated.value().data().to_vec();
    let m = model.config.active_texts();
    let block_scores = if out.block_scores.is_empty() {
        out.scores
            .map(|s| vec![s.value().data().to_vec()])
            .unwrap_or_default()
    } else {
        out.block_scores
    };
    Ok(Inspection {
        utterance: sample.sample.utterance.clone(),
        texts: sample.texts[..m]
            .iter()
            .cloned()
            .zip(
                provenance
                    .iter()
                    .copied()
                    .chain(std::iter::repeat(Provenance::Original)),
            )
            .collect(),
        block_scores,
        weights: out.weights,
        predicted: argmax(&aggregated),
        aggregated,
        target: sample.target(),
        canonical_view: sample.canonical_view,
    })
}

impl fmt::Display for Inspection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "utterance: {}", self.utterance)?;
        writeln!(f, "texts ({}):", self.texts.len())?;
        for (i, (text, prov)) in self.texts.iter().enumerate() {
            writeln!(f, "  [{i}] {prov:<24} {text}")?;
        }
        let views = self.weights.len();
        write!(f, "view scores:\n  {:<8}", "block")?;
        for n in 0..views {
            let mark = if Some(n) == self.canonical_view {
                "*"
            } else {
                ""
            };
            write!(f, " {:>9}", format!("view{n}{mark}"))?;
        }
        writeln!(f)?;
        for (b, scores) in self.block_scores.iter().enumerate() {
            write!(f, "  {:<8}", b + 1)?;
            for s in scores {
                write!(f, " {s:>9.4}")?;
            }
            writeln!(f)?;
        }
        write!(f, "  {:<8}", "weight")?;
        for w in &self.weights {
            write!(f, " {w:>9.4}")?;
        }
        writeln!(f)?;
        let verdict = if self.predicted == self.target {
            "correct"
        } else {
            "wrong"
        };
        writeln!(
            f,
            "predicted object {} / target object {} ({verdict})",
            self.predicted, self.target
        )
    }
}
