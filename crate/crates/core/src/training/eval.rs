use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::{argmax, ViewRefer};
use crate::numeric::{ParamStore, Scope, Tape};

use super::data::PreparedSample;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCount {
    pub correct: usize,
    pub total: usize,
}

impl SplitCount {
    fn record(&mut self, hit: bool) {
        self.total += 1;
        self.correct += hit as usize;
    }

    /// Percentage; 0 for an empty split.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }
}

/// Accuracy overall and on the easy/hard and view-dependent/independent splits.
/// Easy samples have exactly one distractor, hard ones two or more.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: SplitCount,
    pub easy: SplitCount,
    pub hard: SplitCount,
    pub view_dep: SplitCount,
    pub view_indep: SplitCount,
    pub predictions: Vec<usize>,
}

impl EvalReport {
    pub fn record(&mut self, sample: &PreparedSample, predicted: usize) {
        let hit = predicted == sample.target();
        self.overall.record(hit);
        if sample.sample.distractor_count() <= 1 {
            self.easy.record(hit);
        } else {
            self.hard.record(hit);
        }
        if sample.sample.view_dependent {
            self.view_dep.record(hit);
        } else {
            self.view_indep.record(hit);
        }
        self.predictions.push(predicted);
    }

    /// (overall, easy, hard, view-dependent, view-independent) accuracies in percent.
    pub fn accuracies(&self) -> [f64; 5] {
        [
            self.overall.accuracy(),
            self.easy.accuracy(),
            self.hard.accuracy(),
            self.view_dep.accuracy(),
            self.view_indep.accuracy(),
        ]
    }
}

/// Argmax of the aggregated logits per sample, ties to the lowest object index.
pub fn evaluate(
    model: &ViewRefer,
    store: &ParamStore,
    data: &[PreparedSample],
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for sample in data {
        let tape = Tape::new();
        let out = model.forward(Scope::new(&tape, store), &sample.input, false)?;
        report.record(sample, argmax(out.aggregated.value().data()));
    }
    Ok(report)
}
