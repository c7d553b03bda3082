use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::fusion::{argmax, ViewRefer};
use crate::numeric::{ParamStore, Scope, Tape};

use super::data::PreparedSample;

/// Canonical-view scores of one view-dependent sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendSample {
    /// Position in the evaluated set.
    pub index: usize,
    pub canonical_view: usize,
    /// Canonical view's score after each fusion block.
    pub canonical_scores: Vec<f64>,
    /// Every view's score from the final features.
    pub final_scores: Vec<f64>,
    pub rising: bool,
    pub argmax_hit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub views: usize,
    pub blocks: usize,
    pub samples: Vec<TrendSample>,
    /// Samples whose last-block canonical score exceeds the first-block one.
    pub rising: usize,
    /// Samples whose canonical view has the largest final score.
    pub argmax_hits: usize,
    /// One-sided binomial p-value of `argmax_hits` against chance `1 / views`.
    pub p_value: f64,
}

impl TrendReport {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rising_fraction(&self) -> f64 {
        fraction(self.rising, self.len())
    }

    pub fn argmax_fraction(&self) -> f64 {
        fraction(self.argmax_hits, self.len())
    }

    pub fn chance(&self) -> f64 {
        1.0 / self.views as f64
    }

    /// Mean canonical score per block, for plotting.
    pub fn mean_by_block(&self) -> Vec<f64> {
        (0..self.blocks)
            .map(|b| {
                let total: f64 = self.samples.iter().map(|s| s.canonical_scores[b]).sum();
                total / self.len().max(1) as f64
            })
            .collect()
    }
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// P(X >= hits) for X ~ Binomial(trials, p).
pub fn binomial_upper_tail(hits: usize, trials: usize, p: f64) -> Result<f64> {
    if hits == 0 {
        return Ok(1.0);
    }
    let dist =
        Binomial::new(p, trials as u64).map_err(|e| Error::Usage(format!("binomial test: {e}")))?;
    Ok(dist.sf(hits as u64 - 1))
}

/// Tracks the canonical view's score through the fusion blocks on every view-dependent
/// sample. A model without a decoder has a single pseudo-block, the encoder features.
pub fn score_trend_report(
    model: &ViewRefer,
    store: &ParamStore,
    data: &[PreparedSample],
) -> Result<TrendReport> {
    let views = model.config.active_views();
    let mut samples = Vec::new();
    let mut blocks = 0;
    for (index, sample) in data.iter().enumerate() {
        let Some(canonical_view) = sample.canonical_view else {
            continue;
        };
        let tape = Tape::new();
        let out = model.forward(Scope::new(&tape, store), &sample.input, true)?;
        let final_scores = out
            .scores
            .expect("diagnostic forward always scores")
            .value()
            .data()
            .to_vec();
        let per_block = if out.block_scores.is_empty() {
            vec![final_scores.clone()]
        } else {
            out.block_scores
        };
        blocks = per_block.len();
        let canonical_scores: Vec<f64> = per_block.iter().map(|b| b[canonical_view]).collect();
        samples.push(TrendSample {
            index,
            canonical_view,
            rising: canonical_scores[blocks - 1] > canonical_scores[0],
            argmax_hit: argmax(&final_scores) == canonical_view,
            canonical_scores,
            final_scores,
        });
    }
    let rising = samples.iter().filter(|s| s.rising).count();
    let argmax_hits = samples.iter().filter(|s| s.argmax_hit).count();
    let p_value = binomial_upper_tail(argmax_hits, samples.len(), 1.0 / views as f64)?;
    Ok(TrendReport {
        views,
        blocks,
        samples,
        rising,
        argmax_hits,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_tail_matches_direct_sum() {
        // P(X >= 3), X ~ Bin(5, 0.25)
        let direct: f64 = (3..=5u32)
            .map(|k| {
                let c = [1.0, 5.0, 10.0, 10.0, 5.0, 1.0][k as usize];
                c * 0.25f64.powi(k as i32) * 0.75f64.powi(5 - k as i32)
            })
            .sum();
        assert!((binomial_upper_tail(3, 5, 0.25).unwrap() - direct).abs() < 1e-12);
        assert_eq!(binomial_upper_tail(0, 5, 0.25).unwrap(), 1.0);
    }
}
