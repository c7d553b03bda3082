use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{build_model, AblationFlags, ViewRefer};
use crate::numeric::ParamStore;

use super::config::ExperimentConfig;
use super::data::Corpus;
use super::eval::{evaluate, EvalReport};
use super::loss::LossBreakdown;
use super::train::train;

/// One trained and evaluated (row, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub row: usize,
    pub name: String,
    pub seed: u64,
    pub report: EvalReport,
    /// Mean training losses of the last epoch.
    pub final_loss: LossBreakdown,
}

impl AblationRun {
    fn columns(&self) -> [f64; 8] {
        let a = self.report.accuracies();
        [
            a[0],
            a[1],
            a[2],
            a[3],
            a[4],
            self.final_loss.l_ref,
            self.final_loss.l_text,
            self.final_loss.l_3d,
        ]
    }
}

/// Mean and sample standard deviation across seeds, in CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub row: usize,
    pub name: String,
    pub seeds: usize,
    pub mean: [f64; 8],
    pub std: [f64; 8],
}

impl RowSummary {
    pub fn overall(&self) -> f64 {
        self.mean[0]
    }

    pub fn view_dep(&self) -> f64 {
        self.mean[3]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub runs: Vec<AblationRun>,
    pub rows: Vec<RowSummary>,
}

pub const ABLATION_HEADER: &str =
    "row,name,seed,overall,easy,hard,view_dep,view_indep,l_ref,l_text,l_3d";

impl AblationTable {
    pub fn row(&self, row: usize) -> Option<&RowSummary> {
        self.rows.iter().find(|r| r.row == row)
    }

    /// Every run, then a `mean` and a `std` line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(ABLATION_HEADER);
        out.push('\n');
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.row,
                r.name,
                r.seed,
                join(&r.columns())
            ));
        }
        for s in &self.rows {
            out.push_str(&format!("{},{},mean,{}\n", s.row, s.name, join(&s.mean)));
            out.push_str(&format!("{},{},std,{}\n", s.row, s.name, join(&s.std)));
        }
        out
    }

    /// Human-readable `mean ± std` table.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<3} {:<24} {:>14} {:>14} {:>14} {:>14} {:>14}\n",
            "row", "configuration", "overall", "easy", "hard", "view-dep", "view-indep"
        );
        for s in &self.rows {
            out.push_str(&format!("{:<3} {:<24}", s.row, s.name));
            for c in 0..5 {
                out.push_str(&format!(" {:>7.2} ± {:<4.2}", s.mean[c], s.std[c]));
            }
            out.push('\n');
        }
        out
    }
}

fn summarize(row: usize, runs: &[&AblationRun]) -> RowSummary {
    let n = runs.len() as f64;
    let mut mean = [0.0; 8];
    let mut std = [0.0; 8];
    for r in runs {
        for (m, v) in mean.iter_mut().zip(r.columns()) {
            *m += v / n;
        }
    }
    if runs.len() > 1 {
        for r in runs {
            for ((s, m), v) in std.iter_mut().zip(&mean).zip(r.columns()) {
                *s += (v - m).powi(2) / (n - 1.0);
            }
        }
        std.iter_mut().for_each(|s| *s = s.sqrt());
    }
    RowSummary {
        row,
        name: runs[0].name.clone(),
        seeds: runs.len(),
        mean,
        std,
    }
}

/// Trains one model for `row` of the flag lattice with training and init seed `seed`.
pub fn run_ablation_cell(
    base: &ExperimentConfig,
    corpus: &Corpus,
    row: usize,
    seed: u64,
) -> Result<AblationRun> {
    train_cell(base, corpus, row, seed).map(|(run, _, _)| run)
}

fn train_cell(
    base: &ExperimentConfig,
    corpus: &Corpus,
    row: usize,
    seed: u64,
) -> Result<(AblationRun, ViewRefer, ParamStore)> {
    let rows = AblationFlags::table_rows();
    let (name, flags) = *rows
        .get(row)
        .ok_or_else(|| Error::Usage(format!("ablation row {row} does not exist")))?;
    let mut cfg = base.clone();
    cfg.model.flags = flags;
    cfg.train.seed = seed;
    let train_set = corpus.prepare_train(&cfg.model)?;
    let test_set = corpus.prepare_test(&cfg.model)?;
    let (model, mut store) = build_model(cfg.model.clone(), corpus.vocab.len(), seed)?;
    let history = train(&model, &mut store, &train_set, None, &cfg.train, |_, _| {})?;
    let report = evaluate(&model, &store, &test_set)?;
    let run = AblationRun {
        row,
        name: name.to_string(),
        seed,
        report,
        final_loss: history.epochs.last().map(|e| e.train).unwrap_or_default(),
    };
    Ok((run, model, store))
}

/// Trains every (row, seed) pair, `jobs` at a time. Results do not depend on `jobs`.
/// `on_run` sees each finished cell together with its trained model.
pub fn run_ablation(
    base: &ExperimentConfig,
    corpus: &Corpus,
    rows: &[usize],
    seeds: &[u64],
    jobs: usize,
    on_run: impl Fn(&AblationRun, &ViewRefer, &ParamStore) + Sync,
) -> Result<AblationTable> {
    if seeds.len() < 3 {
        return Err(Error::Usage(format!(
            "an ablation needs at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    let cells: Vec<(usize, u64)> = rows
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<AblationRun>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(row, seed)) = cells.get(i) else {
                    break;
                };
                let run = train_cell(base, corpus, row, seed).map(|(r, model, store)| {
                    on_run(&r, &model, &store);
                    r
                });
                results.lock().expect("no panics while holding the lock")[i] = Some(run);
            });
        }
    });
    let runs = results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>>>()?;
    let summaries = rows
        .iter()
        .map(|&row| {
            let of_row: Vec<&AblationRun> = runs.iter().filter(|r| r.row == row).collect();
            summarize(row, &of_row)
        })
        .collect();
    Ok(AblationTable {
        runs,
        rows: summaries,
    })
}

/// Worker count for [`run_ablation`]: the machine's parallelism.
pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}
