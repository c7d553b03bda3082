use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use viewrefer::fusion::build_model;
use viewrefer::scenegen::{generate_range, read_dataset, write_dataset};
use viewrefer::textexp::{
    read_expanded, write_expanded, Expander, GenerationBackend, HttpBackend, HttpConfig,
    ResponseCache,
};
use viewrefer::training::{
    evaluate, inspect, load_checkpoint, prepare, run_ablation, save_checkpoint, score_trend_report,
    train, Corpus, ExperimentConfig, PreparedSample, Restored,
};
use viewrefer::Error;

use crate::config::resolve;
use crate::plot::{bar_chart, line_chart, Series};
use crate::{
    AblateArgs, Backend, EvalArgs, ExpandArgs, GenArgs, InspectArgs, Split, TrainArgs, TrendArgs,
};

pub const CONFIG_FILE: &str = "config.toml";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const EXPANDED_TRAIN_FILE: &str = "expanded_train.jsonl";
pub const EXPANDED_TEST_FILE: &str = "expanded_test.jsonl";
pub const LLM_CACHE_FILE: &str = "llm_cache.jsonl";
pub const HISTORY_FILE: &str = "history.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const TREND_BLOCKS_FILE: &str = "trend_blocks.csv";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write(&dir.join(CONFIG_FILE), cfg.to_toml()?)
}

pub fn gen(args: &GenArgs) -> Result<()> {
    let mut cfg = resolve(None, &args.overrides)?;
    if let Some(n) = args.n {
        cfg.train_samples = n;
    }
    if let Some(n) = args.test_n {
        cfg.test_samples = n;
    }
    if let Some(seed) = args.seed {
        cfg.data_seed = seed;
    }
    cfg.validate()?;
    create_dir(&args.out)?;
    let train = generate_range(&cfg.generator, cfg.data_seed, 0, cfg.train_samples)?;
    let test = generate_range(
        &cfg.generator,
        cfg.data_seed,
        cfg.train_samples,
        cfg.test_samples,
    )?;
    write_dataset(&args.out.join(TRAIN_FILE), &train)?;
    write_dataset(&args.out.join(TEST_FILE), &test)?;
    write_config(&args.out, &cfg)?;
    let vd = train
        .iter()
        .chain(&test)
        .filter(|s| s.view_dependent)
        .count();
    println!(
        "wrote {} train and {} test samples ({vd} view-dependent) to {}",
        train.len(),
        test.len(),
        args.out.display()
    );
    Ok(())
}

fn build_expander(args: &ExpandArgs, data: &Path) -> Result<Expander> {
    match args.backend {
        Backend::Fallback => Ok(Expander::fallback()),
        Backend::Http => {
            let url = args
                .endpoint
                .clone()
                .context("the http backend needs --endpoint or VIEWREFER_LLM_URL")?;
            let mut http = HttpConfig::new(url);
            if let Some(token) = &args.token {
                http.auth_header = Some(("Authorization".into(), format!("Bearer {token}")));
            }
            let backend: Box<dyn GenerationBackend> = Box::new(HttpBackend::new(http));
            let cache = ResponseCache::open(&data.join(LLM_CACHE_FILE))?;
            Ok(Expander::new(backend, cache))
        }
    }
}

pub fn expand(args: &ExpandArgs) -> Result<()> {
    let cfg = resolve(Some(&args.data), &args.overrides)?;
    let expander = build_expander(args, &args.data)?;
    let m = cfg.model.texts;
    for (src, dst) in [
        (TRAIN_FILE, EXPANDED_TRAIN_FILE),
        (TEST_FILE, EXPANDED_TEST_FILE),
    ] {
        let samples = read_dataset(&args.data.join(src))?;
        let sets = samples
            .iter()
            .map(|s| expander.expand(&s.utterance, m))
            .collect::<viewrefer::Result<Vec<_>>>()?;
        write_expanded(&args.data.join(dst), &sets)?;
        println!(
            "expanded {} utterances into {m} texts each: {dst}",
            sets.len()
        );
    }
    Ok(())
}

/// Reads a generated data directory; expansions are produced offline when absent.
pub fn load_corpus(data: &Path, cfg: &ExperimentConfig) -> Result<Corpus> {
    let train = read_dataset(&data.join(TRAIN_FILE))?;
    let test = read_dataset(&data.join(TEST_FILE))?;
    let (tr, te) = (
        data.join(EXPANDED_TRAIN_FILE),
        data.join(EXPANDED_TEST_FILE),
    );
    if tr.exists() && te.exists() {
        let corpus = Corpus::from_parts(train, test, read_expanded(&tr)?, read_expanded(&te)?)?;
        let short = corpus
            .train_texts
            .iter()
            .chain(&corpus.test_texts)
            .any(|e| e.len() < cfg.model.active_texts());
        if short {
            bail!(Error::Config(format!(
                "stored expansions have fewer than {} texts; rerun `expand`",
                cfg.model.active_texts()
            )));
        }
        Ok(corpus)
    } else {
        eprintln!(
            "warning: no stored expansions in {}, using the offline expander",
            data.display()
        );
        Ok(Corpus::from_samples(
            train,
            test,
            cfg.model.texts,
            &Expander::fallback(),
        )?)
    }
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = resolve(Some(&args.data), &args.overrides)?;
    let corpus = load_corpus(&args.data, &cfg)?;
    create_dir(&args.out)?;
    write_config(&args.out, &cfg)?;
    let train_set = corpus.prepare_train(&cfg.model)?;
    let test_set = corpus.prepare_test(&cfg.model)?;
    let (model, mut store) = build_model(cfg.model.clone(), corpus.vocab.len(), cfg.train.seed)?;
    println!(
        "training {} parameters on {} samples for {} epochs",
        store.num_scalars(),
        train_set.len(),
        cfg.train.epochs
    );
    let eval = (!args.no_eval).then_some(test_set.as_slice());
    let mut best: Option<f64> = None;
    let mut save_error = None;
    let history = train(
        &model,
        &mut store,
        &train_set,
        eval,
        &cfg.train,
        |record, store| {
            let t = &record.train;
            match &record.eval {
                Some(e) => {
                    let acc = e.overall.accuracy();
                    println!(
                    "epoch {:>3}  loss {:.4} (ref {:.4} text {:.4} 3d {:.4})  acc {acc:.2}  vd {:.2}  vi {:.2}",
                    record.epoch,
                    t.total,
                    t.l_ref,
                    t.l_text,
                    t.l_3d,
                    e.view_dep.accuracy(),
                    e.view_indep.accuracy()
                );
                    if best.is_none_or(|b| acc > b) {
                        best = Some(acc);
                        if let Err(err) =
                            save_checkpoint(&args.out.join("best"), &cfg, &corpus.vocab, store)
                        {
                            save_error.get_or_insert(err);
                        }
                    }
                }
                None => println!(
                    "epoch {:>3}  loss {:.4} (ref {:.4} text {:.4} 3d {:.4})",
                    record.epoch, t.total, t.l_ref, t.l_text, t.l_3d
                ),
            }
        },
    )?;
    if let Some(err) = save_error {
        return Err(err.into());
    }
    save_checkpoint(&args.out.join("last"), &cfg, &corpus.vocab, &store)?;
    if best.is_none() {
        save_checkpoint(&args.out.join("best"), &cfg, &corpus.vocab, &store)?;
    }
    write(&args.out.join(HISTORY_FILE), history.to_csv())?;
    let report = evaluate(&model, &store, &test_set)?;
    write(
        &args.out.join("eval.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    print_report("final", &report);
    emit_plots(&args.out)?;
    Ok(())
}

fn print_report(label: &str, r: &viewrefer::training::EvalReport) {
    let a = r.accuracies();
    println!(
        "{label}: overall {:.2}  easy {:.2}  hard {:.2}  view-dep {:.2}  view-indep {:.2}  (n = {})",
        a[0], a[1], a[2], a[3], a[4], r.overall.total
    );
}

fn split_set(restored: &Restored, corpus: &Corpus, split: Split) -> Result<Vec<PreparedSample>> {
    let (samples, texts) = match split {
        Split::Train => (&corpus.train, &corpus.train_texts),
        Split::Test => (&corpus.test, &corpus.test_texts),
    };
    Ok(prepare(
        samples,
        texts,
        &restored.vocab,
        &restored.config.model,
    )?)
}

fn restore(
    ckpt: &Path,
    data: &Path,
    split: Split,
) -> Result<(Restored, Corpus, Vec<PreparedSample>)> {
    let restored = load_checkpoint(ckpt)?;
    let corpus = load_corpus(data, &restored.config)?;
    let set = split_set(&restored, &corpus, split)?;
    Ok((restored, corpus, set))
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let (restored, _, set) = restore(&args.ckpt, &args.data, args.split)?;
    let report = evaluate(&restored.model, &restored.store, &set)?;
    print_report(&format!("{:?}", args.split).to_lowercase(), &report);
    if let Some(out) = &args.out {
        write(out, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let cfg = resolve(Some(&args.data), &args.overrides)?;
    let corpus = load_corpus(&args.data, &cfg)?;
    create_dir(&args.out)?;
    write_config(&args.out, &cfg)?;
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let rows: Vec<usize> = match &args.rows {
        Some(r) => r.clone(),
        None => (0..viewrefer::fusion::AblationFlags::table_rows().len()).collect(),
    };
    let jobs = args.jobs.unwrap_or_else(viewrefer::training::default_jobs);
    println!(
        "{} rows x {} seeds on {jobs} worker(s)",
        rows.len(),
        seeds.len()
    );
    let table = run_ablation(&cfg, &corpus, &rows, &seeds, jobs, |run, _, _| {
        println!(
            "row {} seed {}: overall {:.2}  view-dep {:.2}",
            run.row,
            run.seed,
            run.report.overall.accuracy(),
            run.report.view_dep.accuracy()
        );
    })?;
    write(&args.out.join(ABLATION_FILE), table.to_csv())?;
    let rendered = table.render();
    write(&args.out.join("ablation.txt"), &rendered)?;
    print!("{rendered}");
    emit_plots(&args.out)?;
    Ok(())
}

pub fn trend(args: &TrendArgs) -> Result<()> {
    let (restored, _, set) = restore(&args.ckpt, &args.data, args.split)?;
    let report = score_trend_report(&restored.model, &restored.store, &set)?;
    let out = args.out.clone().unwrap_or_else(|| args.ckpt.clone());
    create_dir(&out)?;
    write(
        &out.join("trend.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let mut csv = String::from("block,mean_canonical_score\n");
    for (b, v) in report.mean_by_block().iter().enumerate() {
        csv.push_str(&format!("{},{v}\n", b + 1));
    }
    write(&out.join(TREND_BLOCKS_FILE), csv)?;
    println!(
        "{} view-dependent samples, {} views, {} blocks",
        report.len(),
        report.views,
        report.blocks
    );
    println!(
        "last block >= first block: {:.3}   canonical view is argmax: {:.3} (chance {:.3}, p = {:.3e})",
        report.rising_fraction(),
        report.argmax_fraction(),
        report.chance(),
        report.p_value
    );
    emit_plots(&out)?;
    Ok(())
}

pub fn inspect_cmd(args: &InspectArgs) -> Result<()> {
    let (restored, corpus, set) = restore(&args.ckpt, &args.data, args.split)?;
    let sample = set.get(args.sample).ok_or_else(|| {
        Error::NotFound(format!(
            "sample {} (split has {} samples)",
            args.sample,
            set.len()
        ))
    })?;
    let provenance = match args.split {
        Split::Train => &corpus.train_texts[args.sample].provenance,
        Split::Test => &corpus.test_texts[args.sample].provenance,
    };
    let dump = inspect(&restored.model, &restored.store, sample, provenance)?;
    print!("{dump}");
    Ok(())
}

/// Header and records of a CSV file.
type Table = (Vec<String>, Vec<Vec<String>>);

fn read_csv(path: &Path) -> Result<Option<Table>> {
    if !path.exists() {
        eprintln!("warning: {} not found, skipping its plot", path.display());
        return Ok(None);
    }
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok(Some((header, rows)))
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let Some(i) = header.iter().position(|h| h == name) else {
        return Vec::new();
    };
    rows.iter()
        .map(|r| r.get(i).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN))
        .collect()
}

fn series(label: &str, xs: &[f64], ys: Vec<f64>) -> Series {
    Series {
        label: label.into(),
        points: xs.iter().copied().zip(ys).collect(),
    }
}

/// Writes SVG charts for whichever CSVs exist in `dir`.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if let Some((h, rows)) = read_csv(&dir.join(HISTORY_FILE))? {
        let x = column(&h, &rows, "epoch");
        let losses: Vec<Series> = ["l_ref", "l_text", "l_3d", "total"]
            .iter()
            .map(|c| series(c, &x, column(&h, &rows, c)))
            .collect();
        let path = dir.join("loss.svg");
        write(&path, line_chart("training loss", "epoch", "loss", &losses))?;
        written.push(path);
        let accs: Vec<Series> = ["overall", "view_dep", "view_indep"]
            .iter()
            .map(|c| series(c, &x, column(&h, &rows, c)))
            .filter(|s| s.points.iter().any(|p| p.1.is_finite()))
            .collect();
        if !accs.is_empty() {
            let path = dir.join("accuracy.svg");
            write(
                &path,
                line_chart("test accuracy", "epoch", "accuracy (%)", &accs),
            )?;
            written.push(path);
        }
    }
    if let Some((h, rows)) = read_csv(&dir.join(ABLATION_FILE))? {
        let seed = h.iter().position(|c| c == "seed");
        let name = h.iter().position(|c| c == "name");
        let overall = h.iter().position(|c| c == "overall");
        if let (Some(seed), Some(name), Some(overall)) = (seed, name, overall) {
            let pick = |kind: &str| -> Vec<(String, f64)> {
                rows.iter()
                    .filter(|r| r[seed] == kind)
                    .map(|r| (r[name].clone(), r[overall].parse().unwrap_or(f64::NAN)))
                    .collect()
            };
            let bars: Vec<(String, f64, f64)> = pick("mean")
                .into_iter()
                .zip(pick("std"))
                .map(|((n, m), (_, s))| (n, m, s))
                .collect();
            let path = dir.join("ablation.svg");
            write(
                &path,
                bar_chart("ablation: overall accuracy", "accuracy (%)", &bars),
            )?;
            written.push(path);
        }
    }
    if let Some((h, rows)) = read_csv(&dir.join(TREND_BLOCKS_FILE))? {
        let x = column(&h, &rows, "block");
        let s = series(
            "canonical view",
            &x,
            column(&h, &rows, "mean_canonical_score"),
        );
        let path = dir.join("trend.svg");
        write(
            &path,
            line_chart(
                "canonical view score by block",
                "block",
                "cosine score",
                &[s],
            ),
        )?;
        written.push(path);
    }
    if written.is_empty() {
        eprintln!(
            "warning: no history, ablation or trend CSV in {}",
            dir.display()
        );
    }
    Ok(written)
}
