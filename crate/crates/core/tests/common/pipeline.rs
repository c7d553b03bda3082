//! Loss bookkeeping and end-to-end reproducibility checks on a tiny experiment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewrefer::fusion::{argmax, build_model, ForwardOutput, ModelInput, ViewRefer};
use viewrefer::numeric::{ParamStore, Scope, Tape, Tensor};
use viewrefer::scenegen::write_dataset;
use viewrefer::textexp::{write_expanded, Expander};
use viewrefer::training::{
    evaluate, load_checkpoint, loss, save_checkpoint, train, Corpus, ExperimentConfig,
    PreparedSample,
};

use super::gradients::random;
use super::{exact, within, Check};

pub const LOSS_TOLERANCE: f64 = 1e-9;

/// A few dozen samples and a model small enough to train in well under a second.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        data_seed: 3,
        train_samples: 24,
        test_samples: 12,
        ..ExperimentConfig::default()
    };
    cfg.model.dim = 8;
    cfg.model.class_dim = 4;
    cfg.model.text_layers = 1;
    cfg.model.text_heads = 2;
    cfg.model.fusion_blocks = 2;
    cfg.model.fusion_heads = 2;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.train.lr_fusion = 1e-3;
    cfg.train.lr_other = 1e-3;
    cfg.train.seed = 5;
    cfg
}

fn recombination(out: &ForwardOutput, target: usize, class: usize, classes: &[usize]) -> f64 {
    let (beta, gamma) = (0.5, 0.5);
    let (total, parts) = loss(out, target, class, classes, beta, gamma).unwrap();
    let recombined = parts.l_ref + beta * parts.l_text + gamma * parts.l_3d;
    (total.value().item() - recombined)
        .abs()
        .max((parts.total - recombined).abs())
}

/// `L = L_ref + 0.5 L_text + 0.5 L_3D` on random and on model-produced logits, and
/// cross-entropy of uniform logits equal to `ln K`.
pub fn loss_identity(trials: usize) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let store = ParamStore::new();
    let mut checks = Vec::new();
    for t in 0..trials {
        let (n, k, m, c) = (1 + t % 4, 2 + t % 11, 1 + t % 4, 16);
        let tape = Tape::new();
        let s = Scope::new(&tape, &store);
        let out = ForwardOutput {
            aggregated: s.constant(random(&mut rng, &[k]).map(|x| 5.0 * x)),
            per_view_logits: s.constant(Tensor::zeros(vec![n, k])),
            scores: None,
            weights: vec![1.0 / n as f64; n],
            text_logits: s.constant(random(&mut rng, &[m, c]).map(|x| 5.0 * x)),
            object_logits: s.constant(random(&mut rng, &[n, k, c]).map(|x| 5.0 * x)),
            block_scores: Vec::new(),
        };
        let classes: Vec<usize> = (0..k).map(|_| rng.gen_range(0..c)).collect();
        let dev = recombination(&out, rng.gen_range(0..k), rng.gen_range(0..c), &classes);
        checks.push(within(
            "loss recombination (random logits)",
            dev,
            LOSS_TOLERANCE,
        ));
    }

    let cfg = tiny_config();
    let corpus = Corpus::generate(&cfg, &Expander::fallback()).unwrap();
    let data = corpus.prepare_test(&cfg.model).unwrap();
    let (model, store) = build_model(cfg.model.clone(), corpus.vocab.len(), 1).unwrap();
    for p in data.iter().take(trials) {
        let tape = Tape::new();
        let out = model
            .forward(Scope::new(&tape, &store), &p.input, false)
            .unwrap();
        let dev = recombination(&out, p.target(), p.target_class, &p.object_classes);
        checks.push(within(
            "loss recombination (model logits)",
            dev,
            LOSS_TOLERANCE,
        ));
    }

    for k in 1..=12 {
        let tape = Tape::new();
        let uniform = tape.constant(Tensor::full(vec![1, k], 0.37 * k as f64));
        let ce = uniform.cross_entropy(&[k - 1]).unwrap().value().item();
        checks.push(within(
            "uniform-logit cross-entropy equals ln K",
            (ce - (k as f64).ln()).abs(),
            LOSS_TOLERANCE,
        ));
    }
    checks
}

fn dataset_bytes(cfg: &ExperimentConfig) -> Vec<u8> {
    let corpus = Corpus::generate(cfg, &Expander::fallback()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for (name, samples) in [("train.jsonl", &corpus.train), ("test.jsonl", &corpus.test)] {
        let path = dir.path().join(name);
        write_dataset(&path, samples).unwrap();
        bytes.extend(std::fs::read(&path).unwrap());
    }
    for (name, sets) in [
        ("xtrain.jsonl", &corpus.train_texts),
        ("xtest.jsonl", &corpus.test_texts),
    ] {
        let path = dir.path().join(name);
        write_expanded(&path, sets).unwrap();
        bytes.extend(std::fs::read(&path).unwrap());
    }
    bytes
}

struct Run {
    model: ViewRefer,
    store: ParamStore,
    history_csv: String,
    report_json: String,
}

fn train_once(cfg: &ExperimentConfig, corpus: &Corpus, test: &[PreparedSample]) -> Run {
    let train_set = corpus.prepare_train(&cfg.model).unwrap();
    let (model, mut store) =
        build_model(cfg.model.clone(), corpus.vocab.len(), cfg.train.seed).unwrap();
    let history = train(
        &model,
        &mut store,
        &train_set,
        Some(test),
        &cfg.train,
        |_, _| {},
    )
    .unwrap();
    let report = evaluate(&model, &store, test).unwrap();
    Run {
        model,
        store,
        history_csv: history.to_csv(),
        report_json: serde_json::to_string(&report).unwrap(),
    }
}

fn logits(model: &ViewRefer, store: &ParamStore, inputs: &[&ModelInput]) -> Vec<u64> {
    inputs
        .iter()
        .flat_map(|input| {
            let tape = Tape::new();
            let out = model
                .forward(Scope::new(&tape, store), input, false)
                .unwrap();
            let v = out.aggregated.value();
            let mut bits: Vec<u64> = v.data().iter().map(|x| x.to_bits()).collect();
            bits.push(argmax(v.data()) as u64);
            bits
        })
        .collect()
}

/// Two identical runs agree bit for bit, and a checkpoint round trip reproduces them.
pub fn reproducibility(cfg: &ExperimentConfig) -> Vec<Check> {
    let mut checks = vec![exact(
        "dataset and expansion files are byte-identical across runs",
        dataset_bytes(cfg) == dataset_bytes(cfg),
    )];

    let corpus = Corpus::generate(cfg, &Expander::fallback()).unwrap();
    let test = corpus.prepare_test(&cfg.model).unwrap();
    let a = train_once(cfg, &corpus, &test);
    let b = train_once(cfg, &corpus, &test);
    checks.push(exact(
        "loss curves and per-epoch evaluations are bit-identical across runs",
        a.history_csv == b.history_csv,
    ));
    checks.push(exact(
        "final evaluation reports are identical across runs",
        a.report_json == b.report_json,
    ));

    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), cfg, &corpus.vocab, &a.store).unwrap();
    let restored = load_checkpoint(dir.path()).unwrap();
    let reloaded_report =
        serde_json::to_string(&evaluate(&restored.model, &restored.store, &test).unwrap()).unwrap();
    let inputs: Vec<&ModelInput> = test.iter().map(|p| &p.input).collect();
    checks.push(exact(
        "checkpoint round trip reproduces logits and evaluation bit-exactly",
        reloaded_report == a.report_json
            && logits(&a.model, &a.store, &inputs)
                == logits(&restored.model, &restored.store, &inputs)
            && restored.store.to_named() == a.store.to_named(),
    ));
    checks
}
