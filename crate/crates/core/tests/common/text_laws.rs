//! Text-expansion laws: golden prompts, provenance counts and the opposite-rewrite involution.

use viewrefer::scenegen::{generate_dataset, resolve, GenConfig, GroundingSample};
use viewrefer::textexp::{
    build_opposite_template, build_rephrase_template, Expander, PhraseDictionary, Provenance,
};

use super::{exact, Check};

pub const COUCH: &str =
    "Facing the front of the couch, pick the table that is to the right of the couch";

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// `count` generated samples whose view-dependent share is `vd_fraction`.
pub fn utterances(count: usize, vd_fraction: f64, seed: u64) -> Vec<GroundingSample> {
    let config = GenConfig {
        samples: count,
        view_dependent_fraction: vd_fraction,
        ..GenConfig::default()
    };
    generate_dataset(&config, seed).unwrap()
}

/// Both prompt builders reproduce the golden files byte for byte.
pub fn golden_templates() -> Vec<Check> {
    let d = PhraseDictionary::default();
    let mut checks = vec![
        exact(
            "opposite prompt for the couch/table example matches its golden file",
            build_opposite_template(COUCH, &d.opposite_phrases(COUCH)).unwrap()
                == golden("opposite_couch.txt"),
        ),
        exact(
            "opposite prompt with a single phrase matches its golden file",
            build_opposite_template("left of the bed", &d.opposite_phrases("left of the bed"))
                .unwrap()
                == golden("opposite_single.txt"),
        ),
    ];
    for (text, file) in [
        (COUCH, "rephrase_couch.txt"),
        ("The chair nearest to the window", "rephrase_nearest.txt"),
        (
            "With back to the lamp, choose the box behind the lamp",
            "rephrase_behind.txt",
        ),
    ] {
        checks.push(exact(
            "rephrase prompt matches its golden file",
            build_rephrase_template(text).unwrap() == golden(file),
        ));
    }
    checks
}

/// Provenance counts of expanded sets: view-dependent sets hold the original, one
/// opposite text and an even split of paraphrases; view-independent sets hold the
/// original and `M - 1` paraphrases of it.
pub fn counting_rules(per_case: usize) -> Vec<Check> {
    let expander = Expander::fallback();
    let mut checks = Vec::new();
    let cases: [(bool, &[usize]); 2] = [(true, &[2, 4, 6]), (false, &[1, 4])];
    for (view_dependent, ms) in cases {
        let fraction = if view_dependent { 1.0 } else { 0.0 };
        let data = utterances(per_case, fraction, 12);
        for &m in ms {
            let mut failures = Vec::new();
            for s in &data {
                let set = expander.expand(&s.utterance, m).unwrap();
                let counts = [
                    set.count(Provenance::Original),
                    set.count(Provenance::Opposite),
                    set.count(Provenance::ParaphraseOfOriginal),
                    set.count(Provenance::ParaphraseOfOpposite),
                ];
                let expected = if view_dependent {
                    [1, 1, (m - 2) / 2, (m - 2) / 2]
                } else {
                    [1, 0, m - 1, 0]
                };
                if set.len() != m || set.texts[0] != s.utterance || counts != expected {
                    failures.push(format!("{:?}: {counts:?} != {expected:?}", s.utterance));
                }
            }
            let kind = if view_dependent {
                "view-dependent"
            } else {
                "view-independent"
            };
            checks.push(Check {
                property: "provenance counts of expanded sets",
                passed: failures.is_empty() && !data.is_empty(),
                detail: format!(
                    "{kind}, M = {m}: {} of {} sets correct{}",
                    data.len() - failures.len(),
                    data.len(),
                    failures
                        .first()
                        .map_or(String::new(), |f| format!(", first failure {f}"))
                ),
            });
        }
    }
    checks
}

/// Rewriting twice restores the utterance, and the opposite text still resolves to the
/// same object under the mirrored relation.
pub fn opposite_involution(count: usize) -> Vec<Check> {
    let d = PhraseDictionary::default();
    let data = utterances(count, 1.0, 13);
    let mut involution = 0;
    let mut referent = 0;
    let mut view_dependent = 0;
    for s in &data {
        view_dependent += usize::from(s.view_dependent);
        let Ok(opposite) = d.rewrite_opposite(&s.utterance) else {
            continue;
        };
        if d.rewrite_opposite(&opposite).ok().as_deref() == Some(s.utterance.as_str()) {
            involution += 1;
        }
        let mut flipped = s.clone();
        flipped.utterance = opposite;
        if resolve(&flipped)
            .is_some_and(|r| r.target == s.target_index && r.relation == s.relation.mirrored())
        {
            referent += 1;
        }
    }
    vec![
        Check {
            property: "opposite rewrite is an involution",
            passed: view_dependent == count && involution == count,
            detail: format!("{involution} of {count} view-dependent utterances ({view_dependent} generated as view-dependent)"),
        },
        Check {
            property: "opposite rewrite keeps the referent under the mirrored relation",
            passed: referent == count,
            detail: format!("{referent} of {count} utterances"),
        },
    ]
}

pub fn all_checks() -> Vec<Check> {
    let mut out = golden_templates();
    out.extend(counting_rules(200));
    out.extend(opposite_involution(1000));
    out
}
