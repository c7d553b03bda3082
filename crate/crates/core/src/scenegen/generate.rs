//! Seeded generator for grounding samples with uniquely determined targets.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{
    relation_direction, rotate2, rotate_point, ClassId, GroundingSample, Perspective, Relation,
    SceneObject, CLASS_SIZES,
};
use super::utterance::render;
use super::verify::{segment_distance, verify_sample};
use crate::error::{Error, Result};

/// Smallest center-to-center distance the jittered grid can produce.
pub const MIN_SPACING: f64 = 0.5;

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub samples: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_distractors: usize,
    pub max_distractors: usize,
    /// Probability that a sample uses a left/right/front/behind relation.
    pub view_dependent_fraction: f64,
    /// Clearance between the target and every distractor under the relation, meters.
    pub relation_margin: f64,
    /// Grid cells per side of the square room.
    pub grid_cells: usize,
    pub cell_size: f64,
    pub cell_jitter: f64,
    /// Facings are drawn from this many directions evenly spaced from `+x`, so furniture
    /// lines up with the room axes; 0 draws a continuous angle.
    pub facing_directions: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            min_objects: 4,
            max_objects: 12,
            min_distractors: 1,
            max_distractors: 6,
            view_dependent_fraction: 0.5,
            relation_margin: 0.3,
            grid_cells: 7,
            cell_size: 1.0,
            cell_jitter: 0.25,
            facing_directions: 4,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.min_distractors < 1 {
            return fail("at least one same-class distractor is required".into());
        }
        if self.min_distractors > self.max_distractors {
            return fail("min_distractors exceeds max_distractors".into());
        }
        if self.min_objects > self.max_objects {
            return fail("min_objects exceeds max_objects".into());
        }
        if self.min_objects < self.min_distractors + 2 {
            return fail(format!(
                "K = {} objects cannot hold a target, {} distractors and an anchor (K < distractors + 2)",
                self.min_objects, self.min_distractors
            ));
        }
        if self.grid_cells * self.grid_cells < self.max_objects {
            return fail(format!(
                "a {0}x{0} grid cannot hold {1} objects",
                self.grid_cells, self.max_objects
            ));
        }
        if self.cell_size - 2.0 * self.cell_jitter < MIN_SPACING - 1e-12 {
            return fail(format!(
                "cell jitter leaves less than {MIN_SPACING} m spacing"
            ));
        }
        if !(0.0..=1.0).contains(&self.view_dependent_fraction) {
            return fail("view_dependent_fraction must lie in [0, 1]".into());
        }
        if self.relation_margin < 0.0 {
            return fail("relation_margin must be nonnegative".into());
        }
        // between needs two anchors and a filler-free minimum of four objects
        let classes_needed = 1 + 2 + 1;
        if ClassId::count() < classes_needed {
            return fail("class vocabulary too small".into());
        }
        Ok(())
    }
}

/// Independent stream per (seed, index) so samples can be generated in any order.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

pub fn generate_dataset(config: &GenConfig, seed: u64) -> Result<Vec<GroundingSample>> {
    generate_range(config, seed, 0, config.samples)
}

/// Samples `start..start + count` of the stream defined by `(config, seed)`.
pub fn generate_range(
    config: &GenConfig,
    seed: u64,
    start: usize,
    count: usize,
) -> Result<Vec<GroundingSample>> {
    config.validate()?;
    (start..start + count)
        .map(|i| generate_sample(config, &mut sample_rng(seed, i as u64)))
        .collect()
}

fn random_facing<R: Rng>(rng: &mut R, directions: usize) -> [f64; 2] {
    let a = if directions == 0 {
        rng.gen_range(0.0..2.0 * PI)
    } else {
        2.0 * PI * rng.gen_range(0..directions) as f64 / directions as f64
    };
    let (sin, cos) = a.sin_cos();
    // snap exact zeros so axis-aligned facings have no rounding residue
    let clean = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
    [clean(cos), clean(sin)]
}

fn make_object<R: Rng>(
    rng: &mut R,
    config: &GenConfig,
    class: ClassId,
    ground: [f64; 2],
) -> SceneObject {
    let base = CLASS_SIZES[class.0];
    let extent = [
        base[0] * rng.gen_range(0.85..1.15),
        base[1] * rng.gen_range(0.85..1.15),
        base[2] * rng.gen_range(0.85..1.15),
    ];
    SceneObject {
        class,
        center: [ground[0], ground[1], extent[2] / 2.0],
        facing: random_facing(rng, config.facing_directions),
        extent,
    }
}

struct Roles {
    target: usize,
    distractors: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn assign_roles<R: Rng>(
    rng: &mut R,
    config: &GenConfig,
    relation: Relation,
    perspective: Option<Perspective>,
    anchors: &[usize],
    positions: &[[f64; 2]],
    anchor_facing: [f64; 2],
    free: &[usize],
    distractors: usize,
) -> Option<Roles> {
    let margin = config.relation_margin;
    let a = positions[anchors[0]];
    let offset = |i: usize| [positions[i][0] - a[0], positions[i][1] - a[1]];
    match relation {
        Relation::Left | Relation::Right | Relation::Front | Relation::Behind => {
            let look = perspective?.looking_direction(anchor_facing);
            let u = relation_direction(relation, look)?;
            let score = |i: usize| offset(i)[0] * u[0] + offset(i)[1] * u[1];
            let sides: Vec<usize> = free
                .iter()
                .copied()
                .filter(|&i| score(i) > margin)
                .collect();
            let mut others: Vec<usize> = free
                .iter()
                .copied()
                .filter(|&i| score(i) < -margin)
                .collect();
            if sides.is_empty() || others.len() < distractors {
                return None;
            }
            let target = *sides.choose(rng)?;
            others.shuffle(rng);
            others.truncate(distractors);
            Some(Roles {
                target,
                distractors: others,
            })
        }
        Relation::Nearest | Relation::Farthest | Relation::Between => {
            let mut chosen = free.to_vec();
            chosen.shuffle(rng);
            chosen.truncate(distractors + 1);
            if chosen.len() < distractors + 1 {
                return None;
            }
            let metric = |i: usize| -> f64 {
                let o = offset(i);
                match relation {
                    Relation::Nearest => (o[0] * o[0] + o[1] * o[1]).sqrt(),
                    Relation::Farthest => -(o[0] * o[0] + o[1] * o[1]).sqrt(),
                    _ => segment_distance(positions[i], a, positions[anchors[1]]).0,
                }
            };
            chosen.sort_by(|&x, &y| metric(x).total_cmp(&metric(y)));
            let target = chosen[0];
            if metric(chosen[1]) - metric(target) < margin {
                return None;
            }
            if relation == Relation::Between {
                let (_, t) = segment_distance(positions[target], a, positions[anchors[1]]);
                if !(0.15..=0.85).contains(&t) {
                    return None;
                }
            }
            Some(Roles {
                target,
                distractors: chosen[1..].to_vec(),
            })
        }
    }
}

/// Draws one verified sample from `rng`.
pub fn generate_sample<R: Rng>(config: &GenConfig, rng: &mut R) -> Result<GroundingSample> {
    let view_relations = [
        Relation::Left,
        Relation::Right,
        Relation::Front,
        Relation::Behind,
    ];
    let other_relations = [Relation::Nearest, Relation::Farthest, Relation::Between];
    for _ in 0..MAX_ATTEMPTS {
        let k = rng.gen_range(config.min_objects..=config.max_objects);
        let view_dependent = rng.gen_bool(config.view_dependent_fraction);
        let relation = if view_dependent {
            *view_relations.choose(rng).expect("nonempty")
        } else {
            *other_relations.choose(rng).expect("nonempty")
        };
        let anchor_count = relation.anchor_count();
        let max_d = config
            .max_distractors
            .min(k.saturating_sub(1 + anchor_count));
        if max_d < config.min_distractors {
            continue;
        }
        let distractors = rng.gen_range(config.min_distractors..=max_d);
        let perspective = view_dependent.then(|| {
            if rng.gen_bool(0.5) {
                Perspective::Facing
            } else {
                Perspective::BackTo
            }
        });

        let mut classes: Vec<ClassId> = (0..ClassId::count()).map(ClassId).collect();
        classes.shuffle(rng);
        let target_class = classes[0];
        let anchor_classes = &classes[1..1 + anchor_count];
        let filler_classes = &classes[1 + anchor_count..];

        let n = config.grid_cells;
        let mut cells: Vec<usize> = (0..n * n).collect();
        cells.shuffle(rng);
        let half = (n as f64 - 1.0) / 2.0;
        let positions: Vec<[f64; 2]> = cells[..k]
            .iter()
            .map(|&c| {
                let (row, col) = ((c / n) as f64, (c % n) as f64);
                [
                    (col - half) * config.cell_size
                        + rng.gen_range(-config.cell_jitter..=config.cell_jitter),
                    (row - half) * config.cell_size
                        + rng.gen_range(-config.cell_jitter..=config.cell_jitter),
                ]
            })
            .collect();

        let anchors: Vec<usize> = (0..anchor_count).collect();
        let anchor_facing = random_facing(rng, config.facing_directions);
        let free: Vec<usize> = (anchor_count..k).collect();
        let Some(roles) = assign_roles(
            rng,
            config,
            relation,
            perspective,
            &anchors,
            &positions,
            anchor_facing,
            &free,
            distractors,
        ) else {
            continue;
        };

        let mut objects = Vec::with_capacity(k);
        for i in 0..k {
            let class = if i < anchor_count {
                anchor_classes[i]
            } else if i == roles.target || roles.distractors.contains(&i) {
                target_class
            } else {
                *filler_classes.choose(rng).expect("nonempty")
            };
            let mut o = make_object(rng, config, class, positions[i]);
            if i == 0 {
                o.facing = anchor_facing;
            }
            objects.push(o);
        }

        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(rng);
        let new_index = |old: usize| order.iter().position(|&o| o == old).expect("permutation");
        let shuffled: Vec<SceneObject> = order.iter().map(|&i| objects[i].clone()).collect();

        let utterance = render(
            rng,
            relation,
            perspective,
            target_class,
            anchor_classes[0],
            anchor_classes.get(1).copied(),
        );
        let sample = GroundingSample {
            objects: shuffled,
            utterance,
            target_index: new_index(roles.target),
            view_dependent,
            relation,
            anchor_index: Some(new_index(0)),
            secondary_anchor_index: (anchor_count == 2).then(|| new_index(1)),
        };
        if verify_sample(&sample) {
            return Ok(sample);
        }
    }
    Err(Error::Config(format!(
        "no valid sample after {MAX_ATTEMPTS} attempts; relax relation_margin or distractor counts"
    )))
}

/// Training-time transform: random rotation of the whole scene and per-object translation.
pub fn augment<R: Rng>(
    sample: &GroundingSample,
    rng: &mut R,
    rotate: bool,
    jitter: f64,
) -> GroundingSample {
    let mut out = sample.clone();
    let angle = if rotate {
        rng.gen_range(0.0..2.0 * PI)
    } else {
        0.0
    };
    for o in &mut out.objects {
        o.center = rotate_point(o.center, angle);
        o.facing = rotate2(o.facing, angle);
        if jitter > 0.0 {
            o.center[0] += rng.gen_range(-jitter..=jitter);
            o.center[1] += rng.gen_range(-jitter..=jitter);
        }
    }
    out
}
