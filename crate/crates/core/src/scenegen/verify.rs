//! Ground-truth oracle: recomputes each sample's relation from raw coordinates.

use super::scene::{
    relation_direction, ClassId, GroundingSample, Perspective, Relation, SceneObject,
};
use super::utterance::parse;

/// Distances or side offsets closer than this count as ties.
pub const TIE_TOLERANCE: f64 = 1e-3;

fn ground(o: &SceneObject) -> [f64; 2] {
    [o.center[0], o.center[1]]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: [f64; 2]) -> f64 {
    dot(a, a).sqrt()
}

/// Distance from `p` to segment `ab`, and the clamped-free position `t` of the foot along it.
pub(crate) fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        dot(sub(p, a), ab) / len2
    } else {
        0.0
    };
    let tc = t.clamp(0.0, 1.0);
    let foot = [a[0] + tc * ab[0], a[1] + tc * ab[1]];
    (norm(sub(p, foot)), t)
}

/// Index of the unique minimum, when the runner-up is more than the tie tolerance away.
fn unique_min(values: &[(usize, f64)]) -> Option<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    match sorted.as_slice() {
        [] => None,
        [only] => Some(only.0),
        [best, second, ..] => (second.1 - best.1 > TIE_TOLERANCE).then_some(best.0),
    }
}

/// The referenced objects an utterance resolves to in its scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolution {
    pub relation: Relation,
    pub perspective: Option<Perspective>,
    pub target_class: ClassId,
    pub anchors: Vec<usize>,
    pub target: usize,
}

/// Resolves the utterance against the scene geometry, or `None` when the reference is
/// ill-formed or not unique.
pub fn resolve(sample: &GroundingSample) -> Option<Resolution> {
    let parsed = parse(&sample.utterance);
    let relation = parsed.relation?;
    let objects = &sample.objects;
    let count_of = |c: ClassId| objects.iter().filter(|o| o.class == c).count();

    let mut mentioned = parsed.classes.clone();
    mentioned.sort();
    mentioned.dedup();
    let target_classes: Vec<ClassId> = mentioned
        .iter()
        .copied()
        .filter(|&c| count_of(c) >= 2)
        .collect();
    let anchor_classes: Vec<ClassId> = mentioned
        .iter()
        .copied()
        .filter(|&c| count_of(c) == 1)
        .collect();
    if target_classes.len() != 1 || anchor_classes.len() != relation.anchor_count() {
        return None;
    }
    if mentioned.len() != target_classes.len() + anchor_classes.len() {
        return None;
    }
    let target_class = target_classes[0];
    // anchors in order of first mention
    let mut anchors = Vec::new();
    for c in &parsed.classes {
        if anchor_classes.contains(c) {
            let idx = objects.iter().position(|o| o.class == *c)?;
            if !anchors.contains(&idx) {
                anchors.push(idx);
            }
        }
    }
    let candidates: Vec<usize> = (0..objects.len())
        .filter(|&i| objects[i].class == target_class)
        .collect();
    let anchor = ground(&objects[anchors[0]]);

    let target = match relation {
        Relation::Left | Relation::Right | Relation::Front | Relation::Behind => {
            let perspective = parsed.perspective?;
            let look = perspective.looking_direction(objects[anchors[0]].facing);
            let u = relation_direction(relation, look)?;
            let offsets: Vec<(usize, f64)> = candidates
                .iter()
                .map(|&i| (i, dot(sub(ground(&objects[i]), anchor), u)))
                .collect();
            if offsets.iter().any(|(_, s)| s.abs() <= TIE_TOLERANCE) {
                return None;
            }
            let on_side: Vec<usize> = offsets
                .iter()
                .filter(|(_, s)| *s > 0.0)
                .map(|(i, _)| *i)
                .collect();
            if on_side.len() != 1 {
                return None;
            }
            on_side[0]
        }
        Relation::Nearest | Relation::Farthest => {
            let sign = if relation == Relation::Nearest {
                1.0
            } else {
                -1.0
            };
            let d: Vec<(usize, f64)> = candidates
                .iter()
                .map(|&i| (i, sign * norm(sub(ground(&objects[i]), anchor))))
                .collect();
            unique_min(&d)?
        }
        Relation::Between => {
            let other = ground(&objects[anchors[1]]);
            let d: Vec<(usize, f64)> = candidates
                .iter()
                .map(|&i| (i, segment_distance(ground(&objects[i]), anchor, other).0))
                .collect();
            let best = unique_min(&d)?;
            let (_, t) = segment_distance(ground(&objects[best]), anchor, other);
            if !(0.0 < t && t < 1.0) {
                return None;
            }
            best
        }
    };
    Some(Resolution {
        relation,
        perspective: parsed.perspective,
        target_class,
        anchors,
        target,
    })
}

/// True when the sample is well-formed and its stated target is the unique referent.
pub fn verify_sample(sample: &GroundingSample) -> bool {
    let k = sample.objects.len();
    if sample.target_index >= k {
        return false;
    }
    let well_formed = sample.objects.iter().all(|o| {
        (norm(o.facing) - 1.0).abs() <= 1e-6
            && o.extent.iter().all(|&e| e > 0.0 && e.is_finite())
            && o.center.iter().all(|c| c.is_finite())
    });
    if !well_formed {
        return false;
    }
    let Some(r) = resolve(sample) else {
        return false;
    };
    let view_dependent = r.relation.is_view_dependent() && r.perspective.is_some();
    r.target == sample.target_index
        && r.relation == sample.relation
        && view_dependent == sample.view_dependent
        && sample.anchor_index.is_none_or(|a| a == r.anchors[0])
        && sample
            .secondary_anchor_index
            .is_none_or(|a| r.anchors.get(1) == Some(&a))
}
