//! Synthetic grounding benchmark: oriented-object scenes, relation utterances with a
//! unique referent, and the N-view rotation of scene coordinates.

pub mod generate;
pub mod io;
pub mod scene;
pub mod utterance;
pub mod verify;

pub use generate::{augment, generate_dataset, generate_range, GenConfig};
pub use io::{read_dataset, write_dataset};
pub use scene::{
    rotate_views, view_angle, ClassId, GroundingSample, MultiViewScene, Perspective, Relation,
    SceneObject, View, CLASS_NAMES,
};
pub use verify::{resolve, verify_sample};

/// View whose rotation turns the speaker's looking direction closest to `+y`.
///
/// Only defined for view-dependent samples; ties resolve to the lowest view index.
pub fn canonical_view(sample: &GroundingSample, views: usize) -> Option<usize> {
    let r = resolve(sample)?;
    let perspective = r.perspective.filter(|_| r.relation.is_view_dependent())?;
    let look = perspective.looking_direction(sample.objects[r.anchors[0]].facing);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for n in 0..views {
        let rotated = scene::rotate2(look, view_angle(n, views));
        if rotated[1] > best_score + 1e-12 {
            best = n;
            best_score = rotated[1];
        }
    }
    Some(best)
}
