use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Closed object-class vocabulary. Every name is a single lowercase token.
pub const CLASS_NAMES: [&str; 16] = [
    "chair", "table", "couch", "bed", "lamp", "desk", "cabinet", "shelf", "door", "window", "sink",
    "toilet", "plant", "monitor", "box", "pillow",
];

/// Typical footprint and height per class, meters.
pub(crate) const CLASS_SIZES: [[f64; 3]; 16] = [
    [0.5, 0.5, 0.9],
    [1.2, 0.8, 0.75],
    [2.0, 0.9, 0.8],
    [2.0, 1.6, 0.6],
    [0.3, 0.3, 1.5],
    [1.4, 0.7, 0.75],
    [0.9, 0.5, 1.1],
    [1.0, 0.35, 1.8],
    [0.9, 0.1, 2.0],
    [1.2, 0.1, 1.2],
    [0.6, 0.5, 0.9],
    [0.45, 0.7, 0.8],
    [0.4, 0.4, 1.0],
    [0.55, 0.2, 0.4],
    [0.4, 0.4, 0.4],
    [0.5, 0.3, 0.2],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassId(pub usize);

impl ClassId {
    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.0]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        CLASS_NAMES.iter().position(|&c| c == name).map(ClassId)
    }

    pub fn count() -> usize {
        CLASS_NAMES.len()
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ClassId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ClassId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        ClassId::from_name(&name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown object class {name:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: ClassId,
    pub center: [f64; 3],
    /// Unit vector in the ground plane pointing out of the object's front.
    pub facing: [f64; 2],
    pub extent: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Left,
    Right,
    Front,
    Behind,
    Nearest,
    Farthest,
    Between,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::Left,
        Relation::Right,
        Relation::Front,
        Relation::Behind,
        Relation::Nearest,
        Relation::Farthest,
        Relation::Between,
    ];

    /// Relations whose truth depends on the speaker's viewpoint.
    pub fn is_view_dependent(self) -> bool {
        matches!(
            self,
            Relation::Left | Relation::Right | Relation::Front | Relation::Behind
        )
    }

    /// The relation that describes the same target from the opposite viewpoint.
    pub fn mirrored(self) -> Self {
        match self {
            Relation::Left => Relation::Right,
            Relation::Right => Relation::Left,
            Relation::Front => Relation::Behind,
            Relation::Behind => Relation::Front,
            other => other,
        }
    }

    pub fn anchor_count(self) -> usize {
        if self == Relation::Between {
            2
        } else {
            1
        }
    }
}

/// Where the speaker stands relative to the anchor's front.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perspective {
    /// Speaker faces the anchor's front: looking direction is `-facing`.
    Facing,
    /// Speaker stands at the anchor's front looking away: looking direction is `+facing`.
    BackTo,
}

impl Perspective {
    pub fn opposite(self) -> Self {
        match self {
            Perspective::Facing => Perspective::BackTo,
            Perspective::BackTo => Perspective::Facing,
        }
    }

    pub fn looking_direction(self, anchor_facing: [f64; 2]) -> [f64; 2] {
        match self {
            Perspective::Facing => [-anchor_facing[0], -anchor_facing[1]],
            Perspective::BackTo => anchor_facing,
        }
    }
}

/// Ground-plane unit vector that `relation` points along for a speaker looking along `look`.
///
/// Right is the look direction turned clockwise; front points back toward the speaker.
pub fn relation_direction(relation: Relation, look: [f64; 2]) -> Option<[f64; 2]> {
    let right = [look[1], -look[0]];
    match relation {
        Relation::Right => Some(right),
        Relation::Left => Some([-right[0], -right[1]]),
        Relation::Front => Some([-look[0], -look[1]]),
        Relation::Behind => Some(look),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingSample {
    pub objects: Vec<SceneObject>,
    pub utterance: String,
    pub target_index: usize,
    pub view_dependent: bool,
    pub relation: Relation,
    pub anchor_index: Option<usize>,
    /// Second anchor, only for `between`.
    #[serde(default)]
    pub secondary_anchor_index: Option<usize>,
}

impl GroundingSample {
    /// Number of same-class objects besides the target.
    pub fn distractor_count(&self) -> usize {
        let class = self.objects[self.target_index].class;
        self.objects.iter().filter(|o| o.class == class).count() - 1
    }
}

/// Object geometry of one rotated view; classes and extents are shared across views.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub angle: f64,
    pub centers: Vec<[f64; 3]>,
    pub facings: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewScene {
    pub classes: Vec<ClassId>,
    pub extents: Vec<[f64; 3]>,
    pub views: Vec<View>,
}

impl MultiViewScene {
    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn object_count(&self) -> usize {
        self.classes.len()
    }
}

/// Angle of view `n` out of `count`, evenly spaced around the vertical axis.
pub fn view_angle(n: usize, count: usize) -> f64 {
    2.0 * PI * n as f64 / count as f64
}

pub fn rotate2(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

pub fn rotate_point(p: [f64; 3], angle: f64) -> [f64; 3] {
    let xy = rotate2([p[0], p[1]], angle);
    [xy[0], xy[1], p[2]]
}

/// Rotates the scene about the vertical axis into `count` evenly spaced views.
pub fn rotate_views(sample: &GroundingSample, count: usize) -> Result<MultiViewScene> {
    rotate_objects(&sample.objects, count)
}

pub fn rotate_objects(objects: &[SceneObject], count: usize) -> Result<MultiViewScene> {
    if count < 1 {
        return Err(Error::Config("view count must be at least 1".into()));
    }
    let views = (0..count)
        .map(|n| {
            let angle = view_angle(n, count);
            if n == 0 {
                return View {
                    angle,
                    centers: objects.iter().map(|o| o.center).collect(),
                    facings: objects.iter().map(|o| o.facing).collect(),
                };
            }
            View {
                angle,
                centers: objects
                    .iter()
                    .map(|o| rotate_point(o.center, angle))
                    .collect(),
                facings: objects.iter().map(|o| rotate2(o.facing, angle)).collect(),
            }
        })
        .collect();
    Ok(MultiViewScene {
        classes: objects.iter().map(|o| o.class).collect(),
        extents: objects.iter().map(|o| o.extent).collect(),
        views,
    })
}
