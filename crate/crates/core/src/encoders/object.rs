use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::{concat, Mlp, ParamGroup, ParamId, ParamStore, Scope, Tensor, Var};
use crate::scenegen::{ClassId, MultiViewScene};

/// Center (3), facing (2) and extent (3) per object.
pub const GEOMETRY_FEATURES: usize = 8;

/// Geometry plus class embedding through a two-layer MLP, applied per object per view.
#[derive(Clone, Debug)]
pub struct ObjectEncoder {
    pub class_embedding: ParamId,
    pub mlp: Mlp,
    pub dim: usize,
}

impl ObjectEncoder {
    pub fn new(store: &mut ParamStore, dim: usize, class_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let classes = ClassId::count();
        let class_embedding = store.add_xavier(
            "object.class_embedding",
            &[classes, class_dim],
            classes,
            class_dim,
            ParamGroup::Other,
            rng,
        );
        let mlp = Mlp::new(
            store,
            "object.mlp",
            (GEOMETRY_FEATURES + class_dim, dim, dim),
            ParamGroup::Other,
            rng,
        );
        Self {
            class_embedding,
            mlp,
            dim,
        }
    }

    /// `F_v` of shape `[N, K, D]`.
    pub fn encode<'t>(&self, s: Scope<'t>, scene: &MultiViewScene) -> Result<Var<'t>> {
        let (n, k) = (scene.view_count(), scene.object_count());
        if k == 0 {
            return Err(Error::EmptyScene);
        }
        let geometry = s.constant(geometry_features(scene));
        let class_ids: Vec<usize> = (0..n)
            .flat_map(|_| scene.classes.iter().map(|c| c.0))
            .collect();
        let classes = s.param(self.class_embedding).index_select(&class_ids);
        let x = concat(&[geometry, classes], 1)?;
        self.mlp.forward(s, x)?.reshape(&[n, k, self.dim])
    }
}

/// `[N * K, 8]` rows of rotated center, rotated facing and extent.
pub fn geometry_features(scene: &MultiViewScene) -> Tensor {
    let mut data =
        Vec::with_capacity(scene.view_count() * scene.object_count() * GEOMETRY_FEATURES);
    for view in &scene.views {
        for (i, extent) in scene.extents.iter().enumerate() {
            data.extend_from_slice(&view.centers[i]);
            data.extend_from_slice(&view.facings[i]);
            data.extend_from_slice(extent);
        }
    }
    let rows = data.len() / GEOMETRY_FEATURES;
    Tensor::new(vec![rows, GEOMETRY_FEATURES], data).expect("row-major geometry")
}
