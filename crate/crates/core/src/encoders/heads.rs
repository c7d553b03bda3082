use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::{Linear, ParamGroup, ParamStore, Scope, Var};
use crate::scenegen::ClassId;

/// Auxiliary classifiers: target class from each text's `[GLO]` token, and each object's class.
#[derive(Clone, Debug)]
pub struct ClassHeads {
    pub text: Linear,
    pub object: Linear,
}

impl ClassHeads {
    pub fn new(store: &mut ParamStore, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let c = ClassId::count();
        Self {
            text: Linear::new(store, "heads.text", dim, c, ParamGroup::Other, rng),
            object: Linear::new(store, "heads.object", dim, c, ParamGroup::Other, rng),
        }
    }

    /// `[M, C]` from `F_t [M, L, D]`.
    pub fn text_logits<'t>(&self, s: Scope<'t>, f_t: Var<'t>) -> Result<Var<'t>> {
        let shape = f_t.shape();
        if shape.len() != 3 {
            return Err(Error::shape(
                "text_class_head",
                &shape,
                &[0, 0, self.text.in_dim],
            ));
        }
        let glo = f_t.narrow(1, 0, 1).reshape(&[shape[0], shape[2]])?;
        self.text.forward(s, glo)
    }

    /// `[N, K, C]` from `F_v [N, K, D]`.
    pub fn object_logits<'t>(&self, s: Scope<'t>, f_v: Var<'t>) -> Result<Var<'t>> {
        self.object.forward(s, f_v)
    }
}
