//! Named parameter storage, seeded initialization, and optimizer parameter groups.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

/// Optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Fusion transformer blocks.
    Fusion,
    /// Everything else: encoders, heads, prototypes, context.
    Other,
}

#[derive(Clone, Debug)]
pub struct Param {
    name: String,
    value: Arc<Tensor>,
    grad: Tensor,
    group: ParamGroup,
    trainable: bool,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub(crate) fn value_arc(&self) -> &Arc<Tensor> {
        &self.value
    }

    /// Mutable access for optimizer updates; copies only if a tape still holds the value.
    pub fn value_mut(&mut self) -> &mut Tensor {
        Arc::make_mut(&mut self.value)
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn group(&self) -> ParamGroup {
        self.group
    }

    /// Frozen parameters (the context balance factor) are never differentiated or updated.
    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> ParamId {
        self.insert(name.into(), value, group, true)
    }

    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, ParamGroup::Other, false)
    }

    fn insert(
        &mut self,
        name: String,
        value: Tensor,
        group: ParamGroup,
        trainable: bool,
    ) -> ParamId {
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            grad: Tensor::zeros(value.shape().to_vec()),
            value: Arc::new(value),
            group,
            trainable,
        });
        id
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    pub fn add_xavier(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        group: ParamGroup,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::from_parts(shape.to_vec(), data), group)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds a backward sweep's parameter gradients, scaled by `weight`.
    pub fn accumulate(&mut self, grads: &Gradients, weight: f64) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            if !p.trainable {
                continue;
            }
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += weight * b;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Snapshot as (name, tensor) pairs in insertion order.
    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), (*p.value).clone()))
            .collect()
    }

    /// Overwrites values by name; every stored parameter must be present with its shape.
    pub fn load_named(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let lookup: BTreeMap<&str, &Tensor> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for p in &mut self.params {
            let t = lookup
                .get(p.name.as_str())
                .ok_or_else(|| Error::NotFound(format!("parameter {} in checkpoint", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::shape("load parameter", p.value.shape(), t.shape()));
            }
            p.value = Arc::new((*t).clone());
        }
        Ok(())
    }
}
