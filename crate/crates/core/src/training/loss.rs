use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::ForwardOutput;
use crate::numeric::Var;

/// Loss terms of one sample or averaged over many.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ref: f64,
    pub l_text: f64,
    pub l_3d: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add_scaled(&mut self, other: &LossBreakdown, w: f64) {
        self.l_ref += w * other.l_ref;
        self.l_text += w * other.l_text;
        self.l_3d += w * other.l_3d;
        self.total += w * other.total;
    }

    pub fn is_finite(&self) -> bool {
        self.l_ref.is_finite()
            && self.l_text.is_finite()
            && self.l_3d.is_finite()
            && self.total.is_finite()
    }
}

/// `L = L_ref + beta * L_text + gamma * L_3D`.
///
/// `L_ref` is the cross-entropy of the aggregated logits against the target index, `L_text`
/// the cross-entropy of each text's class prediction against the target's class (mean over
/// texts), and `L_3D` the per-object class cross-entropy (mean over views and objects).
pub fn loss<'t>(
    out: &ForwardOutput<'t>,
    target: usize,
    target_class: usize,
    object_classes: &[usize],
    beta: f64,
    gamma: f64,
) -> Result<(Var<'t>, LossBreakdown)> {
    let k = out.aggregated.shape()[0];
    let l_ref = out.aggregated.reshape(&[1, k])?.cross_entropy(&[target])?;

    let m = out.text_logits.shape()[0];
    let l_text = out.text_logits.cross_entropy(&vec![target_class; m])?;

    let shape = out.object_logits.shape();
    let (n, c) = (shape[0], shape[2]);
    let labels: Vec<usize> = (0..n)
        .flat_map(|_| object_classes.iter().copied())
        .collect();
    let l_3d = out
        .object_logits
        .reshape(&[n * shape[1], c])?
        .cross_entropy(&labels)?;

    let total = l_ref.add(l_text.scale(beta))?.add(l_3d.scale(gamma))?;
    let breakdown = LossBreakdown {
        l_ref: l_ref.value().item(),
        l_text: l_text.value().item(),
        l_3d: l_3d.value().item(),
        total: total.value().item(),
    };
    Ok((total, breakdown))
}
