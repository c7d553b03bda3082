use crate::numeric::{ParamGroup, ParamStore, Tensor};

/// Adam with decoupled weight decay over the trainable parameters of a store.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamW {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value().shape().to_vec()))
            .collect();
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the gradients accumulated in `store`; frozen parameters are skipped.
    pub fn step(&mut self, store: &mut ParamStore, lr: impl Fn(ParamGroup) -> f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            if !p.trainable() {
                continue;
            }
            let rate = lr(p.group());
            let grad = p.grad().data().to_vec();
            let m = self.first[slot].data_mut();
            let v = self.second[slot].data_mut();
            let value = p.value_mut().data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                value[i] -= rate * (update + self.weight_decay * value[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tape;

    fn store() -> (ParamStore, crate::numeric::ParamId, crate::numeric::ParamId) {
        let mut s = ParamStore::new();
        let w = s.add(
            "w",
            Tensor::new(vec![2], vec![1.0, -2.0]).unwrap(),
            ParamGroup::Other,
        );
        let a = s.add_frozen("alpha", Tensor::scalar(0.1));
        (s, w, a)
    }

    #[test]
    fn zero_gradient_only_decays() {
        let (mut s, w, a) = store();
        let mut opt = AdamW::new(&s, 0.9, 0.999, 1e-8, 0.0);
        opt.step(&mut s, |_| 0.1);
        assert_eq!(s.get(w).value().data(), &[1.0, -2.0]);
        let mut opt = AdamW::new(&s, 0.9, 0.999, 1e-8, 0.5);
        opt.step(&mut s, |_| 0.1);
        assert_eq!(s.get(w).value().data(), &[1.0 * 0.95, -2.0 * 0.95]);
        assert_eq!(s.get(a).value().item(), 0.1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, w, a) = store();
        let tape = Tape::new();
        let x = tape.param(&s, w);
        let al = tape.param(&s, a);
        let loss = x.mul(x).unwrap().sum().mul(al).unwrap();
        let g = tape.backward(loss).unwrap();
        s.accumulate(&g, 1.0);
        let mut opt = AdamW::new(&s, 0.9, 0.999, 1e-8, 0.0);
        opt.step(&mut s, |_| 0.01);
        let v = s.get(w).value().data().to_vec();
        assert!((v[0] - 0.99).abs() < 1e-6 && (v[1] + 1.99).abs() < 1e-6);
        assert_eq!(s.get(a).value().item(), 0.1);
    }
}
