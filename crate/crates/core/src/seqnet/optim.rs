use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// ADAM moment estimates for every parameter of one store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = |id| {
            let t: &Tensor = store.get(id);
            Tensor::zeros(t.rows(), t.cols())
        };
        Self {
            lr,
            step: 0,
            m: store.ids().map(zeros).collect(),
            v: store.ids().map(zeros).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Frozen tensors and parameters without a
    /// gradient slot are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (id, g) in grads.iter() {
            if store.is_frozen(id) {
                continue;
            }
            let i = id.index();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqnet::params::ParamId;

    fn one_param(value: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::row_vector(vec![value, value]), false);
        (s, id)
    }

    fn grads_for(store: &ParamStore, id: ParamId, g: Vec<f64>) -> Gradients {
        let mut grads = Gradients::new(store.len());
        grads.accumulate(id, &Tensor::row_vector(g));
        grads
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = one_param(0.5);
        let mut adam = Adam::new(&s, 1e-3);
        let g = grads_for(&s, id, vec![0.0, 0.0]);
        adam.step(&mut s, &g);
        assert_eq!(s.get(id).data(), &[0.5, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let (mut s, id) = one_param(0.0);
        let mut adam = Adam::new(&s, 1e-3);
        let g = grads_for(&s, id, vec![0.3, -2.0]);
        adam.step(&mut s, &g);
        // m̂ = g, v̂ = g², step = lr·g/(|g|+ε)
        let expect0 = -1e-3 * 0.3 / (0.3 + EPSILON);
        let expect1 = 1e-3 * 2.0 / (2.0 + EPSILON);
        assert!((s.get(id).data()[0] - expect0).abs() < 1e-15);
        assert!((s.get(id).data()[1] - expect1).abs() < 1e-15);
        assert!((s.get(id).data()[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn two_step_textbook_trajectory() {
        // Hand-rolled two steps with constant gradient g = 0.5, lr = 0.1.
        let (g, lr) = (0.5_f64, 0.1_f64);
        let mut theta = 1.0_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9_f64.powi(t));
            let vh = v / (1.0 - 0.999_f64.powi(t));
            theta -= lr * mh / (vh.sqrt() + 1e-8);
        }
        let (mut s, id) = one_param(1.0);
        let mut adam = Adam::new(&s, lr);
        for _ in 0..2 {
            let grads = grads_for(&s, id, vec![g, g]);
            adam.step(&mut s, &grads);
        }
        assert!((s.get(id).data()[0] - theta).abs() < 1e-14);
        // with constant gradient the bias-corrected step is exactly lr each time
        assert!((theta - (1.0 - 2.0 * lr * g / (g + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn frozen_tensors_are_skipped() {
        let mut s = ParamStore::new();
        let id = s.add("frozen", Tensor::row_vector(vec![1.0]), true);
        let mut adam = Adam::new(&s, 1.0);
        let mut grads = Gradients::new(1);
        grads.accumulate(id, &Tensor::row_vector(vec![5.0]));
        adam.step(&mut s, &grads);
        assert_eq!(s.get(id).data(), &[1.0]);
    }
}
