//! Adam optimizer with bias correction. Moment buffers are serialized with
//! checkpoints so a resumed run continues the exact trajectory.

use ndarray::ArrayD;

use super::params::{Grads, ParamSet};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(ps: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<ArrayD<f64>> = (0..ps.len())
            .map(|i| ArrayD::zeros(ps.value(super::params::ParamId(i)).raw_dim()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, ps: &mut ParamSet, grads: &Grads) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |mv, &gv| *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv);
            v.zip_mut_with(g, |vv, &gv| {
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv
            });
            let value = ps.value_mut(super::params::ParamId(i));
            ndarray::Zip::from(value).and(&*m).and(&*v).for_each(|p, &mv, &vv| {
                let mhat = mv / bc1;
                let vhat = vv / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            });
        }
    }
}
