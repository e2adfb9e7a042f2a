use ndarray::Zip;

use super::config::{ModelConfig, TrainConfig};
use super::params::Params;
use super::Scalar;

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: Params<T>,
    pub v: Params<T>,
    /// Number of updates applied.
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        Adam {
            m: Params::zeros(cfg),
            v: Params::zeros(cfg),
            t: 0,
        }
    }

    /// Applies one update with learning rate `lr`.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: f64, tc: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - tc.beta1.powi(self.t as i32);
        let bc2 = 1.0 - tc.beta2.powi(self.t as i32);
        let b1 = T::lit(tc.beta1);
        let b2 = T::lit(tc.beta2);
        let one = T::one();
        let step = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(tc.eps);
        let decay = T::lit(1.0 - lr * tc.weight_decay);

        let ps = params.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((_, mut p), (_, g)), ((_, mut m), (_, mut v))) in
            ps.into_iter().zip(gs).zip(ms.into_iter().zip(vs))
        {
            let decays = p.ndim() == 2 && tc.weight_decay > 0.0;
            Zip::from(&mut p)
                .and(&g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    if decays {
                        *p *= decay;
                    }
                    *p -= step * *m / ((*v * inv_bc2).sqrt() + eps);
                });
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut Params<T>, max_norm: f64) -> f64 {
    let norm = grads.sum_squares().sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::lit(max_norm / norm));
    }
    norm
}
