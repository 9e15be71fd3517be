use ndarray::Array2;

use crate::scalar::Scalar;

use super::params::{Gradients, ParamSet};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, lr: T) -> Self {
        let zeros: Vec<Array2<T>> = params.ids().map(|id| Array2::zeros(params.get(id).raw_dim())).collect();
        Self { lr, beta1: T::of(0.9), beta2: T::of(0.999), eps: T::of(1e-8), m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) {
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((id, g), (m, v)) in params.ids().zip(grads.iter()).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(&mut *m).and(&mut *v).and(g).for_each(|m, v, &g| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
            });
            ndarray::Zip::from(params.get_mut(id)).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p = *p - lr * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
    }
}
