use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

use super::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named dense parameters, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Array2<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// One gradient array per parameter of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Array2<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Self { grads: params.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.grads[id.0]
    }

    pub fn add(&mut self, id: ParamId, g: &Array2<T>) {
        self.grads[id.0] += g;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array2<T>> {
        self.grads.iter()
    }

    pub fn global_norm(&self) -> T {
        self.grads.iter().flat_map(|g| g.iter()).map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, c: T) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }

    /// Rescales so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: T) {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
    }
}

/// Random matrix with orthonormal rows or columns (whichever are fewer),
/// scaled by `gain`.
pub fn orthogonal<T: Scalar, R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<T> {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // `short` vectors of length `long`, orthonormalized by modified Gram-Schmidt.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let x = if rows >= cols { basis[j][i] } else { basis[i][j] };
        T::of(x * gain)
    })
}

/// Affine layer `x · W + b` with `W: in × out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        params: &mut ParamSet<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), orthogonal(fan_in, fan_out, gain, rng));
        let bias = params.add(format!("{name}.bias"), Array2::zeros((1, fan_out)));
        Self { weight, bias }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}
