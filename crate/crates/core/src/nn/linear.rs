//! Square linear maps used as the per-source state and action-value
//! transformations. No bias term: the identity-matrix initialization in the
//! transfer architecture describes a matrix only.

use crate::error::{Error, Result};
use crate::seeding::TaskRng;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransform {
    dim: usize,
    /// Row-major d x d matrix.
    matrix: Vec<f64>,
}

impl LinearTransform {
    /// Exact identity.
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self { dim, matrix }
    }

    /// Identity plus uniform noise in [-noise, noise] on every entry.
    /// A noise scale of 0 yields the exact identity.
    pub fn identity_with_noise(dim: usize, noise: f64, rng: &mut TaskRng) -> Self {
        let mut t = Self::identity(dim);
        if noise > 0.0 {
            for m in t.matrix.iter_mut() {
                *m += rng.random_range(-noise..=noise);
            }
        }
        t
    }

    pub fn from_matrix(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::Shape {
                context: "linear transform matrix",
                expected: dim * dim,
                got: matrix.len(),
            });
        }
        Ok(Self { dim, matrix })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn param_count(&self) -> usize {
        self.matrix.len()
    }

    /// y = M v
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[r * self.dim..(r + 1) * self.dim];
            let mut acc = 0.0;
            for (x, m) in v.iter().zip(row) {
                acc += x * m;
            }
            *o = acc;
        }
        out
    }

    /// dL/d input = M^T g
    pub fn input_grad(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        for (r, &gv) in g.iter().enumerate() {
            let row = &self.matrix[r * self.dim..(r + 1) * self.dim];
            for (o, m) in out.iter_mut().zip(row) {
                *o += gv * m;
            }
        }
        out
    }

    /// Accumulate dL/dM = outer(g, input) into `grads` starting at `offset`.
    pub fn accumulate_matrix_grad(g: &[f64], input: &[f64], grads: &mut [f64], offset: usize) {
        let dim = input.len();
        debug_assert_eq!(g.len(), dim);
        for (r, &gv) in g.iter().enumerate() {
            let row = &mut grads[offset + r * dim..offset + (r + 1) * dim];
            for (gm, &x) in row.iter_mut().zip(input) {
                *gm += gv * x;
            }
        }
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.matrix);
    }

    pub fn read_params(&mut self, params: &[f64]) -> usize {
        let n = self.matrix.len();
        self.matrix.copy_from_slice(&params[..n]);
        n
    }
}
