//! Minimal linear-operator abstraction shared by the forward model and the solver.

use ndarray::{Array2, ArrayView1};

/// A real linear map `R^cols -> R^rows` with its transpose.
pub trait LinearOperator: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// `y = A x`
    fn apply_to(&self, x: &[f64], y: &mut [f64]);

    /// `x = A^T y`
    fn adjoint_to(&self, y: &[f64], x: &mut [f64]);

    /// `out = A^T A x`
    fn normal_to(&self, x: &[f64], out: &mut [f64]) {
        let mut y = vec![0.0; self.rows()];
        self.apply_to(x, &mut y);
        self.adjoint_to(&y, out);
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    matrix: Array2<f64>,
}

impl DenseOperator {
    pub fn new(matrix: Array2<f64>) -> Self {
        DenseOperator {
            matrix: matrix.as_standard_layout().into_owned(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(Array2::eye(n))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(&self.matrix * factor)
    }
}

impl LinearOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        let r = self.matrix.dot(&ArrayView1::from(x));
        y.copy_from_slice(r.as_slice().expect("contiguous"));
    }

    fn adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        let r = self.matrix.t().dot(&ArrayView1::from(y));
        x.iter_mut().zip(r.iter()).for_each(|(o, v)| *o = *v);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators: keeps the loop vectorizable with a fixed summation order
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
