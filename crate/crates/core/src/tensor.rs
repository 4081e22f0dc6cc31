//! Dense row-major f64 tensors.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense tensor with row-major storage. All numeric state in the model is
/// held in these; 64-bit floats keep finite-difference checks meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::from_vec".into(),
                expected: format!("{} values for shape {:?}", n, shape),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform init on [-scale, scale].
    pub fn uniform(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-scale, scale)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Glorot-style uniform init on +-sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
        let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::uniform(shape, scale, rng)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zeros_like(&self) -> Tensor {
        Tensor::zeros(&self.shape)
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &self.data[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &mut self.data[r * w..(r + 1) * w]
    }

    /// One 2-D plane of a 3-D tensor shaped [maps, h, w].
    pub fn plane(&self, m: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 3);
        let sz = self.shape[1] * self.shape[2];
        &self.data[m * sz..(m + 1) * sz]
    }

    pub fn plane_mut(&mut self, m: usize) -> &mut [f64] {
        debug_assert_eq!(self.shape.len(), 3);
        let sz = self.shape[1] * self.shape[2];
        &mut self.data[m * sz..(m + 1) * sz]
    }
}

/// y += a * x over equal-length slices. The single hot loop the convolution
/// and dense layers are built on; written so LLVM vectorizes it.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

/// Four independent accumulators so the reduction vectorizes; the summation
/// order is fixed, keeping results reproducible run to run.
#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let xr = xc.remainder();
    let yr = yc.remainder();
    for (a, b) in xc.zip(yc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in xr.iter().zip(yr.iter()) {
        s += a * b;
    }
    s
}

/// y = W x for a [rows, cols] matrix stored row-major.
pub fn matvec(w: &Tensor, x: &[f64], y: &mut [f64]) {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(y.len(), rows);
    for r in 0..rows {
        y[r] = dot(&w.data()[r * cols..(r + 1) * cols], x);
    }
}

/// y += W^T g, accumulating the input gradient of a dense layer.
pub fn matvec_t_acc(w: &Tensor, g: &[f64], y: &mut [f64]) {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(g.len(), rows);
    debug_assert_eq!(y.len(), cols);
    for r in 0..rows {
        axpy(g[r], &w.data()[r * cols..(r + 1) * cols], y);
    }
}

/// dW += g (outer) x for a [rows, cols] weight gradient.
pub fn outer_acc(dw: &mut Tensor, g: &[f64], x: &[f64]) {
    let (rows, cols) = (dw.shape()[0], dw.shape()[1]);
    debug_assert_eq!(g.len(), rows);
    debug_assert_eq!(x.len(), cols);
    for r in 0..rows {
        axpy(g[r], x, &mut dw.data_mut()[r * cols..(r + 1) * cols]);
    }
}
