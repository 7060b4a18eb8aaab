//! Dense tensors with a recorded reverse-mode tape.
//!
//! [`Tensor`] is a plain value (shape + row-major data, optionally carrying a
//! gradient accumulator). A forward pass records operations on a [`Tape`];
//! [`Tape::backward`] walks the records in reverse and returns [`Grads`].
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and `f64` for finite-difference checks.

mod conv;
pub mod gradcheck;
mod norm;
mod ops;
pub mod optim;
mod param;
mod tape;

use std::fmt;

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::{Error, Result};

pub use conv::{ConvAlgo, ConvGeometry};
pub use norm::{BatchNormConfig, RunningStats};
pub use optim::{clip_params, rmsprop_step, OptimizerState};
pub use param::{init_normal_truncated, NamedTensors, ParamStore};
pub use tape::{Bound, Grads, Mode, Tape, Var};

/// Scalar type a tensor can hold.
pub trait Real:
    Float
    + FromPrimitive
    + NumAssign
    + std::iter::Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );
}

fn check_gemm_bounds<T>(m: usize, k: usize, n: usize, a: &[T], rsa: isize, csa: isize, b: &[T], rsb: isize, csb: isize, c: &[T]) {
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0);
    assert!(span(m, k, rsa, csa) <= a.len(), "gemm: lhs out of bounds");
    assert!(span(k, n, rsb, csb) <= b.len(), "gemm: rhs out of bounds");
    assert!(m * n <= c.len(), "gemm: output out of bounds");
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f32], rsa: isize, csa: isize, b: &[f32], rsb: isize, csb: isize, beta: f32, c: &mut [f32]) {
        check_gemm_bounds(m, k, n, a, rsa, csa, b, rsb, csb, c);
        // SAFETY: extents checked above; c is contiguous row-major m x n.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
        check_gemm_bounds(m, k, n, a, rsa, csa, b, rsb, csb, c);
        // SAFETY: extents checked above; c is contiguous row-major m x n.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

/// Dense row-major n-dimensional array.
///
/// `grad` is present iff the tensor requires a gradient; it always has the
/// same length as `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("tensor shape {shape:?} has a zero dimension")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d > 0), "tensor shape {shape:?} has a zero dimension");
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full([1], value)
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(f).collect();
        Tensor { shape, data, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        match (on, self.grad.is_some()) {
            (true, false) => self.grad = Some(vec![T::zero(); self.data.len()]),
            (false, true) => self.grad = None,
            _ => {}
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.set_requires_grad(true);
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Mutable access to data and gradient at the same time.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], Option<&mut [T]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::lit(v.as_f64())).collect()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f32>::new([2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::<f32>::new([2, 3], vec![0.0; 5]), Err(Error::Shape { .. })));
        assert!(Tensor::<f32>::new([2, 0], vec![]).is_err());
    }

    #[test]
    fn grad_present_iff_required() {
        let mut t = Tensor::<f64>::zeros([3]);
        assert!(t.grad().is_none());
        t.set_requires_grad(true);
        assert_eq!(t.grad().unwrap().len(), 3);
        t.set_requires_grad(false);
        assert!(t.grad().is_none());
    }

    #[test]
    fn strides_and_axis_split() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(split_axis(&[2, 3, 4], 1), (2, 3, 4));
        assert_eq!(split_axis(&[5], 0), (1, 5, 1));
    }

    #[test]
    fn gemm_transposed_operands() {
        // a = [[1,2],[3,4]] read transposed, b = identity
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [1.0f64, 0.0, 0.0, 1.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, &a, 1, 2, &b, 2, 1, 0.0, &mut c);
        assert_eq!(c, [1.0, 3.0, 2.0, 4.0]);
    }
}
