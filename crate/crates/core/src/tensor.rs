//! Dense row-major f32 tensors and the broadcasting helpers shared by
//! the tape ops.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// A dense tensor: row-major f32 storage plus its shape.
///
/// A shape of `[]` denotes a scalar (one element). Reductions
/// accumulate in f64 so small-tolerance oracles stay meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Build a tensor from a shape and matching flat data.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(invalid(
                "Tensor::new",
                alloc::format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Reinterpret under a new shape with the same element count.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Euclidean norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        crate::mathf::sqrt64(self.data.iter().map(|&v| (v as f64) * (v as f64)).sum())
    }

    /// Largest absolute elementwise difference to another tensor.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

/// Shape produced by numpy-style broadcasting, or a shape error.
pub(crate) fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside the broadcast `target` shape;
/// broadcast axes get stride 0.
pub(crate) fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let own = strides_for(shape);
    let offset = target.len() - shape.len();
    let mut out = vec![0; target.len()];
    for i in 0..target.len() {
        if i >= offset && shape[i - offset] != 1 {
            out[i] = own[i - offset];
        }
    }
    out
}

/// True when `suffix` equals the trailing axes of `shape` (so its data
/// tiles the larger tensor whole-chunk by whole-chunk).
fn is_suffix(shape: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= shape.len() && shape[shape.len() - suffix.len()..] == *suffix
}

/// Iterate a broadcast elementwise binary op. `f` receives (a, b) and
/// writes the result in row-major target order.
pub(crate) fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    target: &[usize],
    mut f: impl FnMut(f32, f32) -> f32,
) -> Tensor {
    let numel: usize = target.iter().product();
    // Common fast paths: identical shapes, or one side tiling the
    // other as a trailing block.
    if a.shape() == target && b.shape() == target {
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor {
            shape: target.to_vec(),
            data,
        };
    }
    if a.shape() == target && is_suffix(target, b.shape()) && !b.data.is_empty() {
        let block = b.data.len();
        let mut out = Vec::with_capacity(numel);
        for chunk in a.data.chunks_exact(block) {
            for (x, y) in chunk.iter().zip(&b.data) {
                out.push(f(*x, *y));
            }
        }
        return Tensor {
            shape: target.to_vec(),
            data: out,
        };
    }
    if b.shape() == target && is_suffix(target, a.shape()) && !a.data.is_empty() {
        let block = a.data.len();
        let mut out = Vec::with_capacity(numel);
        for chunk in b.data.chunks_exact(block) {
            for (y, x) in chunk.iter().zip(&a.data) {
                out.push(f(*x, *y));
            }
        }
        return Tensor {
            shape: target.to_vec(),
            data: out,
        };
    }
    let sa = broadcast_strides(a.shape(), target);
    let sb = broadcast_strides(b.shape(), target);
    let mut out = Vec::with_capacity(numel);
    let mut idx = vec![0usize; target.len()];
    let mut off_a = 0usize;
    let mut off_b = 0usize;
    for _ in 0..numel {
        out.push(f(a.data[off_a], b.data[off_b]));
        // Increment the multi-index, rightmost axis fastest.
        for axis in (0..target.len()).rev() {
            idx[axis] += 1;
            off_a += sa[axis];
            off_b += sb[axis];
            if idx[axis] < target[axis] {
                break;
            }
            idx[axis] = 0;
            off_a -= sa[axis] * target[axis];
            off_b -= sb[axis] * target[axis];
        }
    }
    Tensor {
        shape: target.to_vec(),
        data: out,
    }
}

/// Sum `t` down to `shape` (inverse of broadcasting), f64 accumulation.
pub(crate) fn reduce_to_shape(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let numel: usize = shape.iter().product();
    // Fast path: target is a trailing block of the source.
    if is_suffix(t.shape(), shape) && numel > 0 {
        let mut acc = vec![0.0f64; numel];
        for chunk in t.data.chunks_exact(numel) {
            for (a, &v) in acc.iter_mut().zip(chunk) {
                *a += v as f64;
            }
        }
        return Tensor {
            shape: shape.to_vec(),
            data: acc.into_iter().map(|v| v as f32).collect(),
        };
    }
    let mut acc = vec![0.0f64; numel];
    let strides = broadcast_strides(shape, t.shape());
    let target = t.shape();
    let mut idx = vec![0usize; target.len()];
    let mut off = 0usize;
    for &v in &t.data {
        acc[off] += v as f64;
        for axis in (0..target.len()).rev() {
            idx[axis] += 1;
            off += strides[axis];
            if idx[axis] < target[axis] {
                break;
            }
            idx[axis] = 0;
            off -= strides[axis] * target[axis];
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data: acc.into_iter().map(|v| v as f32).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(2.5);
        assert_eq!(s.shape(), &[] as &[usize]);
        assert_eq!(s.numel(), 1);
    }

    #[test]
    fn broadcast_shape_rules() {
        assert_eq!(
            broadcast_shapes("t", &[4, 1, 3], &[2, 3]).unwrap(),
            vec![4, 2, 3]
        );
        assert_eq!(broadcast_shapes("t", &[], &[2, 3]).unwrap(), vec![2, 3]);
        assert!(broadcast_shapes("t", &[2, 3], &[3, 3]).is_err());
    }

    #[test]
    fn zip_and_reduce_are_inverse_on_sum() {
        let a = Tensor::new(vec![2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        let b = Tensor::new(vec![3], vec![1.0, 10.0, 100.0]).unwrap();
        let c = zip_broadcast(&a, &b, &[2, 3], |x, y| x + y);
        assert_eq!(c.data(), &[1.0, 11.0, 102.0, 4.0, 14.0, 105.0]);
        let r = reduce_to_shape(&c, &[3]);
        assert_eq!(r.data(), &[5.0, 25.0, 207.0]);
    }
}
