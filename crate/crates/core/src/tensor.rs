//! Dense row-major f64 tensors.
//!
//! Deliberately minimal: a shape vector plus a flat buffer, with just the
//! accessors the kernels need. All layouts are row-major (last axis fastest)
//! and all arithmetic lives in the kernel functions, not here.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Wraps an existing buffer. The buffer length must equal the shape's
    /// element count.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::InvalidParam {
                name: "data",
                message: format!(
                    "buffer of {} values cannot fill shape {:?} ({} elements)",
                    data.len(),
                    shape,
                    len
                ),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// The four extents of a rank-4 tensor, or a shape error naming `context`.
    pub fn dims4(&self, context: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(Error::ShapeMismatch {
                context,
                expected: vec![0, 0, 0, 0],
                got: self.shape.clone(),
            }),
        }
    }

    /// The two extents of a rank-2 tensor, or a shape error naming `context`.
    pub fn dims2(&self, context: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::ShapeMismatch {
                context,
                expected: vec![0, 0],
                got: self.shape.clone(),
            }),
        }
    }

    /// The three extents of a rank-3 tensor, or a shape error naming `context`.
    pub fn dims3(&self, context: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::ShapeMismatch {
                context,
                expected: vec![0, 0, 0],
                got: self.shape.clone(),
            }),
        }
    }
}

/// Errors unless `a` and `b` have identical shapes.
pub fn ensure_same_shape(context: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            context,
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        })
    }
}

/// Copies selected slices along the first axis into a new tensor, in the
/// order given. Used for batch assembly.
pub fn gather_rows(data: &Tensor, indices: &[usize]) -> Result<Tensor> {
    if data.rank() == 0 {
        return Err(Error::InvalidParam {
            name: "data",
            message: "gather_rows needs rank >= 1".into(),
        });
    }
    let n = data.shape()[0];
    let row_len: usize = data.shape()[1..].iter().product();
    let mut shape = data.shape().to_vec();
    shape[0] = indices.len();
    let mut out = Vec::with_capacity(indices.len() * row_len);
    for &i in indices {
        if i >= n {
            return Err(Error::InvalidParam {
                name: "indices",
                message: format!("row {i} out of range for first axis {n}"),
            });
        }
        out.extend_from_slice(&data.data()[i * row_len..(i + 1) * row_len]);
    }
    Tensor::from_vec(&shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn dims4_names_context() {
        let t = Tensor::zeros(&[2, 3]);
        let err = t.dims4("conv input").unwrap_err();
        assert!(err.to_string().contains("conv input"));
    }

    #[test]
    fn gather_rows_copies_in_index_order() {
        let t = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = gather_rows(&t, &[2, 0]).unwrap();
        assert_eq!(g.shape(), &[2, 2]);
        assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0]);
        assert!(gather_rows(&t, &[3]).is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = t.reshape(&[4]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[3]).is_err());
    }
}
