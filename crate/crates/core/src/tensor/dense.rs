use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Dense row-major array of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Entries drawn uniformly from `[lo, hi)`.
    pub fn uniform(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(|_| rng.random_range(lo..hi)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of range in axis {i}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &RealTensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for RealTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RealTensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

/// Dense row-major complex array stored as interleaved `(re, im)` pairs.
///
/// The interleaved layout is the same as a [`RealTensor`] with a trailing
/// axis of length 2, which is how complex values travel through a
/// [`Trace`](crate::tensor::Trace).
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ComplexTensor {
    /// `data` holds `2 * numel(shape)` interleaved values.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if 2 * numel(&shape) != data.len() {
            return Err(Error::shape(format!(
                "complex shape {:?} needs {} interleaved values, got {}",
                shape,
                2 * numel(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = 2 * numel(&shape);
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_parts(shape: impl Into<Vec<usize>>, re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::shape("real and imaginary parts differ in length"));
        }
        let data = re.iter().zip(im).flat_map(|(&r, &i)| [r, i]).collect();
        Self::new(shape, data)
    }

    pub fn from_real(real: &RealTensor) -> Self {
        let data = real.data().iter().flat_map(|&r| [r, 0.0]).collect();
        Self {
            shape: real.shape().to_vec(),
            data,
        }
    }

    pub fn uniform(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let data = (0..2 * numel(&shape))
            .map(|_| rng.random_range(lo..hi))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of complex elements.
    pub fn len(&self) -> usize {
        self.data.len() / 2
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

    pub fn get(&self, flat: usize) -> (f64, f64) {
        (self.data[2 * flat], self.data[2 * flat + 1])
    }

    pub fn set(&mut self, flat: usize, value: (f64, f64)) {
        self.data[2 * flat] = value.0;
        self.data[2 * flat + 1] = value.1;
    }

    pub fn abs(&self) -> RealTensor {
        let data = self
            .data
            .chunks_exact(2)
            .map(|c| c[0].hypot(c[1]))
            .collect();
        RealTensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &ComplexTensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .chunks_exact(2)
            .zip(other.data.chunks_exact(2))
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .fold(0.0, f64::max)
    }

    /// Reinterprets the interleaved storage as a real tensor with a
    /// trailing axis of length 2.
    pub fn into_interleaved(self) -> RealTensor {
        let mut shape = self.shape;
        shape.push(2);
        RealTensor {
            shape,
            data: self.data,
        }
    }

    /// Inverse of [`ComplexTensor::into_interleaved`].
    pub fn from_interleaved(real: RealTensor) -> Result<Self> {
        match real.shape.split_last() {
            Some((2, rest)) => Ok(Self {
                shape: rest.to_vec(),
                data: real.data,
            }),
            _ => Err(Error::shape(format!(
                "interleaved complex needs a trailing axis of 2, got {:?}",
                real.shape
            ))),
        }
    }

    /// Complex slice `index` along the leading axis.
    pub fn slice_leading(&self, index: usize) -> ComplexTensor {
        let inner: usize = numel(&self.shape[1..]);
        let start = 2 * index * inner;
        ComplexTensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[start..start + 2 * inner].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[ComplexTensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.data.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::shape(format!(
                    "stack shape mismatch: {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }
}

impl fmt::Debug for ComplexTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexTensor{:?}", self.shape)
    }
}
