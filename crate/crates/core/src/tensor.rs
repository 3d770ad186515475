//! Dense row-major f32 tensors plus the flat kernels the autodiff ops build on.

use crate::error::{Error, Result};

/// Product of dims; the empty shape is a scalar with one element.
pub fn dims_product(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".to_string();
    }
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let want = dims_product(&shape);
        if want != data.len() {
            return Err(Error::Dimension(format!(
                "shape {} holds {} values, got {}",
                format_shape(&shape),
                want,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = dims_product(&shape);
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.data.len() != 1 {
            return Err(Error::Dimension(format!(
                "expected a scalar, got shape {}",
                format_shape(&self.shape)
            )));
        }
        Ok(self.data[0])
    }

    /// Same values under a new shape of equal size.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        if dims_product(&shape) != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {} into {}",
                format_shape(&self.shape),
                format_shape(&shape)
            )));
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shapes differ: {} vs {}",
                format_shape(&self.shape),
                format_shape(&other.shape)
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

/// out += a·b for row-major a (m×k) and b (k×n). The ikj order keeps the
/// inner loop over contiguous rows of b and out so it vectorizes.
pub(crate) fn matmul_acc(a: &[f32], m: usize, k: usize, b: &[f32], n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out = srcᵀ for row-major src (rows×cols).
pub(crate) fn transpose_into(src: &[f32], rows: usize, cols: usize, out: &mut [f32]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Row-wise softmax of a 2-d logits tensor, max-subtracted for stability.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let [n, k] = two_dims(logits, "softmax_rows")?;
    let mut out = vec![0.0f32; n * k];
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f64;
        for &z in row {
            denom += ((z - m) as f64).exp();
        }
        for (o, &z) in out[i * k..(i + 1) * k].iter_mut().zip(row) {
            *o = (((z - m) as f64).exp() / denom) as f32;
        }
    }
    Tensor::new(vec![n, k], out)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn two_dims(t: &Tensor, what: &str) -> Result<[usize; 2]> {
    match t.shape() {
        [a, b] => Ok([*a, *b]),
        s => Err(Error::Dimension(format!(
            "{} wants a 2-d tensor, got {}",
            what,
            format_shape(s)
        ))),
    }
}
