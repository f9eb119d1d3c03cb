//! Dense 1-D/2-D tensors of f64, row-major, immutable after construction.
//!
//! This is the value type flowing through every model in the crate. No
//! broadcasting, no strides, no views; the point is a small, auditable
//! numeric core under the differentiation machinery.

use crate::error::{Error, Result};

/// Inputs to `exp` are clamped to this bound before exponentiation, so the
/// output saturates at e^700 instead of overflowing to infinity. This is the
/// one documented exception to the "finite in, finite out" rule.
pub const EXP_CLAMP: f64 = 700.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// 1-D tensor from raw data. Zero length is permitted (concat identity).
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::vector(vec![v])
    }

    /// Row-major 2-D tensor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "matrix construction",
                &[rows, cols],
                &[data.len()],
            ));
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(other.shape())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: vec![n, n],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Scalar means shape (1,).
    pub fn is_scalar(&self) -> bool {
        self.shape == [1]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[1],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extract row `r` of a matrix as a vector.
    pub fn row(&self, r: usize) -> Tensor {
        let c = self.shape[1];
        Tensor::vector(self.data[r * c..(r + 1) * c].to_vec())
    }

    /// Extract column `c` of a matrix as a vector.
    pub fn column(&self, c: usize) -> Tensor {
        let cols = self.shape[1];
        Tensor::vector(self.data.iter().skip(c).step_by(cols).copied().collect())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_same_shape(context: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::dim(context, a.shape(), b.shape()));
    }
    Ok(())
}

/// Standard matrix-vector product. `m` is [rows x cols], `v` has length cols.
pub fn matvec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    if !m.is_matrix() || !v.is_vector() {
        return Err(Error::dim("matvec operands", m.shape(), v.shape()));
    }
    let (rows, cols) = (m.shape[0], m.shape[1]);
    if cols != v.len() {
        return Err(Error::dim("matvec", &[rows, cols], v.shape()));
    }
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        let row = &m.data[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v.data.iter()) {
            acc += a * b;
        }
        out[r] = acc;
    }
    Ok(Tensor::vector(out))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("add", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("sub", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Elementwise (Hadamard) product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("mul", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("div", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x / y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x * c).collect(),
    }
}

pub fn tanh(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x.tanh()).collect(),
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    // Split on sign so the exponential argument is never positive.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| sigmoid_scalar(*x)).collect(),
    }
}

/// Saturating exponential: inputs clamp to EXP_CLAMP before exp.
pub fn exp(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x.min(EXP_CLAMP).exp()).collect(),
    }
}

pub fn sin(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x.sin()).collect(),
    }
}

pub fn cos(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x.cos()).collect(),
    }
}

/// Concatenate two 1-D tensors, `a` first.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !a.is_vector() || !b.is_vector() {
        return Err(Error::dim("concat operands", a.shape(), b.shape()));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Tensor::vector(data))
}

pub fn concat_all(parts: &[&Tensor]) -> Result<Tensor> {
    let mut data = Vec::new();
    for p in parts {
        if !p.is_vector() {
            return Err(Error::dim("concat operand", &[p.len()], p.shape()));
        }
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor::vector(data))
}

pub fn dot(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_shape("dot", a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Outer product of two vectors: rows follow `a`, columns follow `b`.
pub fn outer(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !a.is_vector() || !b.is_vector() {
        return Err(Error::dim("outer operands", a.shape(), b.shape()));
    }
    let mut data = Vec::with_capacity(a.len() * b.len());
    for x in &a.data {
        for y in &b.data {
            data.push(x * y);
        }
    }
    Tensor::matrix(a.len(), b.len(), data)
}

/// Numerically stable softmax of a nonempty vector (max subtraction).
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    if !z.is_vector() || z.is_empty() {
        return Err(Error::Contract(
            "softmax requires a nonempty vector".into(),
        ));
    }
    let max = z.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.data.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(Tensor::vector(exps.iter().map(|e| e / sum).collect()))
}

/// Transpose of a matrix. Used by tests and adjoint propagation.
pub fn transpose(m: &Tensor) -> Result<Tensor> {
    if !m.is_matrix() {
        return Err(Error::dim("transpose", &[0, 0], m.shape()));
    }
    let (r, c) = (m.shape[0], m.shape[1]);
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = m.data[i * c + j];
        }
    }
    Tensor::matrix(c, r, data)
}
