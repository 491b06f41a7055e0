use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an optional gradient slot.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) && !data.is_empty() {
            return Err(Error::dim(format!("shape {shape:?} has a zero extent")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value {} at index {i}", data[i])));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data,
            grad: None,
        }
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::dim(format!(
                "gradient has {} entries, tensor has {}",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts_unchecked(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

/// `out[b, j] = sum_i input[b, i] * weight[i, j] + bias[j]` on plain tensors.
pub fn affine_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, fan_in) = input.dims2()?;
    let (w_in, fan_out) = weight.dims2()?;
    if w_in != fan_in {
        return Err(Error::dim(format!(
            "input has {fan_in} columns but weight has {w_in} rows"
        )));
    }
    if bias.len() != fan_out {
        return Err(Error::dim(format!(
            "bias has {} entries, expected {fan_out}",
            bias.len()
        )));
    }
    let mut out = vec![0.0; batch * fan_out];
    kernels::matmul_bias(input.data(), weight.data(), bias.data(), fan_in, fan_out, &mut out);
    Ok(Tensor::from_parts_unchecked(vec![batch, fan_out], out))
}

/// Dense loops shared by the plain and graph versions of the affine map.
pub(crate) mod kernels {
    pub fn matmul_bias(x: &[f64], w: &[f64], bias: &[f64], fan_in: usize, fan_out: usize, out: &mut [f64]) {
        for (x_row, out_row) in x.chunks_exact(fan_in).zip(out.chunks_exact_mut(fan_out)) {
            out_row.copy_from_slice(bias);
            for (&xi, w_row) in x_row.iter().zip(w.chunks_exact(fan_out)) {
                if xi == 0.0 {
                    continue;
                }
                axpy(xi, w_row, out_row);
            }
        }
    }

    /// `dx = dout * w^T`
    pub fn grad_input(dout: &[f64], w: &[f64], fan_in: usize, fan_out: usize, dx: &mut [f64]) {
        for (d_row, dx_row) in dout.chunks_exact(fan_out).zip(dx.chunks_exact_mut(fan_in)) {
            for (dxi, w_row) in dx_row.iter_mut().zip(w.chunks_exact(fan_out)) {
                *dxi += dot(d_row, w_row);
            }
        }
    }

    /// `dw += x^T * dout`
    pub fn grad_weight(x: &[f64], dout: &[f64], fan_in: usize, fan_out: usize, dw: &mut [f64]) {
        for (x_row, d_row) in x.chunks_exact(fan_in).zip(dout.chunks_exact(fan_out)) {
            for (&xi, dw_row) in x_row.iter().zip(dw.chunks_exact_mut(fan_out)) {
                if xi == 0.0 {
                    continue;
                }
                axpy(xi, d_row, dw_row);
            }
        }
    }

    #[inline]
    pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi += a * xi;
        }
    }

    #[inline]
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = [0.0f64; 4];
        let chunks = a.len() / 4;
        for c in 0..chunks {
            let i = c * 4;
            acc[0] += a[i] * b[i];
            acc[1] += a[i + 1] * b[i + 1];
            acc[2] += a[i + 2] * b[i + 2];
            acc[3] += a[i + 3] * b[i + 3];
        }
        let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for i in chunks * 4..a.len() {
            s += a[i] * b[i];
        }
        s
    }
}
