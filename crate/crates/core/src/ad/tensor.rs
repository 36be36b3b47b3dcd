//! Dense row-major `f64` tensors and the numeric kernels the tape is built on.

use crate::error::{Error, Result};

/// A dense real array in row-major order.
///
/// Plain tensors carry no tape node. They take part in arithmetic as constants
/// once pushed onto a [`Tape`](super::Tape) and never receive a gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// A `1 x 1` tensor.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// A `rows x 1` column.
    pub fn column(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len(), 1],
            data,
        }
    }

    /// A `1 x cols` row.
    pub fn row(data: Vec<f64>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar(self.shape.clone()))
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(Error::NotMatrix {
                op,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn with_shape(mut self, shape: &[usize]) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

// Elementwise binary op where equal shapes combine pointwise and a one-element
// operand broadcasts against the other.
pub(crate) fn broadcast_zip(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor {
            shape: a.shape.clone(),
            data,
        });
    }
    if b.is_scalar() {
        let y = b.data[0];
        return Ok(a.map(|x| f(x, y)));
    }
    if a.is_scalar() {
        let x = a.data[0];
        return Ok(b.map(|y| f(x, y)));
    }
    Err(Error::Shape {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })
}

/// `a (m x k) * b (k x n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `g (m x n) * b^T` where `b` is `k x n`.
pub(crate) fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (g.shape[0], g.shape[1]);
    let k = b.shape[0];
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g.data[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b.data[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor {
        shape: vec![m, k],
        data: out,
    }
}

/// `a^T * g` where `a` is `m x k` and `g` is `m x n`.
pub(crate) fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = g.shape[1];
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g.data[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    Tensor {
        shape: vec![k, n],
        data: out,
    }
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor {
        shape: vec![n, m],
        data: out,
    }
}

pub(crate) fn sum_rows(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; n];
    for i in 0..m {
        for (o, v) in out.iter_mut().zip(&a.data[i * n..(i + 1) * n]) {
            *o += v;
        }
    }
    Tensor {
        shape: vec![1, n],
        data: out,
    }
}

pub(crate) fn sum_cols(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape[0], a.shape[1]);
    let data = (0..m).map(|i| a.data[i * n..(i + 1) * n].iter().sum()).collect();
    Tensor {
        shape: vec![m, 1],
        data,
    }
}

pub(crate) fn broadcast_rows(a: &Tensor, m: usize) -> Tensor {
    let mut data = Vec::with_capacity(m * a.data.len());
    for _ in 0..m {
        data.extend_from_slice(&a.data);
    }
    Tensor {
        shape: vec![m, a.data.len()],
        data,
    }
}

pub(crate) fn broadcast_cols(a: &Tensor, n: usize) -> Tensor {
    let m = a.data.len();
    let mut data = Vec::with_capacity(m * n);
    for &v in &a.data {
        data.extend(std::iter::repeat_n(v, n));
    }
    Tensor {
        shape: vec![m, n],
        data,
    }
}

pub(crate) fn slice_rows(a: &Tensor, start: usize, len: usize) -> Tensor {
    let n = a.shape[1];
    Tensor {
        shape: vec![len, n],
        data: a.data[start * n..(start + len) * n].to_vec(),
    }
}

pub(crate) fn pad_rows(a: &Tensor, start: usize, total: usize) -> Tensor {
    let n = a.shape[1];
    let mut data = vec![0.0; total * n];
    data[start * n..start * n + a.data.len()].copy_from_slice(&a.data);
    Tensor {
        shape: vec![total, n],
        data,
    }
}

pub(crate) fn slice_cols(a: &Tensor, start: usize, len: usize) -> Tensor {
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut data = Vec::with_capacity(m * len);
    for i in 0..m {
        data.extend_from_slice(&a.data[i * n + start..i * n + start + len]);
    }
    Tensor {
        shape: vec![m, len],
        data,
    }
}

pub(crate) fn pad_cols(a: &Tensor, start: usize, total: usize) -> Tensor {
    let (m, len) = (a.shape[0], a.shape[1]);
    let mut data = vec![0.0; m * total];
    for i in 0..m {
        data[i * total + start..i * total + start + len]
            .copy_from_slice(&a.data[i * len..(i + 1) * len]);
    }
    Tensor {
        shape: vec![m, total],
        data,
    }
}

/// Row-wise vector-matrix product against a stack of square matrices.
/// `out[r, k] = sum_j v[r, j] * S_r[j, k]`, or `S_r[k, j]` when `transpose`.
pub(crate) fn row_vec_mat(v: &Tensor, mats: &[f64], transpose: bool) -> Tensor {
    let (m, d) = (v.shape[0], v.shape[1]);
    let mut out = vec![0.0; m * d];
    for r in 0..m {
        let s = &mats[r * d * d..(r + 1) * d * d];
        let vr = &v.data[r * d..(r + 1) * d];
        let or = &mut out[r * d..(r + 1) * d];
        for (j, &vj) in vr.iter().enumerate() {
            for (k, o) in or.iter_mut().enumerate() {
                let sjk = if transpose { s[k * d + j] } else { s[j * d + k] };
                *o += vj * sjk;
            }
        }
    }
    Tensor {
        shape: vec![m, d],
        data: out,
    }
}
