//! Dense row-major arrays and the primitive operations the model is built from.
//!
//! Tensors are immutable: every operation returns a new value. Storage is
//! reference counted, so cloning a tensor is cheap and values may be shared
//! across threads.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;

pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 32 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::Shape {
            shape: shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                shape,
                reason: format!("buffer holds {} values, shape needs {expected}", data.len()),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Shape known to be valid by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_parts(vec![1], vec![v])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape {
                shape: vec![m, n],
                reason: "ragged rows".into(),
            });
        }
        Tensor::new(vec![m, n], rows.concat())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let n = shape.iter().product();
        Ok(Tensor::from_parts(shape, vec![value; n]))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::full(shape, 1.0)
    }

    pub fn eye(n: usize) -> Result<Self> {
        check_shape(&[n])?;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Ok(Tensor::from_parts(vec![n, n], data))
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::from_parts(self.shape.clone(), vec![0.0; self.len()])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|a| (*a).clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::Shape {
                shape: self.shape.clone(),
                reason: "expected a matrix".into(),
            }),
        }
    }

    /// Extent of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    /// Number of rows when the tensor is viewed as `[..., last]`.
    pub fn outer_len(&self) -> usize {
        self.len() / self.last_dim()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.last_dim();
        &self.data[i * n..(i + 1) * n]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(op, other)?;
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(|v| v + c)
    }

    /// Adds a length-`n` vector to every row of an `[..., n]` tensor.
    pub fn add_row_vector(&self, bias: &Tensor) -> Result<Tensor> {
        let n = self.last_dim();
        if bias.len() != n {
            return Err(Error::dim("add_row_vector", &self.shape, &bias.shape));
        }
        let b = bias.data();
        let data = self
            .data
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Column sums of an `[..., n]` tensor, as a length-`n` vector.
    pub fn sum_rows(&self) -> Tensor {
        let n = self.last_dim();
        let mut out = vec![0.0; n];
        for row in self.data.chunks_exact(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Tensor::from_parts(vec![n], out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts(vec![n, m], out))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::dim("reshape", &self.shape, &shape));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    /// Row-wise softmax over the last axis with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        if self.data.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax_rows: NaN input".into()));
        }
        let n = self.last_dim();
        let mut out = Vec::with_capacity(self.len());
        for row in self.data.chunks_exact(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            let mut total = 0.0;
            for &v in row {
                let e = (v - max).exp();
                total += e;
                out.push(e);
            }
            for v in &mut out[start..] {
                *v /= total;
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    /// Per-row mean and inverse standard deviation, `1/sqrt(var + eps)`.
    pub(crate) fn row_stats(&self, eps: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.last_dim();
        self.data
            .chunks_exact(n)
            .map(|row| {
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                (mean, 1.0 / (var + eps).sqrt())
            })
            .unzip()
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layernorm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let n = self.last_dim();
        if gamma.len() != n || beta.len() != n {
            return Err(Error::dim("layernorm", &self.shape, gamma.shape()));
        }
        let (means, inv_std) = self.row_stats(eps);
        let (g, b) = (gamma.data(), beta.data());
        let mut out = Vec::with_capacity(self.len());
        for (r, row) in self.data.chunks_exact(n).enumerate() {
            for c in 0..n {
                out.push((row[c] - means[r]) * inv_std[r] * g[c] + b[c]);
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn gelu(&self) -> Tensor {
        self.map(gelu)
    }

    /// Circular shift along the last axis: `out[t] = in[(t - shift) mod L]`.
    pub fn roll_last_axis(&self, shift: isize) -> Tensor {
        let n = self.last_dim();
        let s = shift.rem_euclid(n as isize) as usize;
        let mut out = Vec::with_capacity(self.len());
        for row in self.data.chunks_exact(n) {
            out.extend_from_slice(&row[n - s..]);
            out.extend_from_slice(&row[..n - s]);
        }
        Tensor::from_parts(self.shape.clone(), out)
    }

    /// Columns `[start, end)` along the last axis.
    pub fn slice_last(&self, start: usize, end: usize) -> Result<Tensor> {
        let n = self.last_dim();
        if start >= end || end > n {
            return Err(Error::Shape {
                shape: self.shape.clone(),
                reason: format!("column range {start}..{end} invalid"),
            });
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = end - start;
        let data = self
            .data
            .chunks_exact(n)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        Ok(Tensor::from_parts(shape, data))
    }

    /// Rows `[start, end)` along the first axis.
    pub fn slice_first(&self, start: usize, end: usize) -> Result<Tensor> {
        let rows = self.shape[0];
        if start >= end || end > rows {
            return Err(Error::Shape {
                shape: self.shape.clone(),
                reason: format!("row range {start}..{end} invalid"),
            });
        }
        let stride = self.len() / rows;
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor::from_parts(
            shape,
            self.data[start * stride..end * stride].to_vec(),
        ))
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let lead = &first.shape[..first.rank() - 1];
        for p in parts {
            if &p.shape[..p.rank() - 1] != lead {
                return Err(Error::dim("concat_last", &first.shape, &p.shape));
            }
        }
        let rows = first.outer_len();
        let total: usize = parts.iter().map(|p| p.last_dim()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Tensor::from_parts(shape, data))
    }

    /// Concatenates along the first axis; trailing extents must agree.
    pub fn concat_first(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(Error::dim("concat_first", &first.shape, &p.shape));
            }
        }
        let mut shape = first.shape.clone();
        shape[0] = parts.iter().map(|p| p.shape[0]).sum();
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn rfft_last_axis(&self) -> ComplexTensor {
        let n = self.last_dim();
        let mut data = Vec::with_capacity(self.outer_len() * (n / 2 + 1));
        for row in self.data.chunks_exact(n) {
            data.extend(fft::rfft(row));
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = n / 2 + 1;
        ComplexTensor { shape, data }
    }
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Complex array, used for half spectra along the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

impl ComplexTensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<Complex64>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape {
                shape,
                reason: format!("buffer holds {} values", data.len()),
            });
        }
        Ok(ComplexTensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn conj(&self) -> ComplexTensor {
        ComplexTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|c| c.conj()).collect(),
        }
    }

    pub fn mul(&self, other: &ComplexTensor) -> Result<ComplexTensor> {
        if self.shape != other.shape {
            return Err(Error::dim("complex mul", &self.shape, &other.shape));
        }
        Ok(ComplexTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    /// Inverse real FFT along the last axis, producing `n` samples per row.
    pub fn irfft_last_axis(&self, n: usize) -> Result<Tensor> {
        let bins = *self.shape.last().expect("rank >= 1");
        if n == 0 || bins != n / 2 + 1 {
            return Err(Error::Shape {
                shape: self.shape.clone(),
                reason: format!("{bins} bins cannot describe a length-{n} real signal"),
            });
        }
        let mut data = Vec::with_capacity(self.data.len() / bins * n);
        for row in self.data.chunks_exact(bins) {
            data.extend(fft::irfft(row, n));
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = n;
        Ok(Tensor::from_parts(shape, data))
    }

    /// Real view with a trailing `[re, im]` axis of extent 2.
    pub fn to_pairs(&self) -> Tensor {
        let mut shape = self.shape.clone();
        shape.push(2);
        Tensor::from_parts(shape, self.data.iter().flat_map(|c| [c.re, c.im]).collect())
    }

    pub fn from_pairs(t: &Tensor) -> Result<ComplexTensor> {
        if t.rank() < 2 || t.last_dim() != 2 {
            return Err(Error::Shape {
                shape: t.shape().to_vec(),
                reason: "expected a trailing [re, im] axis".into(),
            });
        }
        let shape = t.shape()[..t.rank() - 1].to_vec();
        let data = t
            .data()
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Ok(ComplexTensor { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(Tensor::eye(2).unwrap().matmul(&a).unwrap(), a);
        let p = m(&[&[1.0, 2.0]]).matmul(&m(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(p.data(), &[11.0]);
        let z = Tensor::zeros([2, 3]).unwrap().matmul(&random(&[3, 2], &mut ChaCha8Rng::seed_from_u64(1))).unwrap();
        assert_eq!(z, Tensor::zeros([2, 2]).unwrap());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::zeros([2, 3]).unwrap().matmul(&Tensor::zeros([2, 3]).unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&[4, 5], &mut rng);
        let b = random(&[5, 3], &mut rng);
        let c = a.matmul(&b).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let want: f64 = (0..5).map(|p| a.get(&[i, p]) * b.get(&[p, j])).sum();
                assert!((c.get(&[i, j]) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matmul_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random(&[3, 4], &mut rng);
            let b = random(&[4, 5], &mut rng);
            let c = random(&[5, 2], &mut rng);
            let l = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let r = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let rel = l.max_abs_diff(&r).unwrap() / l.max_abs().max(1e-300);
            assert!(rel < 1e-9);
        }
    }

    #[test]
    fn softmax_examples() {
        let s = m(&[&[0.0, 0.0, 0.0]]).softmax_rows().unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = m(&[&[1000.0, 1000.0]]).softmax_rows().unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = m(&[&[0.0, 3f64.ln()]]).softmax_rows().unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);
        assert!(m(&[&[f64::NAN, 0.0]]).softmax_rows().is_err());
    }

    #[test]
    fn layernorm_examples() {
        let one = Tensor::ones([3]).unwrap();
        let zero = Tensor::zeros([3]).unwrap();
        let c = m(&[&[5.0, 5.0, 5.0]]).layernorm(&one, &zero, LAYERNORM_EPS).unwrap();
        assert_eq!(c.data(), &[0.0, 0.0, 0.0]);
        let y = m(&[&[1.0, 2.0, 3.0]]).layernorm(&one, &zero, 1e-15).unwrap();
        let r = 1.5f64.sqrt();
        for (a, b) in y.data().iter().zip([-r, 0.0, r]) {
            assert!((a - b).abs() < 1e-9);
        }
        let beta = Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap();
        let y = m(&[&[1.0, -4.0, 9.0]]).layernorm(&zero, &beta, LAYERNORM_EPS).unwrap();
        assert_eq!(y.data(), beta.data());
    }

    #[test]
    fn layernorm_standardizes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[5, 16], &mut rng).scale(7.0).add_scalar(3.0);
        let y = x
            .layernorm(&Tensor::ones([16]).unwrap(), &Tensor::zeros([16]).unwrap(), 1e-12)
            .unwrap();
        for r in 0..5 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rfft_examples() {
        let d = Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]).unwrap().rfft_last_axis();
        for c in d.data() {
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
        let c = Tensor::full([4], 2.5).unwrap().rfft_last_axis();
        assert_eq!(c.shape(), &[3]);
        assert!((c.data()[0] - Complex64::new(10.0, 0.0)).norm() < 1e-14);
        assert!(c.data()[1].norm() < 1e-14 && c.data()[2].norm() < 1e-14);
    }

    #[test]
    fn rfft_matches_naive_dft_length_37() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[37], &mut rng);
        let spec = x.rfft_last_axis();
        for k in 0..=18 {
            let want: Complex64 = (0..37)
                .map(|t| x.data()[t] * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / 37.0))
                .sum();
            assert!((spec.data()[k] - want).norm() < 1e-10);
        }
    }

    #[test]
    fn fft_round_trip_all_required_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in (1..=8).chain([37, 96, 128]) {
            let x = random(&[3, n], &mut rng);
            let back = x.rfft_last_axis().irfft_last_axis(n).unwrap();
            assert!(back.max_abs_diff(&x).unwrap() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn roll_examples() {
        let v = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(v.roll_last_axis(1).data(), &[4.0, 1.0, 2.0, 3.0]);
        assert_eq!(v.roll_last_axis(0), v);
        assert_eq!(v.roll_last_axis(4), v);
        assert_eq!(v.roll_last_axis(-1).data(), &[2.0, 3.0, 4.0, 1.0]);
    }

    #[test]
    fn slicing_and_concat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[3, 8], &mut rng);
        let a = x.slice_last(0, 3).unwrap();
        let b = x.slice_last(3, 8).unwrap();
        assert_eq!(Tensor::concat_last(&[&a, &b]).unwrap(), x);
        let top = x.slice_first(0, 1).unwrap();
        let rest = x.slice_first(1, 3).unwrap();
        assert_eq!(Tensor::concat_first(&[&top, &rest]).unwrap(), x);
        assert!(x.slice_last(4, 4).is_err());
    }

    #[test]
    fn construction_errors() {
        assert!(Tensor::new([2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::zeros([0, 2]).is_err());
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(Tensor::zeros([4]).unwrap().reshape([3]).is_err());
    }

    proptest! {
        #[test]
        fn roll_composes_and_preserves_sum(
            v in prop::collection::vec(-10.0f64..10.0, 1..40),
            a in -50isize..50,
            b in -50isize..50,
        ) {
            let t = Tensor::vector(v).unwrap();
            let ab = t.roll_last_axis(a).roll_last_axis(b);
            prop_assert_eq!(&ab, &t.roll_last_axis(a + b));
            prop_assert!((t.roll_last_axis(a).sum() - t.sum()).abs() < 1e-12);
            prop_assert_eq!(t.roll_last_axis(a).roll_last_axis(-a), t);
        }

        #[test]
        fn softmax_rows_are_stochastic_and_shift_invariant(
            v in prop::collection::vec(-30.0f64..30.0, 1..20),
            c in -100.0f64..100.0,
        ) {
            let t = Tensor::vector(v).unwrap();
            let s = t.softmax_rows().unwrap();
            prop_assert!((s.sum() - 1.0).abs() < 1e-12);
            prop_assert!(s.data().iter().all(|&p| p >= 0.0));
            let shifted = t.add_scalar(c).softmax_rows().unwrap();
            prop_assert!(s.max_abs_diff(&shifted).unwrap() < 1e-12);
        }
    }
}
