//! Reference forecasters: last-value persistence and a ridge linear map.

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::tensor::Tensor;

/// Repeats the last row of the `T x N` window `h` times.
pub fn persistence(x: &Tensor, h: usize) -> Result<Tensor> {
    let (t, n) = x.dims2()?;
    if t == 0 {
        return Err(Error::Shape {
            shape: x.shape().to_vec(),
            reason: "empty look-back window".into(),
        });
    }
    let last = x.row(t - 1);
    Tensor::new([h, n], (0..h).flat_map(|_| last.iter().copied()).collect())
}

/// `y = x W + b` from a look-back column `x` (length `T`) to a horizon row
/// (length `H`).
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeMap {
    pub w: Tensor,
    pub b: Tensor,
}

/// Channel-independent linear forecaster. With `shared` one map serves every
/// channel; otherwise each channel gets its own.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaseline {
    pub maps: Vec<RidgeMap>,
    pub shared: bool,
}

struct Moments {
    count: f64,
    sum_x: Vec<f64>,
    sum_y: Vec<f64>,
    xtx: Vec<f64>,
    xty: Vec<f64>,
}

impl Moments {
    fn new(t: usize, h: usize) -> Self {
        Moments {
            count: 0.0,
            sum_x: vec![0.0; t],
            sum_y: vec![0.0; h],
            xtx: vec![0.0; t * t],
            xty: vec![0.0; t * h],
        }
    }

    fn add(&mut self, x: &[f64], y: &[f64]) {
        let (t, h) = (x.len(), y.len());
        self.count += 1.0;
        for i in 0..t {
            self.sum_x[i] += x[i];
            for j in 0..t {
                self.xtx[i * t + j] += x[i] * x[j];
            }
            for j in 0..h {
                self.xty[i * h + j] += x[i] * y[j];
            }
        }
        for j in 0..h {
            self.sum_y[j] += y[j];
        }
    }

    /// Solves the centered ridge normal equations.
    fn solve(&self, ridge: f64) -> Result<RidgeMap> {
        let (t, h) = (self.sum_x.len(), self.sum_y.len());
        if self.count == 0.0 {
            return Err(Error::Data("no training windows for the linear baseline".into()));
        }
        let mx: Vec<f64> = self.sum_x.iter().map(|s| s / self.count).collect();
        let my: Vec<f64> = self.sum_y.iter().map(|s| s / self.count).collect();
        let mut cxx = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..t {
                cxx[i * t + j] = self.xtx[i * t + j] - self.count * mx[i] * mx[j];
            }
            cxx[i * t + i] += ridge;
        }
        let mut cxy = vec![0.0; t * h];
        for i in 0..t {
            for j in 0..h {
                cxy[i * h + j] = self.xty[i * h + j] - self.count * mx[i] * my[j];
            }
        }
        let w = solve_spd(&Tensor::new([t, t], cxx)?, &Tensor::new([t, h], cxy)?)?;
        let shift = Tensor::new([1, t], mx)?.matmul(&w)?;
        let b = Tensor::vector(my.iter().zip(shift.data()).map(|(m, s)| m - s).collect())?;
        Ok(RidgeMap { w, b })
    }
}

impl LinearBaseline {
    /// Fits on `(T x N input, H x N target)` windows with ridge penalty `ridge > 0`.
    pub fn fit<I>(windows: I, ridge: f64, shared: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (Tensor, Tensor)>,
    {
        if !(ridge > 0.0) {
            return Err(Error::Config(format!("ridge penalty must be positive, got {ridge}")));
        }
        let mut moments: Vec<Moments> = Vec::new();
        let mut dims = None;
        for (x, y) in windows {
            let (t, n) = x.dims2()?;
            let (h, ny) = y.dims2()?;
            if ny != n {
                return Err(Error::dim("linear baseline", x.shape(), y.shape()));
            }
            if *dims.get_or_insert((t, h, n)) != (t, h, n) {
                return Err(Error::Shape {
                    shape: x.shape().to_vec(),
                    reason: "windows must share one shape".into(),
                });
            }
            if moments.is_empty() {
                let groups = if shared { 1 } else { n };
                moments = (0..groups).map(|_| Moments::new(t, h)).collect();
            }
            let (xt, yt) = (x.transpose()?, y.transpose()?);
            for c in 0..n {
                let g = if shared { 0 } else { c };
                moments[g].add(xt.row(c), yt.row(c));
            }
        }
        if moments.is_empty() {
            return Err(Error::Data("no training windows for the linear baseline".into()));
        }
        let maps = moments.iter().map(|m| m.solve(ridge)).collect::<Result<Vec<_>>>()?;
        Ok(LinearBaseline { maps, shared })
    }

    /// `T x N` window to `H x N` forecast.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let (_, n) = x.dims2()?;
        if !self.shared && self.maps.len() != n {
            return Err(Error::dim("linear baseline predict", x.shape(), &[0, self.maps.len()]));
        }
        let xt = x.transpose()?;
        let rows = (0..n)
            .map(|c| {
                let map = &self.maps[if self.shared { 0 } else { c }];
                let row = Tensor::new([1, xt.shape()[1]], xt.row(c).to_vec())?;
                Ok(row.matmul(&map.w)?.add_row_vector(&map.b)?.into_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_rows(&rows)?.transpose()
    }
}
