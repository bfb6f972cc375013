//! Koopman Temporal Detector.
//!
//! The `N x D` input is cut into `n = D / S` segments along the token axis.
//! Each segment is encoded into a Koopman-space snapshot `z_j` (width `M`),
//! a finite Koopman operator is fitted by least squares between consecutive
//! snapshots, and `n` further snapshots are rolled out from the last one and
//! decoded, so the output has the input's `N x D` shape.
//!
//! The operator is kept in factored form
//! `K = Z_fore (Z_back^T Z_back + eps I)^-1 Z_back^T`
//! with snapshots as columns; applying it costs `O(M n)` and the `M x M`
//! matrix is never built on the forward path. `eps = 0` falls back to the
//! Moore-Penrose pseudo-inverse of the Gram matrix.

use rand::Rng;

use crate::autodiff::{pinv_solve, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{pinv_solve_symmetric, Cholesky};
use crate::nn::{join, Activation, Mlp};
use crate::tensor::Tensor;

pub const DEFAULT_RIDGE_EPS: f64 = 1e-5;

/// Encoder or decoder between flattened segments and Koopman space.
#[derive(Debug, Clone, PartialEq)]
pub enum Coder<T> {
    Mlp(Mlp<T>),
    /// Passes values through unchanged; `M` then equals `N * S`.
    Identity,
}

impl<T> Coder<T> {
    pub fn map_named<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> Result<U>) -> Result<Coder<U>> {
        Ok(match self {
            Coder::Mlp(m) => Coder::Mlp(m.map_named(prefix, f)?),
            Coder::Identity => Coder::Identity,
        })
    }
}

impl<'t> Coder<Var<'t>> {
    fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Coder::Mlp(m) => m.forward(x),
            Coder::Identity => Ok(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KtdParams<T> {
    pub encoder: Coder<T>,
    pub decoder: Coder<T>,
    pub segment_len: usize,
    pub eps: f64,
}

impl KtdParams<Tensor> {
    /// MLP encoder `N*S -> M -> M` and decoder `M -> M -> N*S`.
    pub fn init<R: Rng>(
        rng: &mut R,
        n_vars: usize,
        segment_len: usize,
        koopman_dim: usize,
        activation: Activation,
        eps: f64,
    ) -> Result<Self> {
        let flat = n_vars * segment_len;
        Ok(KtdParams {
            encoder: Coder::Mlp(Mlp::init(rng, flat, koopman_dim, koopman_dim, activation)?),
            decoder: Coder::Mlp(Mlp::init(rng, koopman_dim, koopman_dim, flat, activation)?),
            segment_len,
            eps,
        })
    }

    /// Identity encoder and decoder, for checking the Koopman fit in isolation.
    pub fn identity(segment_len: usize, eps: f64) -> Self {
        KtdParams {
            encoder: Coder::Identity,
            decoder: Coder::Identity,
            segment_len,
            eps,
        }
    }
}

impl<T> KtdParams<T> {
    pub fn map_named<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> Result<U>) -> Result<KtdParams<U>> {
        Ok(KtdParams {
            encoder: self.encoder.map_named(&join(prefix, "encoder"), f)?,
            decoder: self.decoder.map_named(&join(prefix, "decoder"), f)?,
            segment_len: self.segment_len,
            eps: self.eps,
        })
    }
}

/// Number of segments for token width `d`; at least two are required.
pub fn segment_count(d: usize, segment_len: usize) -> Result<usize> {
    if segment_len == 0 || d % segment_len != 0 {
        return Err(Error::Config(format!(
            "segment length {segment_len} does not divide token width {d}"
        )));
    }
    let n = d / segment_len;
    if n < 2 {
        return Err(Error::Config(format!(
            "token width {d} with segment length {segment_len} gives {n} segment; \
             need at least two snapshots to fit K"
        )));
    }
    Ok(n)
}

/// Splits `N x D` into `D / S` consecutive `N x S` blocks.
pub fn segment(x: &Tensor, segment_len: usize) -> Result<Vec<Tensor>> {
    let (_, d) = x.dims2()?;
    let n = segment_count(d, segment_len)?;
    (0..n)
        .map(|j| x.slice_last(j * segment_len, (j + 1) * segment_len))
        .collect()
}

/// Inverse of [`segment`].
pub fn desegment(parts: &[Tensor]) -> Result<Tensor> {
    Tensor::concat_last(&parts.iter().collect::<Vec<_>>())
}

/// Koopman-space snapshots as the columns of an `M x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    z: Tensor,
}

impl SnapshotMatrix {
    pub fn new(z: Tensor) -> Result<Self> {
        let (_, n) = z.dims2()?;
        if n < 2 {
            return Err(Error::Config(
                "need at least two snapshots to fit K".into(),
            ));
        }
        Ok(SnapshotMatrix { z })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = Tensor::from_rows(columns)?;
        SnapshotMatrix::new(rows.transpose()?)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.z
    }
}

#[derive(Debug, Clone)]
enum GramSolver {
    Ridge(Cholesky),
    Pseudo(Tensor),
}

/// Fitted operator `K = Z_fore G^-1 Z_back^T` with `G = Z_back^T Z_back + eps I`.
#[derive(Debug, Clone)]
pub struct KoopmanOperator {
    z_back: Tensor,
    z_fore: Tensor,
    gram: GramSolver,
}

pub fn fit_koopman(z: &SnapshotMatrix, eps: f64) -> Result<KoopmanOperator> {
    let (_, n) = z.z.dims2()?;
    let z_back = z.z.slice_last(0, n - 1)?;
    let z_fore = z.z.slice_last(1, n)?;
    let mut gram = z_back.transpose()?.matmul(&z_back)?;
    let gram = if eps > 0.0 {
        gram = gram.add(&Tensor::eye(n - 1)?.scale(eps))?;
        GramSolver::Ridge(Cholesky::factor(&gram)?)
    } else {
        GramSolver::Pseudo(gram)
    };
    Ok(KoopmanOperator {
        z_back,
        z_fore,
        gram,
    })
}

impl KoopmanOperator {
    pub fn dim(&self) -> usize {
        self.z_back.shape()[0]
    }

    fn gram_solve(&self, rhs: &Tensor) -> Result<Tensor> {
        match &self.gram {
            GramSolver::Ridge(c) => c.solve(rhs),
            GramSolver::Pseudo(g) => pinv_solve_symmetric(g, rhs, 1e-12),
        }
    }

    /// `K v` for a length-`M` vector.
    pub fn apply(&self, v: &Tensor) -> Result<Tensor> {
        let m = self.dim();
        let col = v.reshape([m, 1])?;
        let coeff = self.gram_solve(&self.z_back.transpose()?.matmul(&col)?)?;
        self.z_fore.matmul(&coeff)?.reshape([m])
    }

    /// `[K v, K^2 v, ..., K^steps v]`.
    pub fn rollout(&self, start: &Tensor, steps: usize) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(steps);
        let mut v = start.clone();
        for _ in 0..steps {
            v = self.apply(&v)?;
            out.push(v.clone());
        }
        Ok(out)
    }

    /// Materialized `M x M` operator.
    pub fn dense(&self) -> Result<Tensor> {
        let coeff = self.gram_solve(&self.z_back.transpose()?)?;
        self.z_fore.matmul(&coeff)
    }
}

/// Differentiable forward pass, `N x D -> N x D`.
pub fn ktd_forward_tape<'t>(x: Var<'t>, p: &KtdParams<Var<'t>>) -> Result<Var<'t>> {
    let tape = x.tape();
    let xs = x.shape();
    if xs.len() != 2 {
        return Err(Error::Shape {
            shape: xs,
            reason: "ktd input must be N x D".into(),
        });
    }
    let (vars, d) = (xs[0], xs[1]);
    let s = p.segment_len;
    let n = segment_count(d, s)?;

    // one flattened (variate-major) segment per row: [n, N*S]
    let rows = (0..n)
        .map(|j| x.slice_last(j * s, (j + 1) * s)?.reshape([1, vars * s]))
        .collect::<Result<Vec<_>>>()?;
    let snapshots = p.encoder.forward(Var::concat_first(&rows)?)?;
    let m = snapshots.shape()[1];

    // row-stacked here, so Z_back^T Z_back of the column layout is back * back^T
    let back = snapshots.slice_first(0, n - 1)?;
    let fore_cols = snapshots.slice_first(1, n)?.transpose()?;
    let mut gram = back.matmul(back.transpose()?)?;
    if p.eps > 0.0 {
        gram = gram.add(tape.constant(Tensor::eye(n - 1)?.scale(p.eps)))?;
    }

    let mut v = snapshots.slice_first(n - 1, n)?.transpose()?;
    let mut predicted = Vec::with_capacity(n);
    for _ in 0..n {
        let rhs = back.matmul(v)?;
        let coeff = if p.eps > 0.0 {
            gram.solve(rhs)?
        } else {
            pinv_solve(gram, rhs)?
        };
        v = fore_cols.matmul(coeff)?;
        predicted.push(v);
    }
    let predicted = Var::concat_last(&predicted)?.transpose()?;
    debug_assert_eq!(predicted.shape(), vec![n, m]);

    let decoded = p.decoder.forward(predicted)?;
    let flat = decoded.shape()[1];
    if flat != vars * s {
        return Err(Error::dim("ktd decoder", &[n, vars * s], &[n, flat]));
    }
    let blocks = (0..n)
        .map(|j| decoded.slice_first(j, j + 1)?.reshape([vars, s]))
        .collect::<Result<Vec<_>>>()?;
    Var::concat_last(&blocks)
}

pub fn ktd_forward(x: &Tensor, p: &KtdParams<Tensor>) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = p.map_named("", &mut |_, t| Ok(tape.constant(t.clone())))?;
    Ok(ktd_forward_tape(tape.constant(x.clone()), &bound)?.value())
}
