//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in execution
//! order. [`Tape::backward`] walks the record in exact reverse, accumulating
//! gradients additively, so fan-out is handled without special cases. Use one
//! tape per forward pass.

use std::cell::{Ref, RefCell};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::linalg;
use crate::tensor::{gelu_derivative, ComplexTensor, Tensor};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddRowVector(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
    },
    Relu(usize),
    Gelu(usize),
    Sum(usize),
    Mean(usize),
    Roll(usize, isize),
    SliceLast(usize, usize),
    SliceFirst(usize, usize),
    ConcatLast(Vec<usize>),
    ConcatFirst(Vec<usize>),
    Rfft(usize),
    Irfft(usize),
    CrossSpectrum(usize, usize),
    Solve(usize, usize),
    PinvSolve,
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | PinvSolve => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRowVector(a, b) | MatMul(a, b)
            | CrossSpectrum(a, b) | Solve(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Transpose(a) | Reshape(a) | SoftmaxRows(a) | Relu(a)
            | Gelu(a) | Sum(a) | Mean(a) | Roll(a, _) | SliceLast(a, _) | SliceFirst(a, _)
            | Rfft(a) | Irfft(a) => vec![*a],
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            ConcatLast(p) | ConcatFirst(p) => p.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var { tape: self, id }
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let needs_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].needs_grad)
        };
        self.push_node(value, op, needs_grad)
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse sweep from a scalar `loss`, seeded with 1.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss was recorded on a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        let seed = &nodes[loss.id].value;
        if seed.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                seed.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::from_parts(seed.shape().to_vec(), vec![1.0]));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].clone() else { continue };
            let contributions = backward_rule(&nodes, node, &g)?;
            for (input, contrib) in contributions {
                if !nodes[input].needs_grad {
                    continue;
                }
                grads[input] = Some(match grads[input].take() {
                    None => contrib,
                    Some(acc) => acc.add(&contrib)?,
                });
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn backward_rule(nodes: &[Node], node: &Node, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
    let val = |i: usize| &nodes[i].value;
    let needs = |i: usize| nodes[i].needs_grad;
    Ok(match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
        Op::Mul(a, b) => {
            let mut out = Vec::new();
            if needs(*a) {
                out.push((*a, g.mul(val(*b))?));
            }
            if needs(*b) {
                out.push((*b, g.mul(val(*a))?));
            }
            out
        }
        Op::Scale(a, c) => vec![(*a, g.scale(*c))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::AddRowVector(a, b) => {
            let gb = g.sum_rows().reshape(val(*b).shape().to_vec())?;
            vec![(*a, g.clone()), (*b, gb)]
        }
        Op::MatMul(a, b) => {
            let mut out = Vec::new();
            if needs(*a) {
                out.push((*a, g.matmul(&val(*b).transpose()?)?));
            }
            if needs(*b) {
                out.push((*b, val(*a).transpose()?.matmul(g)?));
            }
            out
        }
        Op::Transpose(a) => vec![(*a, g.transpose()?)],
        Op::Reshape(a) => vec![(*a, g.reshape(val(*a).shape().to_vec())?)],
        Op::SoftmaxRows(a) => {
            let y = &node.value;
            let n = y.last_dim();
            let mut out = Vec::with_capacity(y.len());
            for (yr, gr) in y.data().chunks_exact(n).zip(g.data().chunks_exact(n)) {
                let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                out.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - dot)));
            }
            vec![(*a, Tensor::from_parts(y.shape().to_vec(), out))]
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let xv = val(*x);
            let gam = val(*gamma).data();
            let n = xv.last_dim();
            let (means, inv_std) = xv.row_stats(*eps);
            let mut gx = Vec::with_capacity(xv.len());
            let mut ggam = vec![0.0; n];
            let mut gbeta = vec![0.0; n];
            for (r, (xr, gr)) in xv.data().chunks_exact(n).zip(g.data().chunks_exact(n)).enumerate() {
                let xhat: Vec<f64> = xr.iter().map(|v| (v - means[r]) * inv_std[r]).collect();
                let dxhat: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                for c in 0..n {
                    gx.push(inv_std[r] * (dxhat[c] - mean_d - xhat[c] * mean_dx));
                    ggam[c] += gr[c] * xhat[c];
                    gbeta[c] += gr[c];
                }
            }
            vec![
                (*x, Tensor::from_parts(xv.shape().to_vec(), gx)),
                (*gamma, Tensor::from_parts(val(*gamma).shape().to_vec(), ggam)),
                (*beta, Tensor::from_parts(val(*beta).shape().to_vec(), gbeta)),
            ]
        }
        Op::Relu(a) => vec![(*a, g.zip_map(val(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?)],
        Op::Gelu(a) => vec![(*a, g.zip_map(val(*a), "gelu", |gv, x| gv * gelu_derivative(x))?)],
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape().to_vec(), g.item()?)?)],
        Op::Mean(a) => {
            let v = val(*a);
            vec![(*a, Tensor::full(v.shape().to_vec(), g.item()? / v.len() as f64)?)]
        }
        Op::Roll(a, s) => vec![(*a, g.roll_last_axis(-*s))],
        Op::SliceLast(a, start) => {
            let src = val(*a);
            let n = src.last_dim();
            let w = g.last_dim();
            let mut out = vec![0.0; src.len()];
            for (r, gr) in g.data().chunks_exact(w).enumerate() {
                out[r * n + start..r * n + start + w].copy_from_slice(gr);
            }
            vec![(*a, Tensor::from_parts(src.shape().to_vec(), out))]
        }
        Op::SliceFirst(a, start) => {
            let src = val(*a);
            let stride = src.len() / src.shape()[0];
            let mut out = vec![0.0; src.len()];
            out[start * stride..start * stride + g.len()].copy_from_slice(g.data());
            vec![(*a, Tensor::from_parts(src.shape().to_vec(), out))]
        }
        Op::ConcatLast(parts) => {
            let mut off = 0;
            let mut out = Vec::with_capacity(parts.len());
            for &p in parts {
                let w = val(p).last_dim();
                out.push((p, g.slice_last(off, off + w)?));
                off += w;
            }
            out
        }
        Op::ConcatFirst(parts) => {
            let mut off = 0;
            let mut out = Vec::with_capacity(parts.len());
            for &p in parts {
                let h = val(p).shape()[0];
                out.push((p, g.slice_first(off, off + h)?));
                off += h;
            }
            out
        }
        Op::Rfft(a) => {
            // adjoint of the half-spectrum DFT: Re(sum_k G_k exp(+2 pi i k t / L))
            let src = val(*a);
            let l = src.last_dim();
            let bins = l / 2 + 1;
            let spec = ComplexTensor::from_pairs(g)?;
            let mut out = Vec::with_capacity(src.len());
            for row in spec.data().chunks_exact(bins) {
                let mut full = vec![Complex64::new(0.0, 0.0); l];
                full[..bins].copy_from_slice(row);
                fft::ifft_unnormalized(&mut full);
                out.extend(full.iter().map(|c| c.re));
            }
            vec![(*a, Tensor::from_parts(src.shape().to_vec(), out))]
        }
        Op::Irfft(a) => {
            // adjoint of the inverse: (c_k / L) * rfft(g), c_k = 1 at DC/Nyquist else 2
            let l = node.value.last_dim();
            let bins = l / 2 + 1;
            let mut spec = g.rfft_last_axis().to_pairs().into_vec();
            for (idx, v) in spec.chunks_exact_mut(2).enumerate() {
                let k = idx % bins;
                let weight = if k == 0 || (l % 2 == 0 && k == l / 2) { 1.0 } else { 2.0 };
                let f = weight / l as f64;
                v[0] *= f;
                v[1] *= f;
            }
            vec![(*a, Tensor::from_parts(val(*a).shape().to_vec(), spec))]
        }
        Op::CrossSpectrum(a, b) => {
            let fa = ComplexTensor::from_pairs(val(*a))?;
            let fb = ComplexTensor::from_pairs(val(*b))?;
            let gc = ComplexTensor::from_pairs(g)?;
            let (na, bins) = (fa.shape()[0], fa.shape()[1]);
            let nb = fb.shape()[0];
            let mut ga = vec![Complex64::new(0.0, 0.0); na * bins];
            let mut gb = vec![Complex64::new(0.0, 0.0); nb * bins];
            for i in 0..na {
                for j in 0..nb {
                    let grow = &gc.data()[(i * nb + j) * bins..(i * nb + j + 1) * bins];
                    for k in 0..bins {
                        ga[i * bins + k] += grow[k] * fb.data()[j * bins + k];
                        gb[j * bins + k] += grow[k].conj() * fa.data()[i * bins + k];
                    }
                }
            }
            vec![
                (*a, ComplexTensor::new(fa.shape().to_vec(), ga)?.to_pairs()),
                (*b, ComplexTensor::new(fb.shape().to_vec(), gb)?.to_pairs()),
            ]
        }
        Op::Solve(a, b) => {
            let gb = linalg::lu_solve(&val(*a).transpose()?, g)?;
            let ga = gb.matmul(&node.value.transpose()?)?.scale(-1.0);
            vec![(*a, ga), (*b, gb)]
        }
        Op::PinvSolve => {
            return Err(Error::Contract(
                "pseudo-inverse solve (ridge eps = 0) has no backward rule".into(),
            ))
        }
    })
}

/// Gradients produced by one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when no path connects it to the loss.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => Tensor::from_parts(
                self.shapes[var.id].clone(),
                vec![0.0; self.shapes[var.id].iter().product()],
            ),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn value_ref(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    fn binary(
        self,
        other: Var<'t>,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: Op,
    ) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.tape.push(value, op))
    }

    fn unary(self, f: impl FnOnce(&Tensor) -> Result<Tensor>, op: Op) -> Result<Var<'t>> {
        let value = f(&self.value_ref())?;
        Ok(self.tape.push(value, op))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Tensor::add, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Tensor::sub, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Tensor::mul, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value_ref().scale(c);
        self.tape.push(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value_ref().add_scalar(c);
        self.tape.push(v, Op::AddScalar(self.id))
    }

    pub fn add_row_vector(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.binary(bias, Tensor::add_row_vector, Op::AddRowVector(self.id, bias.id))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Tensor::matmul, Op::MatMul(self.id, other.id))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.unary(Tensor::transpose, Op::Transpose(self.id))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        self.unary(|t| t.reshape(shape), Op::Reshape(self.id))
    }

    pub fn softmax_rows(self) -> Result<Var<'t>> {
        self.unary(Tensor::softmax_rows, Op::SoftmaxRows(self.id))
    }

    pub fn layernorm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id]
                .value
                .layernorm(&nodes[gamma.id].value, &nodes[beta.id].value, eps)?
        };
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                eps,
            },
        ))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value_ref().relu();
        self.tape.push(v, Op::Relu(self.id))
    }

    pub fn gelu(self) -> Var<'t> {
        let v = self.value_ref().gelu();
        self.tape.push(v, Op::Gelu(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value_ref().sum());
        self.tape.push(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let v = Tensor::scalar(self.value_ref().mean());
        self.tape.push(v, Op::Mean(self.id))
    }

    pub fn roll_last_axis(self, shift: isize) -> Var<'t> {
        let v = self.value_ref().roll_last_axis(shift);
        self.tape.push(v, Op::Roll(self.id, shift))
    }

    pub fn slice_last(self, start: usize, end: usize) -> Result<Var<'t>> {
        self.unary(|t| t.slice_last(start, end), Op::SliceLast(self.id, start))
    }

    pub fn slice_first(self, start: usize, end: usize) -> Result<Var<'t>> {
        self.unary(|t| t.slice_first(start, end), Op::SliceFirst(self.id, start))
    }

    /// Half spectrum along the last axis as a real tensor `[..., L/2+1, 2]`.
    pub fn rfft(self) -> Var<'t> {
        let v = self.value_ref().rfft_last_axis().to_pairs();
        self.tape.push(v, Op::Rfft(self.id))
    }

    /// Inverse of [`Var::rfft`], producing `n` samples per row.
    pub fn irfft(self, n: usize) -> Result<Var<'t>> {
        self.unary(
            |t| ComplexTensor::from_pairs(t)?.irfft_last_axis(n),
            Op::Irfft(self.id),
        )
    }

    /// For spectra `a: [Na, F, 2]` and `b: [Nb, F, 2]`, every pair product
    /// `a_i * conj(b_j)`, laid out as `[Na * Nb, F, 2]` with `i` major.
    pub fn cross_spectrum(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, cross_spectrum_value, Op::CrossSpectrum(self.id, other.id))
    }

    /// `X` with `self * X = rhs`.
    pub fn solve(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, linalg::lu_solve, Op::Solve(self.id, rhs.id))
    }

    pub fn concat_last(parts: &[Var<'t>]) -> Result<Var<'t>> {
        concat(parts, Tensor::concat_last, Op::ConcatLast)
    }

    pub fn concat_first(parts: &[Var<'t>]) -> Result<Var<'t>> {
        concat(parts, Tensor::concat_first, Op::ConcatFirst)
    }
}

/// Minimum-norm `A^+ B` for symmetric PSD `A`, recorded as an opaque node:
/// usable for evaluation, rejected by `backward`.
pub fn pinv_solve<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let value = linalg::pinv_solve_symmetric(&a.value_ref(), &b.value_ref(), 1e-12)?;
    let needs = a.tape.nodes.borrow()[a.id].needs_grad || b.tape.nodes.borrow()[b.id].needs_grad;
    Ok(a.tape.push_node(value, Op::PinvSolve, needs))
}

fn concat<'t>(
    parts: &[Var<'t>],
    f: impl FnOnce(&[&Tensor]) -> Result<Tensor>,
    op: impl FnOnce(Vec<usize>) -> Op,
) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero variables".into()))?;
    let tape = first.tape;
    let value = {
        let nodes = tape.nodes.borrow();
        let refs: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
        f(&refs)?
    };
    Ok(tape.push(value, op(parts.iter().map(|p| p.id).collect())))
}

pub(crate) fn cross_spectrum_value(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let fa = ComplexTensor::from_pairs(a)?;
    let fb = ComplexTensor::from_pairs(b)?;
    if fa.shape().len() != 2 || fb.shape().len() != 2 || fa.shape()[1] != fb.shape()[1] {
        return Err(Error::dim("cross_spectrum", a.shape(), b.shape()));
    }
    let (na, bins) = (fa.shape()[0], fa.shape()[1]);
    let nb = fb.shape()[0];
    let mut out = Vec::with_capacity(na * nb * bins);
    for i in 0..na {
        let ra = &fa.data()[i * bins..(i + 1) * bins];
        for j in 0..nb {
            let rb = &fb.data()[j * bins..(j + 1) * bins];
            out.extend(ra.iter().zip(rb).map(|(x, y)| x * y.conj()));
        }
    }
    Ok(ComplexTensor::new(vec![na * nb, bins], out)?.to_pairs())
}

/// Per-parameter-group comparison of analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GroupCheck {
    pub name: String,
    pub max_abs_err: f64,
    /// `max_abs_err / max(|analytic|_inf, |numeric|_inf)`, or the absolute
    /// error when that scale is below `1e-8`.
    pub rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.rel_err).fold(0.0, f64::max)
    }
}

/// Checks the gradient of a scalar function of named parameters.
///
/// `f` is called once on a tape with parameters as trainable leaves, then
/// twice per coordinate with the coordinate displaced by
/// `+-h * max(1, |theta|)`.
pub fn grad_check<F>(f: F, params: &[(String, Tensor)], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars)?.value().item()
    };

    let mut current: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut groups = Vec::with_capacity(params.len());
    for (p, (name, base)) in params.iter().enumerate() {
        let mut numeric = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let theta = base.data()[i];
            let step = h * theta.abs().max(1.0);
            let mut plus = base.data().to_vec();
            plus[i] = theta + step;
            current[p] = Tensor::new(base.shape().to_vec(), plus)?;
            let fp = eval(&current)?;
            let mut minus = base.data().to_vec();
            minus[i] = theta - step;
            current[p] = Tensor::new(base.shape().to_vec(), minus)?;
            let fm = eval(&current)?;
            numeric.push((fp - fm) / (2.0 * step));
        }
        current[p] = base.clone();
        let numeric = Tensor::new(base.shape().to_vec(), numeric)?;
        let max_abs_err = analytic[p].max_abs_diff(&numeric)?;
        let scale = analytic[p].max_abs().max(numeric.max_abs());
        let rel_err = if scale < 1e-8 { max_abs_err } else { max_abs_err / scale };
        groups.push(GroupCheck {
            name: name.clone(),
            max_abs_err,
            rel_err,
            passed: rel_err <= tol,
        });
    }
    Ok(GradCheckReport { groups, tol })
}
