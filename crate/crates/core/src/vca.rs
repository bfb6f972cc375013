//! Variable Correlation Attention.
//!
//! Tokens are variates (`N x D`). Queries and keys are correlated along the
//! token axis `D` at every circular lag, the lags are collapsed with the
//! learnable weights `lambda`, and the resulting `N x N` score map is
//! row-softmaxed to mix the values. Single head, output projection `W_o`.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::lagcorr::{aggregate_scores_tape, lagged_corr_tape};
use crate::nn::{join, uniform};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct VcaParams<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
    pub lambda: T,
}

impl VcaParams<Tensor> {
    /// Projections uniform in `+-1/sqrt(D)`, `W_o = I + U(-0.01, 0.01)`,
    /// uniform `lambda = 1/D`.
    pub fn init<R: Rng>(rng: &mut R, d: usize) -> Result<Self> {
        let bound = 1.0 / (d as f64).sqrt();
        Ok(VcaParams {
            w_q: uniform(rng, &[d, d], bound)?,
            w_k: uniform(rng, &[d, d], bound)?,
            w_v: uniform(rng, &[d, d], bound)?,
            w_o: Tensor::eye(d)?.add(&uniform(rng, &[d, d], 0.01)?)?,
            lambda: Tensor::full([d], 1.0 / d as f64)?,
        })
    }

    pub fn width(&self) -> usize {
        self.w_q.last_dim()
    }
}

impl<T> VcaParams<T> {
    pub fn map_named<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> Result<U>) -> Result<VcaParams<U>> {
        Ok(VcaParams {
            w_q: f(&join(prefix, "w_q"), &self.w_q)?,
            w_k: f(&join(prefix, "w_k"), &self.w_k)?,
            w_v: f(&join(prefix, "w_v"), &self.w_v)?,
            w_o: f(&join(prefix, "w_o"), &self.w_o)?,
            lambda: f(&join(prefix, "lambda"), &self.lambda)?,
        })
    }
}

pub struct VcaOutput<'t> {
    /// `N x D` layer output.
    pub output: Var<'t>,
    /// `N x N` pre-softmax score map; row `i` is query variate `i`.
    pub scores: Var<'t>,
}

pub fn vca_forward_tape<'t>(x: Var<'t>, p: &VcaParams<Var<'t>>) -> Result<VcaOutput<'t>> {
    let xs = x.shape();
    let d = p.w_q.shape()[0];
    if xs.len() != 2 || xs[1] != d {
        return Err(Error::dim("vca_forward", &xs, &p.w_q.shape()));
    }
    let q = x.matmul(p.w_q)?;
    let k = x.matmul(p.w_k)?;
    let v = x.matmul(p.w_v)?;
    let scores = aggregate_scores_tape(lagged_corr_tape(q, k)?, p.lambda)?;
    let attn = scores.softmax_rows()?;
    let output = attn.matmul(v)?.matmul(p.w_o)?;
    Ok(VcaOutput { output, scores })
}

fn bind<'t>(tape: &'t Tape, p: &VcaParams<Tensor>) -> Result<VcaParams<Var<'t>>> {
    p.map_named("", &mut |_, t| Ok(tape.constant(t.clone())))
}

/// Evaluates the layer, returning `(output, pre-softmax scores)`.
pub fn vca_forward(x: &Tensor, p: &VcaParams<Tensor>) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    let out = vca_forward_tape(tape.constant(x.clone()), &bind(&tape, p)?)?;
    Ok((out.output.value(), out.scores.value()))
}

/// The `N x N` pre-softmax correlation map for input `x`.
pub fn export_corr_map(x: &Tensor, p: &VcaParams<Tensor>) -> Result<Tensor> {
    Ok(vca_forward(x, p)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::lagcorr::{aggregate_scores, lagged_corr_fft, lagged_corr_naive, LagWeights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        uniform(rng, shape, 1.0).unwrap()
    }

    fn params(d: usize, seed: u64) -> VcaParams<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = VcaParams::init(&mut rng, d).unwrap();
        p.lambda = random(&[d], &mut rng);
        p
    }

    /// Straight-line evaluation through the roll-based correlation.
    fn naive_vca(x: &Tensor, p: &VcaParams<Tensor>) -> Tensor {
        let q = x.matmul(&p.w_q).unwrap();
        let k = x.matmul(&p.w_k).unwrap();
        let v = x.matmul(&p.w_v).unwrap();
        let r = lagged_corr_naive(&q, &k).unwrap();
        let cor = aggregate_scores(&r, &LagWeights { lambda: p.lambda.clone() }).unwrap();
        cor.softmax_rows().unwrap().matmul(&v).unwrap().matmul(&p.w_o).unwrap()
    }

    #[test]
    fn single_variate_passes_values_through() {
        let p = params(6, 1);
        let x = random(&[1, 6], &mut ChaCha8Rng::seed_from_u64(2));
        let (out, _) = vca_forward(&x, &p).unwrap();
        let want = x.matmul(&p.w_v).unwrap().matmul(&p.w_o).unwrap();
        assert!(out.max_abs_diff(&want).unwrap() < 1e-14);
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let d = 4;
        let eye = Tensor::eye(d).unwrap();
        let p = VcaParams {
            w_q: eye.clone(),
            w_k: eye.clone(),
            w_v: eye.clone(),
            w_o: eye,
            lambda: random(&[d], &mut ChaCha8Rng::seed_from_u64(3)),
        };
        let row = vec![0.3, -1.0, 2.0, 0.5];
        let x = Tensor::from_rows(&[row.clone(), vec![1.0, 0.0, -0.5, 0.2], row]).unwrap();
        let (out, scores) = vca_forward(&x, &p).unwrap();
        assert!(out.row(0).iter().zip(out.row(2)).all(|(a, b)| (a - b).abs() < 1e-14));
        // swapping rows 0 and 2 leaves the score map unchanged
        let a = scores.softmax_rows().unwrap();
        for j in 0..3 {
            assert!((a.get(&[0, j]) - a.get(&[2, j])).abs() < 1e-14);
        }
        assert!((a.get(&[0, 0]) - a.get(&[0, 2])).abs() < 1e-14);
    }

    #[test]
    fn fast_path_matches_naive_oracle() {
        let p = params(8, 4);
        let x = random(&[3, 8], &mut ChaCha8Rng::seed_from_u64(5));
        let (out, _) = vca_forward(&x, &p).unwrap();
        assert!(out.max_abs_diff(&naive_vca(&x, &p)).unwrap() < 1e-8);
    }

    #[test]
    fn corr_map_contract() {
        let p = params(8, 6);
        let zero = Tensor::zeros([5, 8]).unwrap();
        let m = export_corr_map(&zero, &p).unwrap();
        assert_eq!(m.shape(), &[5, 5]);
        assert_eq!(m.max_abs(), 0.0);

        let x = random(&[5, 8], &mut ChaCha8Rng::seed_from_u64(7));
        let map = export_corr_map(&x, &p).unwrap();
        let r = lagged_corr_fft(&x.matmul(&p.w_q).unwrap(), &x.matmul(&p.w_k).unwrap()).unwrap();
        let outside = aggregate_scores(&r, &LagWeights { lambda: p.lambda.clone() }).unwrap();
        assert!(map.max_abs_diff(&outside).unwrap() < 1e-13);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let p = params(8, 8);
        assert!(vca_forward(&Tensor::zeros([3, 6]).unwrap(), &p).is_err());
    }

    #[test]
    fn permutation_equivariance() {
        let p = params(8, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random(&[5, 8], &mut rng);
        let perm = [3usize, 0, 4, 1, 2];
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| x.row(i).to_vec()).collect();
        let px = Tensor::from_rows(&rows).unwrap();
        let (out, _) = vca_forward(&x, &p).unwrap();
        let (pout, _) = vca_forward(&px, &p).unwrap();
        for (r, &i) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!((pout.get(&[r, c]) - out.get(&[i, c])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let p = params(8, 11);
        let x = random(&[6, 8], &mut ChaCha8Rng::seed_from_u64(12)).scale(3.0);
        let a = export_corr_map(&x, &p).unwrap().softmax_rows().unwrap();
        for r in 0..6 {
            assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_check_all_params_and_input() {
        let p = params(4, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random(&[3, 4], &mut rng);
        let w = random(&[3, 4], &mut rng);
        let mut named = vec![("x".to_string(), x)];
        p.map_named("vca", &mut |n, t| {
            named.push((n.to_string(), t.clone()));
            Ok(())
        })
        .unwrap();
        let report = grad_check(
            |tape, v| {
                let vp = VcaParams { w_q: v[1], w_k: v[2], w_v: v[3], w_o: v[4], lambda: v[5] };
                let out = vca_forward_tape(v[0], &vp)?.output;
                Ok(out.mul(tape.constant(w.clone()))?.sum())
            },
            &named,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:#?}");
    }
}
