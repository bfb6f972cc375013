//! Lagged cross-correlation between every query/key row pair.
//!
//! For rows `q_i`, `k_j` of length `L`, the lag-`tau` correlation is
//!
//! ```text
//! R(i, j, tau) = (1/L) * sum_t q_i[t] * k_j[(t - tau) mod L],   tau = 1..=L
//! ```
//!
//! stored at lag index `tau - 1`. The naive path evaluates this literally with
//! a circular roll and a Hadamard product per lag, `O(N^2 L^2)`. The fast path
//! uses the cross-power spectrum `F(q_i) * conj(F(k_j))` and one inverse
//! transform per pair, `O(N^2 L log L)`.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{cross_spectrum_value, Var};
use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Tensor};

/// `N x N x L` lag-correlation values; entry `(i, j, tau - 1)` is `R(i, j, tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCorrTensor {
    values: Tensor,
}

impl LagCorrTensor {
    pub fn new(values: Tensor) -> Result<Self> {
        match values.shape() {
            [a, b, _] if a == b => Ok(LagCorrTensor { values }),
            s => Err(Error::Shape {
                shape: s.to_vec(),
                reason: "lag correlations must be N x N x L".into(),
            }),
        }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn lags(&self) -> usize {
        self.values.shape()[2]
    }

    /// `R(i, j, tau)` for `tau` in `1..=L`.
    pub fn at(&self, i: usize, j: usize, tau: usize) -> f64 {
        self.values.get(&[i, j, tau - 1])
    }

    /// The `N x N` slice at lag `tau`.
    pub fn lag_slice(&self, tau: usize) -> Tensor {
        let (n, l) = (self.n(), self.lags());
        let data = (0..n * n).map(|p| self.values.data()[p * l + tau - 1]).collect();
        Tensor::from_parts(vec![n, n], data)
    }
}

/// Learnable lag-aggregation weights, one per lag.
#[derive(Debug, Clone, PartialEq)]
pub struct LagWeights {
    pub lambda: Tensor,
}

impl LagWeights {
    pub fn uniform(lags: usize) -> Result<Self> {
        Ok(LagWeights {
            lambda: Tensor::full([lags], 1.0 / lags as f64)?,
        })
    }
}

fn check_pair(q: &Tensor, k: &Tensor) -> Result<(usize, usize)> {
    let (nq, lq) = q.dims2()?;
    let (nk, lk) = k.dims2()?;
    if nq != nk || lq != lk {
        return Err(Error::dim("lagged_corr", q.shape(), k.shape()));
    }
    Ok((nq, lq))
}

/// Reference evaluation by explicit roll-and-dot for every lag.
pub fn lagged_corr_naive(q: &Tensor, k: &Tensor) -> Result<LagCorrTensor> {
    let (n, l) = check_pair(q, k)?;
    let mut out = vec![0.0; n * n * l];
    let inv = 1.0 / l as f64;
    for tau in 1..=l {
        let rolled = k.roll_last_axis(tau as isize);
        for i in 0..n {
            let qi = q.row(i);
            for j in 0..n {
                let dot: f64 = qi.iter().zip(rolled.row(j)).map(|(a, b)| a * b).sum();
                out[(i * n + j) * l + tau - 1] = dot * inv;
            }
        }
    }
    LagCorrTensor::new(Tensor::from_parts(vec![n, n, l], out))
}

/// Wiener-Khinchin evaluation: `(1/L) * irfft(rfft(q_i) * conj(rfft(k_j)))`.
pub fn lagged_corr_fft(q: &Tensor, k: &Tensor) -> Result<LagCorrTensor> {
    let (n, l) = check_pair(q, k)?;
    let cross = cross_spectrum_value(&q.rfft_last_axis().to_pairs(), &k.rfft_last_axis().to_pairs())?;
    let circ = ComplexTensor::from_pairs(&cross)?.irfft_last_axis(l)?;
    // circ[p][m] = sum_t q[t] k[t - m]; lag tau lives at m = tau mod L, index tau - 1
    let lagged = circ.scale(1.0 / l as f64).roll_last_axis(-1);
    LagCorrTensor::new(lagged.reshape([n, n, l])?)
}

/// Differentiable fast path; returns `[N * N, L]` with pair `(i, j)` at row `i * N + j`.
pub fn lagged_corr_tape<'t>(q: Var<'t>, k: Var<'t>) -> Result<Var<'t>> {
    let (qs, ks) = (q.shape(), k.shape());
    if qs.len() != 2 || qs != ks {
        return Err(Error::dim("lagged_corr", &qs, &ks));
    }
    let l = qs[1];
    Ok(q.rfft()
        .cross_spectrum(k.rfft())?
        .irfft(l)?
        .scale(1.0 / l as f64)
        .roll_last_axis(-1))
}

/// `COR(i, j) = sum_tau lambda_tau * R(i, j, tau)`.
pub fn aggregate_scores(r: &LagCorrTensor, w: &LagWeights) -> Result<Tensor> {
    let (n, l) = (r.n(), r.lags());
    if w.lambda.len() != l {
        return Err(Error::dim("aggregate_scores", r.values.shape(), w.lambda.shape()));
    }
    r.values
        .reshape([n * n, l])?
        .matmul(&w.lambda.reshape([l, 1])?)?
        .reshape([n, n])
}

/// Differentiable aggregation of `[N * N, L]` correlations into `N x N` scores.
pub fn aggregate_scores_tape<'t>(r: Var<'t>, lambda: Var<'t>) -> Result<Var<'t>> {
    let rs = r.shape();
    let l = lambda.shape().iter().product::<usize>();
    let n = (rs[0] as f64).sqrt().round() as usize;
    if rs.len() != 2 || rs[1] != l || n * n != rs[0] {
        return Err(Error::dim("aggregate_scores", &rs, &lambda.shape()));
    }
    r.matmul(lambda.reshape([l, 1])?)?.reshape([n, n])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub len: usize,
    pub naive_ns: u128,
    pub fft_ns: u128,
    pub max_abs_diff: f64,
}

impl BenchRow {
    pub fn speedup(&self) -> f64 {
        self.naive_ns as f64 / self.fft_ns.max(1) as f64
    }
}

fn time_min<T>(mut f: impl FnMut() -> Result<T>) -> Result<(u128, T)> {
    let start = Instant::now();
    let mut out = f()?;
    let mut best = start.elapsed().as_nanos();
    let budget = 50_000_000u128;
    let mut spent = best;
    let mut reps = 1;
    while spent < budget && reps < 200 {
        let t = Instant::now();
        out = f()?;
        let e = t.elapsed().as_nanos();
        best = best.min(e);
        spent += e;
        reps += 1;
    }
    Ok((best, out))
}

/// Times both paths over `(N, L)` sizes on uniform random inputs and checks
/// that they agree.
pub fn bench_lagcorr(sizes: &[(usize, usize)], seed: u64) -> Result<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(sizes.len());
    for &(n, len) in sizes {
        let mut sample = || {
            Tensor::new(
                vec![n, len],
                (0..n * len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        };
        let q = sample()?;
        let k = sample()?;
        let (naive_ns, slow) = time_min(|| lagged_corr_naive(&q, &k))?;
        let (fft_ns, fast) = time_min(|| lagged_corr_fft(&q, &k))?;
        let max_abs_diff = slow.values().max_abs_diff(fast.values())?;
        if max_abs_diff > 1e-9 {
            return Err(Error::Numeric(format!(
                "fft and naive lag correlation disagree by {max_abs_diff:e} at n={n}, len={len}"
            )));
        }
        rows.push(BenchRow {
            n,
            len,
            naive_ns,
            fft_ns,
            max_abs_diff,
        });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "n,len,naive_ns,fft_ns")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.n, r.len, r.naive_ns, r.fft_ns)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct double sum, independent of both roll and FFT.
    fn scalar_oracle(q: &[f64], k: &[f64], tau: usize) -> f64 {
        let l = q.len();
        (0..l).map(|t| q[t] * k[(t + l * 2 - tau % l) % l]).sum::<f64>() / l as f64
    }

    #[test]
    fn constant_series_correlate_to_one() {
        let ones = Tensor::ones([1, 4]).unwrap();
        let r = lagged_corr_naive(&ones, &ones).unwrap();
        for tau in 1..=4 {
            assert_eq!(r.at(0, 0, tau), 1.0);
        }
    }

    #[test]
    fn hand_evaluated_lag_one() {
        let q = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let k = Tensor::from_rows(&[vec![4.0, 3.0, 2.0, 1.0]]).unwrap();
        assert_eq!(lagged_corr_naive(&q, &k).unwrap().at(0, 0, 1), 6.5);
        assert!((lagged_corr_fft(&q, &k).unwrap().at(0, 0, 1) - 6.5).abs() < 1e-12);
    }

    #[test]
    fn full_period_lag_is_zero_shift_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random(&[3, 9], &mut rng);
        let k = random(&[3, 9], &mut rng);
        let r = lagged_corr_naive(&q, &k).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum();
                assert!((r.at(i, j, 9) - dot / 9.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn naive_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random(&[2, 7], &mut rng);
        let k = random(&[2, 7], &mut rng);
        let r = lagged_corr_naive(&q, &k).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for tau in 1..=7 {
                    assert!((r.at(i, j, tau) - scalar_oracle(q.row(i), k.row(j), tau)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn fft_matches_naive_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random(&[4, 37], &mut rng);
        let k = random(&[4, 37], &mut rng);
        let a = lagged_corr_naive(&q, &k).unwrap();
        let b = lagged_corr_fft(&q, &k).unwrap();
        assert!(a.values().max_abs_diff(b.values()).unwrap() < 1e-10);
    }

    #[test]
    fn delta_pins_lag_indexing() {
        let l = 8;
        for d in 0..l {
            let mut qd = vec![0.0; l];
            qd[0] = 1.0;
            let mut kd = vec![0.0; l];
            kd[d] = 1.0;
            let q = Tensor::new([1, l], qd).unwrap();
            let k = Tensor::new([1, l], kd).unwrap();
            let expected_tau = if d == 0 { l } else { l - d };
            for r in [lagged_corr_naive(&q, &k).unwrap(), lagged_corr_fft(&q, &k).unwrap()] {
                for tau in 1..=l {
                    let want = if tau == expected_tau { 1.0 / l as f64 } else { 0.0 };
                    assert!((r.at(0, 0, tau) - want).abs() < 1e-14, "d={d} tau={tau}");
                }
            }
        }
    }

    #[test]
    fn zeros_give_zeros() {
        let z = Tensor::zeros([3, 10]).unwrap();
        assert_eq!(lagged_corr_fft(&z, &z).unwrap().values().max_abs(), 0.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let a = Tensor::zeros([2, 5]).unwrap();
        let b = Tensor::zeros([2, 6]).unwrap();
        assert!(lagged_corr_naive(&a, &b).is_err());
        assert!(lagged_corr_fft(&a, &b).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random(&[3, 6], &mut rng);
        let k = random(&[3, 6], &mut rng);
        let r = lagged_corr_naive(&q, &k).unwrap();
        let mut onehot = vec![0.0; 6];
        onehot[2] = 1.0;
        let sel = aggregate_scores(&r, &LagWeights { lambda: Tensor::vector(onehot).unwrap() }).unwrap();
        assert!(sel.max_abs_diff(&r.lag_slice(3)).unwrap() < 1e-15);

        let avg = aggregate_scores(&r, &LagWeights::uniform(6).unwrap()).unwrap();
        let lam = random(&[6], &mut rng);
        let any = aggregate_scores(&r, &LagWeights { lambda: lam.clone() }).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mean = (1..=6).map(|t| r.at(i, j, t)).sum::<f64>() / 6.0;
                assert!((avg.get(&[i, j]) - mean).abs() < 1e-15);
                let loop_sum: f64 = (1..=6).map(|t| lam.data()[t - 1] * r.at(i, j, t)).sum();
                assert!((any.get(&[i, j]) - loop_sum).abs() < 1e-12);
            }
        }
        assert!(aggregate_scores(&r, &LagWeights::uniform(5).unwrap()).is_err());
    }

    #[test]
    fn auto_correlation_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random(&[3, 11], &mut rng);
        let r = lagged_corr_fft(&q, &q).unwrap();
        for i in 0..3 {
            for tau in 1..=11 {
                let x = q.row(i);
                let direct: f64 = (0..11).map(|t| x[t] * x[(t + 11 - tau % 11) % 11]).sum::<f64>() / 11.0;
                assert!((r.at(i, i, tau) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q1 = random(&[2, 16], &mut rng);
        let q2 = random(&[2, 16], &mut rng);
        let k = random(&[2, 16], &mut rng);
        let r = |q: &Tensor| lagged_corr_fft(q, &k).unwrap().values().clone();
        assert!(r(&q1.scale(2.5)).max_abs_diff(&r(&q1).scale(2.5)).unwrap() < 1e-10);
        let sum = r(&q1.add(&q2).unwrap());
        assert!(sum.max_abs_diff(&r(&q1).add(&r(&q2)).unwrap()).unwrap() < 1e-10);
    }

    #[test]
    fn standardized_rows_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let standardize = |t: Tensor| {
            let (n, l) = t.dims2().unwrap();
            let mut d = Vec::new();
            for i in 0..n {
                let row = t.row(i);
                let mean = row.iter().sum::<f64>() / l as f64;
                let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l as f64).sqrt();
                d.extend(row.iter().map(|v| (v - mean) / sd));
            }
            Tensor::new([n, l], d).unwrap()
        };
        for _ in 0..10 {
            let q = standardize(random(&[4, 20], &mut rng));
            let k = standardize(random(&[4, 20], &mut rng));
            let r = lagged_corr_fft(&q, &k).unwrap();
            assert!(r.values().max_abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn tape_path_matches_plain_and_differentiates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = random(&[3, 10], &mut rng);
        let k = random(&[3, 10], &mut rng);
        let lam = random(&[10], &mut rng);
        let tape = Tape::new();
        let r = lagged_corr_tape(tape.constant(q.clone()), tape.constant(k.clone())).unwrap();
        let plain = lagged_corr_naive(&q, &k).unwrap();
        assert!(r.value().reshape([3, 3, 10]).unwrap().max_abs_diff(plain.values()).unwrap() < 1e-12);

        let w = random(&[3, 3], &mut rng);
        let report = grad_check(
            |t, p| {
                let cor = aggregate_scores_tape(lagged_corr_tape(p[0], p[1])?, p[2])?;
                Ok(cor.mul(t.constant(w.clone()))?.sum())
            },
            &[("q".into(), q), ("k".into(), k), ("lambda".into(), lam)],
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "{report:#?}");
    }

    #[test]
    fn bench_smallest_and_small_cases() {
        let rows = bench_lagcorr(&[(1, 1), (8, 64)], 0).unwrap();
        assert_eq!(rows.len(), 2);
        let mut buf = Vec::new();
        write_bench_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,len,naive_ns,fft_ns\n1,1,"));
        assert_eq!(text.lines().count(), 3);
    }
}
