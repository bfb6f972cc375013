//! Complex FFT of arbitrary length.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley-Tukey kernel. Every
//! other length goes through Bluestein's chirp-z reformulation, which turns a
//! length-`n` DFT into a circular convolution of power-of-two length `m >= 2n-1`.
//! The transform is always exactly length `n`: no caller-visible zero padding,
//! so circular correlation over `n` points stays circular over `n` points.

use num_complex::Complex64;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

#[derive(Debug)]
enum Plan {
    Trivial,
    Radix2 {
        n: usize,
        twiddles: Vec<Complex64>,
        bitrev: Vec<usize>,
    },
    Bluestein {
        n: usize,
        chirp: Vec<Complex64>,
        kernel_spectrum: Vec<Complex64>,
        inner: Arc<Plan>,
    },
}

fn cache() -> &'static Mutex<HashMap<usize, Arc<Plan>>> {
    static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Plan>>>> = OnceLock::new();
    PLANS.get_or_init(|| Mutex::new(HashMap::new()))
}

fn plan_for(n: usize) -> Arc<Plan> {
    if let Some(p) = cache().lock().expect("fft plan cache poisoned").get(&n) {
        return Arc::clone(p);
    }
    let plan = Arc::new(build_plan(n));
    cache()
        .lock()
        .expect("fft plan cache poisoned")
        .entry(n)
        .or_insert(plan)
        .clone()
}

fn build_plan(n: usize) -> Plan {
    if n <= 1 {
        return Plan::Trivial;
    }
    if n.is_power_of_two() {
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| i.reverse_bits() >> (usize::BITS - bits))
            .collect();
        return Plan::Radix2 {
            n,
            twiddles,
            bitrev,
        };
    }

    let m = (2 * n - 1).next_power_of_two();
    // w_j = exp(-i*pi*j^2/n); reduce j^2 modulo 2n so the angle stays small.
    let chirp: Vec<Complex64> = (0..n)
        .map(|j| {
            let q = (j as u128 * j as u128 % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, -PI * q / n as f64)
        })
        .collect();
    let mut kernel = vec![Complex64::new(0.0, 0.0); m];
    kernel[0] = chirp[0].conj();
    for j in 1..n {
        kernel[j] = chirp[j].conj();
        kernel[m - j] = chirp[j].conj();
    }
    let inner = plan_for(m);
    run(&inner, &mut kernel);
    Plan::Bluestein {
        n,
        chirp,
        kernel_spectrum: kernel,
        inner,
    }
}

fn run(plan: &Plan, buf: &mut [Complex64]) {
    match plan {
        Plan::Trivial => {}
        Plan::Radix2 {
            n,
            twiddles,
            bitrev,
        } => {
            let n = *n;
            for i in 0..n {
                let j = bitrev[i];
                if i < j {
                    buf.swap(i, j);
                }
            }
            let mut len = 2;
            while len <= n {
                let half = len / 2;
                let step = n / len;
                for start in (0..n).step_by(len) {
                    for k in 0..half {
                        let w = twiddles[k * step];
                        let a = buf[start + k];
                        let b = buf[start + k + half] * w;
                        buf[start + k] = a + b;
                        buf[start + k + half] = a - b;
                    }
                }
                len <<= 1;
            }
        }
        Plan::Bluestein {
            n,
            chirp,
            kernel_spectrum,
            inner,
        } => {
            let m = kernel_spectrum.len();
            let mut work = vec![Complex64::new(0.0, 0.0); m];
            for j in 0..*n {
                work[j] = buf[j] * chirp[j];
            }
            run(inner, &mut work);
            for (w, k) in work.iter_mut().zip(kernel_spectrum) {
                *w *= k;
            }
            // inverse of the inner transform via the conjugation identity
            for w in work.iter_mut() {
                *w = w.conj();
            }
            run(inner, &mut work);
            let scale = 1.0 / m as f64;
            for k in 0..*n {
                buf[k] = work[k].conj() * scale * chirp[k];
            }
        }
    }
}

/// Unnormalized forward DFT: `X_k = sum_t x_t exp(-2 pi i k t / n)`.
pub fn fft(buf: &mut [Complex64]) {
    let plan = plan_for(buf.len());
    run(&plan, buf);
}

/// Unnormalized inverse DFT: `x_t = sum_k X_k exp(+2 pi i k t / n)`.
pub fn ifft_unnormalized(buf: &mut [Complex64]) {
    for v in buf.iter_mut() {
        *v = v.conj();
    }
    fft(buf);
    for v in buf.iter_mut() {
        *v = v.conj();
    }
}

/// Real-input forward transform returning the `n/2 + 1` non-redundant bins.
pub fn rfft(input: &[f64]) -> Vec<Complex64> {
    let n = input.len();
    let mut buf: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

/// Inverse of [`rfft`] for a length-`n` signal, normalized by `1/n`.
///
/// The imaginary parts of the DC bin (and of the Nyquist bin for even `n`)
/// are ignored, so the map is real-linear in the supplied half spectrum.
pub fn irfft(spectrum: &[Complex64], n: usize) -> Vec<f64> {
    assert_eq!(spectrum.len(), n / 2 + 1, "irfft: wrong number of bins");
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[..spectrum.len()].copy_from_slice(spectrum);
    full[0].im = 0.0;
    if n % 2 == 0 {
        full[n / 2].im = 0.0;
    }
    for k in spectrum.len()..n {
        full[k] = full[n - k].conj();
    }
    ifft_unnormalized(&mut full);
    let scale = 1.0 / n as f64;
    full.iter().map(|c| c.re * scale).collect()
}
