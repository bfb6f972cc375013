//! Small dense solvers: Cholesky for SPD systems and a Jacobi eigensolver
//! for symmetric pseudo-inverse solves.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Tensor) -> Result<Self> {
        let (n, n2) = a.dims2()?;
        if n != n2 {
            return Err(Error::dim("cholesky", a.shape(), &[n2, n]));
        }
        let a = a.data();
        let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
        let tiny = scale * 1e-14;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > tiny) {
                return Err(Error::Numeric(format!(
                    "matrix is not positive definite: pivot {j} is {d:e}"
                )));
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { n, lower: l })
    }

    /// Solves `A X = B` for `B` of shape `n x m`.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor> {
        let (rows, m) = b.dims2()?;
        let n = self.n;
        if rows != n {
            return Err(Error::dim("cholesky solve", &[n, n], b.shape()));
        }
        let l = &self.lower;
        let mut x = b.data().to_vec();
        for c in 0..m {
            for i in 0..n {
                let mut s = x[i * m + c];
                for k in 0..i {
                    s -= l[i * n + k] * x[k * m + c];
                }
                x[i * m + c] = s / l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = x[i * m + c];
                for k in i + 1..n {
                    s -= l[k * n + i] * x[k * m + c];
                }
                x[i * m + c] = s / l[i * n + i];
            }
        }
        Tensor::new(vec![n, m], x)
    }
}

/// Solves the SPD system `A X = B`.
pub fn solve_spd(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Cholesky::factor(a)?.solve(b)
}

/// Solves a general square system `A X = B` by Gaussian elimination with
/// partial pivoting. Fails when a pivot falls below `1e-13` times the largest
/// entry of `A`.
pub fn lu_solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, n2) = a.dims2()?;
    let (rows, m) = b.dims2()?;
    if n != n2 || rows != n {
        return Err(Error::dim("lu_solve", a.shape(), b.shape()));
    }
    let mut lu = a.data().to_vec();
    let mut x = b.data().to_vec();
    let scale = a.max_abs();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| lu[i * n + col].abs().total_cmp(&lu[j * n + col].abs()))
            .expect("non-empty range");
        let pivot = lu[pivot_row * n + col];
        if !(pivot.abs() > 1e-13 * scale) {
            return Err(Error::Numeric(format!(
                "singular system: pivot {col} is {pivot:e}"
            )));
        }
        if pivot_row != col {
            for k in 0..n {
                lu.swap(col * n + k, pivot_row * n + k);
            }
            for k in 0..m {
                x.swap(col * m + k, pivot_row * m + k);
            }
        }
        for r in col + 1..n {
            let f = lu[r * n + col] / pivot;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                lu[r * n + k] -= f * lu[col * n + k];
            }
            for k in 0..m {
                x[r * m + k] -= f * x[col * m + k];
            }
        }
    }
    for r in (0..n).rev() {
        for k in 0..m {
            let mut s = x[r * m + k];
            for c in r + 1..n {
                s -= lu[r * n + c] * x[c * m + k];
            }
            x[r * m + k] = s / lu[r * n + r];
        }
    }
    Tensor::new(vec![n, m], x)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the row-major matrix whose COLUMNS are eigenvectors.
pub fn symmetric_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let (n, n2) = a.dims2()?;
    if n != n2 {
        return Err(Error::dim("symmetric_eigen", a.shape(), &[n2, n]));
    }
    let mut m = a.data().to_vec();
    let mut v = Tensor::eye(n)?.into_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let total: f64 = m.iter().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    Ok((values, Tensor::new(vec![n, n], v)?))
}

/// Minimum-norm solution `A^+ B` for symmetric positive semi-definite `A`.
/// Eigenvalues below `rcond * max_eigenvalue` are treated as zero.
pub fn pinv_solve_symmetric(a: &Tensor, b: &Tensor, rcond: f64) -> Result<Tensor> {
    let (values, vecs) = symmetric_eigen(a)?;
    let (n, m) = b.dims2()?;
    if n != values.len() {
        return Err(Error::dim("pinv_solve_symmetric", a.shape(), b.shape()));
    }
    let top = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cut = rcond * top;
    // X = V diag(1/lambda) V^T B
    let vt_b = vecs.transpose()?.matmul(b)?;
    let mut scaled = vt_b.into_vec();
    for (i, &lam) in values.iter().enumerate() {
        let inv = if lam.abs() > cut && lam.abs() > 0.0 { 1.0 / lam } else { 0.0 };
        for c in 0..m {
            scaled[i * m + c] *= inv;
        }
    }
    vecs.matmul(&Tensor::new(vec![n, m], scaled)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_identity_and_diagonal() {
        let b = Tensor::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap();
        assert_eq!(solve_spd(&Tensor::eye(2).unwrap(), &b).unwrap(), b);
        let a = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let x = solve_spd(&a, &Tensor::from_rows(&[vec![2.0], vec![4.0]]).unwrap()).unwrap();
        assert!(x.data().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn non_spd_names_the_pivot() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let msg = solve_spd(&a, &Tensor::ones([2, 1]).unwrap()).unwrap_err().to_string();
        assert!(msg.contains("pivot 1"), "{msg}");
    }

    #[test]
    fn lu_solves_nonsymmetric_systems() {
        let a = Tensor::from_rows(&[vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let x = lu_solve(&a, &b).unwrap();
        assert!(a.matmul(&x).unwrap().max_abs_diff(&b).unwrap() < 1e-13);
        let singular = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(lu_solve(&singular, &Tensor::ones([2, 1]).unwrap()).is_err());
    }

    #[test]
    fn eigen_reconstructs() {
        let a = Tensor::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 1.0],
        ])
        .unwrap();
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        let mut d = vec![0.0; 9];
        for i in 0..3 {
            d[i * 4] = vals[i];
        }
        let back = vecs
            .matmul(&Tensor::new([3, 3], d).unwrap())
            .unwrap()
            .matmul(&vecs.transpose().unwrap())
            .unwrap();
        assert!(back.max_abs_diff(&a).unwrap() < 1e-12);
    }

    #[test]
    fn pinv_on_rank_deficient_gram() {
        // Gram of two parallel vectors: rank one.
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let x = pinv_solve_symmetric(&a, &b, 1e-12).unwrap();
        // minimum-norm solution lies along [1, 2]: x = [1,2]/5
        assert!((x.data()[0] - 0.2).abs() < 1e-12 && (x.data()[1] - 0.4).abs() < 1e-12);
    }
}
