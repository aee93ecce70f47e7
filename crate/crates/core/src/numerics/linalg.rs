use super::tensor::{dot, norm, Tensor};
use crate::error::{Error, Result};

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
///
/// Symmetric bit-for-bit: `cosine_similarity(a, b) == cosine_similarity(b, a)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", &[a.len()], &[b.len()]));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector("cosine_similarity"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Column means of an `n x d` matrix.
pub fn column_means(rows: &Tensor) -> Vec<f64> {
    let (n, d) = (rows.rows(), rows.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(rows.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

/// Unbiased sample covariance `Xc^T Xc / (n - 1)` of the rows of `rows`.
/// The result is exactly symmetric.
pub fn covariance(rows: &Tensor) -> Result<Tensor> {
    let (n, d) = (rows.rows(), rows.cols());
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mean = column_means(rows);
    let mut centered = rows.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = Tensor::zeros(&[d, d]);
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let mut s = 0.0;
            for i in 0..n {
                let r = centered.row(i);
                s += r[a] * r[b];
            }
            let v = s / denom;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok(cov)
}

pub fn max_asymmetry(s: &Tensor) -> f64 {
    let n = s.rows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((s.get(i, j) - s.get(j, i)).abs());
        }
    }
    worst
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues, unsorted; `values[k]` pairs with column `k` of `vectors`.
    pub values: Vec<f64>,
    pub vectors: Tensor,
    pub sweeps: usize,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
pub fn symmetric_eigen(s: &Tensor) -> Result<SymmetricEigen> {
    let n = s.rows();
    if s.shape().len() != 2 || s.cols() != n {
        return Err(Error::shape("symmetric_eigen", &[n, n], s.shape()));
    }
    if !s.is_finite() {
        return Err(Error::Numerical(
            "eigendecomposition input contains non-finite values".into(),
        ));
    }
    let mut a = s.clone();
    let mut v = Tensor::identity(n);
    let scale = norm(a.data()).max(f64::MIN_POSITIVE);

    for sweep in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= 1e-15 * scale {
            return Ok(SymmetricEigen {
                values: (0..n).map(|i| a.get(i, i)).collect(),
                vectors: v,
                sweeps: sweep,
            });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(Error::Numerical(format!(
        "Jacobi eigendecomposition of {n}x{n} matrix did not converge in {MAX_SWEEPS} sweeps \
         (off-diagonal norm {:e}, Frobenius norm {:e})",
        off_diagonal_norm(&a),
        scale
    )))
}

fn off_diagonal_norm(a: &Tensor) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// `(S + eps I)^(-1/2)` for symmetric positive semidefinite `S`.
///
/// Eigenvalues slightly below zero from rounding are clamped to zero before
/// adding the ridge.
pub fn inverse_sqrt_psd(s: &Tensor, eps: f64) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::Numerical(format!("ridge eps must be > 0, got {eps}")));
    }
    let asym = max_asymmetry(s);
    if s.shape().len() != 2 || s.rows() != s.cols() {
        return Err(Error::shape("inverse_sqrt_psd", &[s.rows(), s.rows()], s.shape()));
    }
    if !(asym <= 1e-8) {
        return Err(Error::SymmetryViolation { max_asymmetry: asym });
    }
    let eig = symmetric_eigen(s)?;
    let n = s.rows();
    let weights: Vec<f64> = eig.values.iter().map(|&l| (l.max(0.0) + eps).powf(-0.5)).collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numerical(format!(
            "inverse square root overflow; eigenvalues {:?}",
            eig.values
        )));
    }
    let q = &eig.vectors;
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                acc += q.get(i, k) * w * q.get(j, k);
            }
            m.set(i, j, acc);
            m.set(j, i, acc);
        }
    }
    Ok(m)
}
