use crate::error::{AsdError, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub(crate) fn new(a: &[f64], n: usize) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(AsdError::Numerical(format!(
                            "matrix not positive definite (pivot {i} = {s:e})"
                        )));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { n, l })
    }

    pub(crate) fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// `v^T A^{-1} v` via forward substitution.
    pub(crate) fn mahalanobis_sq(&self, v: &[f64]) -> f64 {
        let n = self.n;
        let mut z = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s = v[i] - row.iter().zip(&z[..i]).map(|(a, b)| a * b).sum::<f64>();
            z[i] = s / self.l[i * n + i];
            acc += z[i] * z[i];
        }
        acc
    }
}
