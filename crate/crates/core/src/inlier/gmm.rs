use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Cholesky;
use crate::error::{AsdError, Result};
use crate::util;

pub const MAX_ITER: usize = 200;
/// EM stops once the mean log-likelihood improves by less than this.
pub const TOL: f64 = 1e-6;
/// Diagonal jitter, relative to the mean per-feature variance of the fit set.
pub const REG_SCALE: f64 = 1e-6;
/// Components lighter than this are considered collapsed.
pub const COLLAPSE_WEIGHT: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceType {
    #[default]
    Full,
    Diagonal,
}

#[derive(Debug, Clone)]
enum Factor {
    Full(Cholesky),
    Diagonal { inv: Vec<f64>, log_det: f64 },
}

impl Factor {
    fn new(cov: &[f64], dim: usize, kind: CovarianceType) -> Result<Self> {
        match kind {
            CovarianceType::Full => Cholesky::new(cov, dim).map(Factor::Full),
            CovarianceType::Diagonal => {
                if cov.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(AsdError::Numerical("non-positive diagonal variance".into()));
                }
                Ok(Factor::Diagonal {
                    inv: cov.iter().map(|v| 1.0 / v).collect(),
                    log_det: cov.iter().map(|v| v.ln()).sum(),
                })
            }
        }
    }

    fn log_normal(&self, diff: &[f64]) -> f64 {
        let (log_det, maha) = match self {
            Factor::Full(c) => (c.log_det(), c.mahalanobis_sq(diff)),
            Factor::Diagonal { inv, log_det } => (*log_det, diff.iter().zip(inv).map(|(d, i)| d * d * i).sum()),
        };
        -0.5 * (diff.len() as f64 * LN_2PI + log_det + maha)
    }
}

/// Gaussian mixture fitted by EM. Scores are negative log-likelihoods.
#[derive(Debug, Clone)]
pub struct Gmm {
    dim: usize,
    covariance_type: CovarianceType,
    reg: f64,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// `dim x dim` row-major for full, `dim` variances for diagonal; jitter included.
    covariances: Vec<Vec<f64>>,
    trace: Vec<f64>,
    converged: bool,
    factors: Vec<Factor>,
}

enum EmFailure {
    Collapsed(usize),
    Error(AsdError),
}

impl From<AsdError> for EmFailure {
    fn from(e: AsdError) -> Self {
        EmFailure::Error(e)
    }
}

pub(crate) fn check_points(data: &[Vec<f64>]) -> Result<usize> {
    let dim = data.first().map(Vec::len).ok_or_else(|| AsdError::InvalidInput("empty fit set".into()))?;
    if dim == 0 {
        return Err(AsdError::InvalidInput("zero-dimensional points".into()));
    }
    for (i, x) in data.iter().enumerate() {
        if x.len() != dim {
            return Err(AsdError::Shape(format!("point {i} has {} dims, expected {dim}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AsdError::InvalidInput(format!("point {i} is not finite")));
        }
    }
    Ok(dim)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn kmeans_pp<R: Rng>(data: &[Vec<f64>], p: usize, rng: &mut R) -> Vec<usize> {
    let n = data.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &data[chosen[0]])).collect();
    while chosen.len() < p {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &data[next]));
        }
    }
    chosen
}

impl Gmm {
    /// Fits `p` components. A collapsed component triggers one re-initialization
    /// from a derived seed; a second collapse is an error.
    pub fn fit(data: &[Vec<f64>], p: usize, covariance_type: CovarianceType, seed: u64) -> Result<Self> {
        let dim = check_points(data)?;
        if p == 0 {
            return Err(AsdError::Config("GMM needs at least one component".into()));
        }
        if data.len() < p {
            return Err(AsdError::InvalidInput(format!(
                "GMM with {p} components needs at least {p} points, got {}",
                data.len()
            )));
        }
        let n = data.len() as f64;
        let mean_var = (0..dim)
            .map(|j| {
                let mu = data.iter().map(|x| x[j]).sum::<f64>() / n;
                data.iter().map(|x| (x[j] - mu).powi(2)).sum::<f64>() / n
            })
            .sum::<f64>()
            / dim as f64;
        let reg = if mean_var > 0.0 { REG_SCALE * mean_var } else { REG_SCALE };
        for attempt in 0..2u64 {
            let mut rng = util::rng_for(seed, &[util::str_salt("gmm-init"), attempt]);
            match Self::em(data, dim, p, covariance_type, reg, &mut rng) {
                Ok(g) => return Ok(g),
                Err(EmFailure::Collapsed(j)) if attempt == 0 => {
                    log::warn!("GMM component {j} collapsed, re-seeding");
                }
                Err(EmFailure::Collapsed(j)) => {
                    return Err(AsdError::Numerical(format!(
                        "GMM component {j} collapsed again after re-seeding"
                    )))
                }
                Err(EmFailure::Error(e)) => return Err(e),
            }
        }
        unreachable!()
    }

    fn em<R: Rng>(
        data: &[Vec<f64>],
        dim: usize,
        p: usize,
        covariance_type: CovarianceType,
        reg: f64,
        rng: &mut R,
    ) -> std::result::Result<Self, EmFailure> {
        let centers = kmeans_pp(data, p, rng);
        let mut resp: Vec<Vec<f64>> = data
            .iter()
            .map(|x| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (k, &c) in centers.iter().enumerate() {
                    let d = sq_dist(x, &data[c]);
                    if d < best_d {
                        best = k;
                        best_d = d;
                    }
                }
                let mut r = vec![0.0; p];
                r[best] = 1.0;
                r
            })
            .collect();
        let mut model = Gmm {
            dim,
            covariance_type,
            reg,
            weights: Vec::new(),
            means: Vec::new(),
            covariances: Vec::new(),
            trace: Vec::new(),
            converged: false,
            factors: Vec::new(),
        };
        for _ in 0..MAX_ITER {
            model.m_step(data, &resp)?;
            let ll = model.e_step(data, &mut resp);
            let prev = model.trace.last().copied();
            model.trace.push(ll);
            if let Some(prev) = prev {
                if (ll - prev).abs() < TOL {
                    model.converged = true;
                    break;
                }
            }
        }
        Ok(model)
    }

    fn m_step(&mut self, data: &[Vec<f64>], resp: &[Vec<f64>]) -> std::result::Result<(), EmFailure> {
        let (n, p, d) = (data.len(), resp[0].len(), self.dim);
        self.weights.clear();
        self.means.clear();
        self.covariances.clear();
        self.factors.clear();
        for k in 0..p {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            let w = nk / n as f64;
            if !(w >= COLLAPSE_WEIGHT) {
                return Err(EmFailure::Collapsed(k));
            }
            let mut mu = vec![0.0; d];
            for (x, r) in data.iter().zip(resp) {
                if r[k] != 0.0 {
                    for (m, v) in mu.iter_mut().zip(x) {
                        *m += r[k] * v;
                    }
                }
            }
            mu.iter_mut().for_each(|m| *m /= nk);
            let cov = match self.covariance_type {
                CovarianceType::Full => {
                    let mut c = vec![0.0; d * d];
                    let mut diff = vec![0.0; d];
                    for (x, r) in data.iter().zip(resp) {
                        let w = r[k];
                        if w == 0.0 {
                            continue;
                        }
                        for j in 0..d {
                            diff[j] = x[j] - mu[j];
                        }
                        for i in 0..d {
                            let wi = w * diff[i];
                            let row = &mut c[i * d..i * d + i + 1];
                            for (cij, dj) in row.iter_mut().zip(&diff[..=i]) {
                                *cij += wi * dj;
                            }
                        }
                    }
                    for i in 0..d {
                        for j in 0..=i {
                            let v = c[i * d + j] / nk + if i == j { self.reg } else { 0.0 };
                            c[i * d + j] = v;
                            c[j * d + i] = v;
                        }
                    }
                    c
                }
                CovarianceType::Diagonal => (0..d)
                    .map(|j| {
                        data.iter().zip(resp).map(|(x, r)| r[k] * (x[j] - mu[j]).powi(2)).sum::<f64>() / nk + self.reg
                    })
                    .collect(),
            };
            self.factors.push(Factor::new(&cov, d, self.covariance_type)?);
            self.weights.push(w);
            self.means.push(mu);
            self.covariances.push(cov);
        }
        Ok(())
    }

    /// Updates responsibilities and returns the mean log-likelihood.
    fn e_step(&self, data: &[Vec<f64>], resp: &mut [Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (x, r) in data.iter().zip(resp.iter_mut()) {
            let lp = self.component_log_probs(x);
            let lse = log_sum_exp(&lp);
            for (rk, l) in r.iter_mut().zip(&lp) {
                *rk = (l - lse).exp();
            }
            total += lse;
        }
        total / data.len() as f64
    }

    /// `log w_k + log N(x; mu_k, Sigma_k)` for every component.
    pub fn component_log_probs(&self, x: &[f64]) -> Vec<f64> {
        let mut diff = vec![0.0; self.dim];
        self.factors
            .iter()
            .zip(&self.means)
            .zip(&self.weights)
            .map(|((f, mu), w)| {
                for j in 0..self.dim {
                    diff[j] = x[j] - mu[j];
                }
                w.ln() + f.log_normal(&diff)
            })
            .collect()
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_probs(x))
    }

    /// Negative log-likelihood; higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(AsdError::Shape(format!("query has {} dims, model has {}", x.len(), self.dim)));
        }
        Ok(-self.log_likelihood(x))
    }

    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let lp = self.component_log_probs(x);
        let lse = log_sum_exp(&lp);
        lp.iter().map(|l| (l - lse).exp()).collect()
    }

    /// Rebuilds a model from stored parameters.
    pub fn from_parts(
        covariance_type: CovarianceType,
        reg: f64,
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = means.first().map(Vec::len).unwrap_or(0);
        let cov_len = match covariance_type {
            CovarianceType::Full => dim * dim,
            CovarianceType::Diagonal => dim,
        };
        if weights.is_empty()
            || weights.len() != means.len()
            || weights.len() != covariances.len()
            || means.iter().any(|m| m.len() != dim)
            || covariances.iter().any(|c| c.len() != cov_len)
        {
            return Err(AsdError::Shape("inconsistent GMM parameters".into()));
        }
        let factors = covariances
            .iter()
            .map(|c| Factor::new(c, dim, covariance_type))
            .collect::<Result<_>>()?;
        Ok(Gmm {
            dim,
            covariance_type,
            reg,
            weights,
            means,
            covariances,
            trace: Vec::new(),
            converged: true,
            factors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn covariance_type(&self) -> CovarianceType {
        self.covariance_type
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<f64>] {
        &self.covariances
    }

    /// Mean log-likelihood of the fit set after each EM iteration.
    pub fn log_likelihood_trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn converged(&self) -> bool {
        self.converged
    }
}
