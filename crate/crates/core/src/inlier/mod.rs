//! Inlier models fitted on normal embeddings: a Gaussian mixture scored by
//! negative log-likelihood, and the local outlier factor.

mod gmm;
mod linalg;
mod lof;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AsdError, Result};
use crate::util;

pub use gmm::{CovarianceType, Gmm, COLLAPSE_WEIGHT, MAX_ITER, REG_SCALE, TOL};
pub use lof::{Lof, LRD_EPS};

const MAGIC: &[u8; 8] = b"ASDINLR\0";
pub const INLIER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InlierKind {
    Gmm,
    Lof,
}

impl InlierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InlierKind::Gmm => "gmm",
            InlierKind::Lof => "lof",
        }
    }
}

impl fmt::Display for InlierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InlierKind {
    type Err = AsdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gmm" => Ok(InlierKind::Gmm),
            "lof" => Ok(InlierKind::Lof),
            other => Err(AsdError::Config(format!("unknown inlier model {other:?} (expected gmm or lof)"))),
        }
    }
}

/// Where a model came from; stored in the artifact header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlierMeta {
    pub machine_type: String,
    pub product_id: usize,
    pub fit_set: String,
    pub fit_set_hash: String,
    pub n_fit: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InlierHeader {
    format_version: u32,
    kind: InlierKind,
    p: usize,
    dim: usize,
    n_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariance_type: Option<CovarianceType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    degenerate: Option<bool>,
    meta: InlierMeta,
}

/// SHA-256 over the little-endian bytes of the fit points.
pub fn fit_set_hash(points: &[Vec<f64>]) -> String {
    let bytes: Vec<u8> = points.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    util::sha256_hex(&bytes)
}

#[derive(Debug, Clone)]
pub enum InlierModel {
    Gmm(Gmm),
    Lof(Lof),
}

impl InlierModel {
    /// Fits a model of `kind` with hyperparameter `p` (components or neighbours).
    pub fn fit(kind: InlierKind, p: usize, points: Vec<Vec<f64>>, covariance: CovarianceType, seed: u64) -> Result<Self> {
        match kind {
            InlierKind::Gmm => Gmm::fit(&points, p, covariance, seed).map(InlierModel::Gmm),
            InlierKind::Lof => Lof::fit(points, p).map(InlierModel::Lof),
        }
    }

    pub fn kind(&self) -> InlierKind {
        match self {
            InlierModel::Gmm(_) => InlierKind::Gmm,
            InlierModel::Lof(_) => InlierKind::Lof,
        }
    }

    pub fn param(&self) -> usize {
        match self {
            InlierModel::Gmm(g) => g.n_components(),
            InlierModel::Lof(l) => l.k(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InlierModel::Gmm(g) => g.dim(),
            InlierModel::Lof(l) => l.dim(),
        }
    }

    /// Anomaly score; higher means less like the fit set.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            InlierModel::Gmm(g) => g.score(x),
            InlierModel::Lof(l) => l.score(x),
        }
    }

    pub fn save(&self, path: &Path, meta: &InlierMeta) -> Result<()> {
        let dim = self.dim();
        let (header, payload) = match self {
            InlierModel::Gmm(g) => {
                let mut payload = g.weights().to_vec();
                payload.extend(g.means().iter().flatten());
                payload.extend(g.covariances().iter().flatten());
                let header = InlierHeader {
                    format_version: INLIER_FORMAT_VERSION,
                    kind: InlierKind::Gmm,
                    p: g.n_components(),
                    dim,
                    n_points: meta.n_fit,
                    covariance_type: Some(g.covariance_type()),
                    reg: Some(g.reg()),
                    degenerate: None,
                    meta: meta.clone(),
                };
                (header, payload)
            }
            InlierModel::Lof(l) => {
                let mut payload: Vec<f64> = l.points().iter().flatten().copied().collect();
                payload.extend(l.k_distances());
                payload.extend(l.lrd());
                let header = InlierHeader {
                    format_version: INLIER_FORMAT_VERSION,
                    kind: InlierKind::Lof,
                    p: l.k(),
                    dim,
                    n_points: l.points().len(),
                    covariance_type: None,
                    reg: None,
                    degenerate: Some(l.is_degenerate()),
                    meta: meta.clone(),
                };
                (header, payload)
            }
        };
        util::write_framed(path, MAGIC, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<(Self, InlierMeta)> {
        let (h, payload): (InlierHeader, Vec<f64>) = util::read_framed(path, MAGIC)?;
        let corrupt = |reason: String| AsdError::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        if h.format_version != INLIER_FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {}", h.format_version)));
        }
        let d = h.dim;
        let model = match h.kind {
            InlierKind::Gmm => {
                let cov_type = h.covariance_type.unwrap_or_default();
                let cov_len = match cov_type {
                    CovarianceType::Full => d * d,
                    CovarianceType::Diagonal => d,
                };
                if payload.len() != h.p * (1 + d + cov_len) {
                    return Err(corrupt(format!("payload has {} values", payload.len())));
                }
                let (w, rest) = payload.split_at(h.p);
                let (means, covs) = rest.split_at(h.p * d);
                InlierModel::Gmm(Gmm::from_parts(
                    cov_type,
                    h.reg.unwrap_or(0.0),
                    w.to_vec(),
                    means.chunks(d).map(<[f64]>::to_vec).collect(),
                    covs.chunks(cov_len).map(<[f64]>::to_vec).collect(),
                )?)
            }
            InlierKind::Lof => {
                let m = h.n_points;
                if payload.len() != m * (d + 2) {
                    return Err(corrupt(format!("payload has {} values", payload.len())));
                }
                let (pts, rest) = payload.split_at(m * d);
                let (kd, lrd) = rest.split_at(m);
                InlierModel::Lof(Lof::from_parts(
                    h.p,
                    pts.chunks(d).map(<[f64]>::to_vec).collect(),
                    kd.to_vec(),
                    lrd.to_vec(),
                    h.degenerate.unwrap_or(false),
                )?)
            }
        };
        Ok((model, h.meta))
    }
}
