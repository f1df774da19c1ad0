use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamW, Encoder, EncoderConfig, LrSchedule, Real};
use crate::error::{AsdError, Result};
use crate::features::NormStats;
use crate::util;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ASDCKPT\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimHeader {
    pub step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

/// JSON header of a checkpoint file. The binary payload that follows holds the
/// parameters and, when `optimizer` is present, the two AdamW moment vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config_hash: String,
    pub encoder: EncoderConfig,
    pub n_ids: usize,
    pub machine_type: String,
    pub epoch: usize,
    pub validation_loss: f64,
    pub norm_stats: NormStats,
    /// File holding the normalization statistics of every machine type used in training.
    pub norm_stats_ref: String,
    pub n_params: usize,
    pub optimizer: Option<OptimHeader>,
    /// Effective run configuration, re-parseable as a config file.
    pub run_config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
    pub moments: Option<(Vec<f64>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new<T: Real>(
        model: &Encoder<T>,
        optim: Option<&AdamW>,
        machine_type: &str,
        epoch: usize,
        validation_loss: f64,
        norm_stats: NormStats,
        norm_stats_ref: &str,
        run_config: serde_json::Value,
    ) -> Self {
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            config_hash: model.config().hash(model.n_ids()),
            encoder: model.config().clone(),
            n_ids: model.n_ids(),
            machine_type: machine_type.to_string(),
            epoch,
            validation_loss,
            norm_stats,
            norm_stats_ref: norm_stats_ref.to_string(),
            n_params: model.n_params(),
            optimizer: optim.map(|o| OptimHeader {
                step: o.step,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                weight_decay: o.weight_decay,
                schedule: o.schedule,
            }),
            run_config,
        };
        Checkpoint {
            header,
            params: model.params().iter().map(|v| v.f64()).collect(),
            moments: optim.map(|o| (o.m.clone(), o.v.clone())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = self.params.clone();
        if let Some((m, v)) = &self.moments {
            payload.extend_from_slice(m);
            payload.extend_from_slice(v);
        }
        util::write_framed(path, MAGIC, &self.header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, payload): (CheckpointHeader, Vec<f64>) = util::read_framed(path, MAGIC)?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(AsdError::CheckpointMismatch(format!(
                "format version {} (expected {CHECKPOINT_VERSION})",
                header.format_version
            )));
        }
        if header.config_hash != header.encoder.hash(header.n_ids) {
            return Err(AsdError::CheckpointMismatch("header config hash does not match its encoder config".into()));
        }
        let n = header.n_params;
        let expected = if header.optimizer.is_some() { 3 * n } else { n };
        if payload.len() != expected {
            return Err(AsdError::Corrupt {
                path: path.to_path_buf(),
                reason: format!("payload has {} values, expected {expected}", payload.len()),
            });
        }
        let params = payload[..n].to_vec();
        let moments = header
            .optimizer
            .is_some()
            .then(|| (payload[n..2 * n].to_vec(), payload[2 * n..].to_vec()));
        Ok(Checkpoint {
            header,
            params,
            moments,
        })
    }

    /// Rebuilds the encoder. With `expected` set, a different architecture is an error.
    pub fn encoder<T: Real>(&self, expected: Option<(&EncoderConfig, usize)>) -> Result<Encoder<T>> {
        if let Some((cfg, n_ids)) = expected {
            let want = cfg.hash(n_ids);
            if want != self.header.config_hash {
                return Err(AsdError::CheckpointMismatch(format!(
                    "checkpoint config hash {} differs from expected {want}",
                    self.header.config_hash
                )));
            }
        }
        let mut model = Encoder::<T>::new(self.header.encoder.clone(), self.header.n_ids, 0)?;
        model.set_params(self.params.iter().map(|&v| T::of(v)).collect())?;
        Ok(model)
    }

    pub fn optimizer(&self) -> Option<AdamW> {
        let h = self.header.optimizer.as_ref()?;
        let (m, v) = self.moments.clone()?;
        Some(AdamW {
            beta1: h.beta1,
            beta2: h.beta2,
            eps: h.eps,
            weight_decay: h.weight_decay,
            schedule: h.schedule,
            step: h.step,
            m,
            v,
        })
    }
}
