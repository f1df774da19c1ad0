//! Run configuration: per-machine hyperparameter defaults, the quick desk
//! preset, and flat-JSON overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::Split;
use crate::error::{AsdError, Result};
use crate::features::MelConfig;
use crate::inlier::{CovarianceType, InlierKind};
use crate::nnet::EncoderConfig;
use crate::objective::LossMode;
use crate::scoring::{Aggregator, DEFAULT_SEGMENTS, DEFAULT_SEGMENT_SECONDS};
use crate::util;

/// Which training-side clips the inlier models are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitSet {
    #[serde(rename = "train-val")]
    TrainVal,
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "train+train-val")]
    TrainAll,
}

impl FitSet {
    pub fn splits(self) -> &'static [Split] {
        match self {
            FitSet::TrainVal => &[Split::TrainVal],
            FitSet::Train => &[Split::Train],
            FitSet::TrainAll => &[Split::Train, Split::TrainVal],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub machine_type: String,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub h_type: InlierKind,
    pub h_param: usize,
    /// Candidate inlier hyperparameters, chosen on eval-val by the pipeline.
    pub p_grid: Vec<usize>,
    pub aggregator: Aggregator,
    pub covariance: CovarianceType,
    pub fit_set: FitSet,
    pub seed: u64,
    pub mixup: bool,
    pub mixup_alpha: f64,
    pub loss_mode: LossMode,
    pub weight_decay: f64,
    pub encoder_channels: Vec<usize>,
    pub head_hidden: usize,
    pub coord_channel: bool,
    pub n_segments: usize,
    pub segment_seconds: f64,
    pub max_fpr: f64,
}

/// Machine-type defaults: (lr, batch size, lambda, inlier model, p).
fn table_defaults(machine_type: &str) -> Option<(f64, usize, f64, InlierKind, usize)> {
    use InlierKind::*;
    Some(match machine_type {
        "fan" => (0.001, 32, 0.1, Gmm, 16),
        "gearbox" => (0.001, 128, 10.0, Gmm, 64),
        "pump" => (0.001, 128, 10.0, Gmm, 2),
        "valve" => (0.0005, 128, 10.0, Gmm, 32),
        "slider" => (0.001, 128, 10.0, Gmm, 2),
        "ToyCar" => (0.001, 128, 10.0, Lof, 16),
        "ToyTrain" => (0.0005, 32, 0.1, Lof, 8),
        _ => return None,
    })
}

impl RunConfig {
    /// Full-scale defaults for a machine type. Unknown types get the most common
    /// setting (0.001 / 128 / 10 / GMM with 16 components).
    pub fn defaults_for(machine_type: &str) -> Self {
        let (lr, batch_size, lambda, h_type, h_param) = table_defaults(machine_type).unwrap_or_else(|| {
            log::warn!("no tuned defaults for machine type {machine_type}; using generic ones");
            (0.001, 128, 10.0, InlierKind::Gmm, 16)
        });
        let encoder = EncoderConfig::standard();
        RunConfig {
            machine_type: machine_type.to_string(),
            lr,
            batch_size,
            lambda,
            epochs: 300,
            h_type,
            h_param,
            p_grid: vec![h_param],
            aggregator: Aggregator::default_for(h_type),
            covariance: CovarianceType::Full,
            fit_set: FitSet::TrainVal,
            seed: 0,
            mixup: true,
            mixup_alpha: 0.2,
            loss_mode: LossMode::Full,
            weight_decay: 0.01,
            encoder_channels: encoder.conv_blocks.iter().map(|b| b.channels).collect(),
            head_hidden: encoder.head_hidden,
            coord_channel: encoder.coord_channel,
            n_segments: DEFAULT_SEGMENTS,
            segment_seconds: DEFAULT_SEGMENT_SECONDS,
            max_fpr: crate::metrics::DEFAULT_MAX_FPR,
        }
    }

    /// Small, fast settings for CPU runs on the synthetic corpus.
    pub fn desk_for(machine_type: &str) -> Self {
        let mut c = Self::defaults_for(machine_type);
        c.epochs = 30;
        c.batch_size = 32;
        c.encoder_channels = EncoderConfig::desk().conv_blocks.iter().map(|b| b.channels).collect();
        c.fit_set = FitSet::Train;
        c.p_grid = match c.h_type {
            InlierKind::Gmm => vec![1, 2, 4],
            InlierKind::Lof => vec![4, 8, 16],
        };
        c.h_param = c.p_grid[1];
        c
    }

    /// Applies a flat JSON object of overrides. Changing `h_type` without naming
    /// an aggregator or grid switches those to the matching defaults.
    pub fn apply_overrides(&mut self, overrides: &Map<String, Value>) -> Result<()> {
        let mut value = serde_json::to_value(&*self).expect("config serializes");
        let obj = value.as_object_mut().expect("config is an object");
        for (k, v) in overrides {
            if !obj.contains_key(k) {
                return Err(AsdError::Config(format!("unknown config key {k:?}")));
            }
            obj.insert(k.clone(), v.clone());
        }
        let before = self.h_type;
        *self = serde_json::from_value(value).map_err(|e| AsdError::Config(e.to_string()))?;
        if self.h_type != before {
            if !overrides.contains_key("aggregator") {
                self.aggregator = Aggregator::default_for(self.h_type);
            }
            if !overrides.contains_key("p_grid") {
                self.p_grid = vec![self.h_param];
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AsdError::Config(format!("{}: {m}", self.machine_type)));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return bad(format!("batch_size must be even and >= 2, got {}", self.batch_size));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.h_param == 0 || self.p_grid.is_empty() || self.p_grid.contains(&0) {
            return bad("inlier hyperparameters must be >= 1".into());
        }
        if self.mixup && !(self.mixup_alpha > 0.0) {
            return bad(format!("mixup_alpha must be positive, got {}", self.mixup_alpha));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        if self.n_segments < 2 || !(self.segment_seconds > 0.0) {
            return bad("need n_segments >= 2 and a positive segment length".into());
        }
        if !(self.max_fpr > 0.0 && self.max_fpr <= 1.0) {
            return bad(format!("max_fpr must lie in (0, 1], got {}", self.max_fpr));
        }
        self.encoder_config(&MelConfig::default()).validate()
    }

    pub fn encoder_config(&self, mel: &MelConfig) -> EncoderConfig {
        let mut e = EncoderConfig::custom_channels(&self.encoder_channels, 3, 2);
        e.input_frames = mel.segment_frames(self.segment_seconds);
        e.input_mels = mel.n_mels;
        e.head_hidden = self.head_hidden;
        e.coord_channel = self.coord_channel;
        e
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Short hash of the effective configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        util::sha256_hex(text.as_bytes())[..16].to_string()
    }
}

/// Reads a flat JSON override file.
pub fn load_overrides(path: &Path) -> Result<Map<String, Value>> {
    let v: Value = util::read_json(path)?;
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(AsdError::Config(format!("{} must hold a JSON object", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn machine_defaults() {
        let rows = [
            ("fan", 0.001, 32, 0.1, InlierKind::Gmm, 16),
            ("gearbox", 0.001, 128, 10.0, InlierKind::Gmm, 64),
            ("pump", 0.001, 128, 10.0, InlierKind::Gmm, 2),
            ("valve", 0.0005, 128, 10.0, InlierKind::Gmm, 32),
            ("slider", 0.001, 128, 10.0, InlierKind::Gmm, 2),
            ("ToyCar", 0.001, 128, 10.0, InlierKind::Lof, 16),
            ("ToyTrain", 0.0005, 32, 0.1, InlierKind::Lof, 8),
        ];
        for (m, lr, bs, lambda, h, p) in rows {
            let c = RunConfig::defaults_for(m);
            assert_eq!((c.lr, c.batch_size, c.lambda, c.h_type, c.h_param), (lr, bs, lambda, h, p), "{m}");
            assert_eq!(c.epochs, 300);
            assert_eq!(c.aggregator, Aggregator::default_for(h));
            c.validate().unwrap();
        }
    }

    #[test]
    fn overrides_and_round_trip() {
        let mut c = RunConfig::desk_for("fan");
        let o = json!({"lr": 0.01, "h_type": "lof", "h_param": 5});
        c.apply_overrides(o.as_object().unwrap()).unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.aggregator, Aggregator::Mean);
        assert_eq!(c.p_grid, vec![5]);
        let back: RunConfig = serde_json::from_value(c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let unknown = json!({"learning_rate": 1.0});
        assert!(c.apply_overrides(unknown.as_object().unwrap()).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = RunConfig::defaults_for("pump");
        c.batch_size = 31;
        assert!(c.validate().is_err());
        let mut c = RunConfig::defaults_for("pump");
        c.lambda = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn encoder_input_matches_segment_length() {
        let c = RunConfig::desk_for("ToyCar");
        let e = c.encoder_config(&MelConfig::default());
        assert_eq!((e.input_frames, e.input_mels), (118, 224));
    }
}
