//! Small convolutional encoder with hand-written reverse-mode gradients, the
//! product-ID and embedding-norm heads, AdamW and the one-cycle schedule.

mod checkpoint;
mod model;
mod optim;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{AsdError, Result};

pub use checkpoint::{Checkpoint, CheckpointHeader, OptimHeader, CHECKPOINT_VERSION};
pub use model::{Batch, Encoder, ForwardOutput, OutputGrads};
pub use optim::{AdamW, LrSchedule, OneCycle};

/// Floating point type the network runs in. `f32` for training, `f64` for
/// gradient checks.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
    const NAME: &'static str;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
    const NAME: &'static str = "f64";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

impl Activation {
    #[inline]
    pub(crate) fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu => {
                if x > T::zero() {
                    x
                } else {
                    x * T::of(0.01)
                }
            }
        }
    }

    /// Derivative evaluated from the activation output.
    #[inline]
    pub(crate) fn grad_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::of(0.01)
                }
            }
        }
    }
}

pub const EMBEDDING_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_frames: usize,
    pub input_mels: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub embedding_dim: usize,
    pub activation: Activation,
    pub head_hidden: usize,
    /// Adds a constant ramp over the mel axis as a second input channel so the
    /// pooled features can encode absolute frequency.
    pub coord_channel: bool,
}

impl EncoderConfig {
    fn with_channels(channels: &[usize]) -> Self {
        EncoderConfig {
            input_frames: 118,
            input_mels: 224,
            conv_blocks: channels
                .iter()
                .map(|&channels| ConvBlock {
                    channels,
                    kernel: 3,
                    stride: 2,
                })
                .collect(),
            embedding_dim: EMBEDDING_DIM,
            activation: Activation::Relu,
            head_hidden: 256,
            coord_channel: true,
        }
    }

    /// Four stride-2 3x3 blocks with 16/32/64/128 channels.
    pub fn standard() -> Self {
        Self::with_channels(&[16, 32, 64, 128])
    }

    /// Narrow variant for quick CPU runs.
    pub fn desk() -> Self {
        Self::with_channels(&[8, 16, 16, 32])
    }

    pub fn custom_channels(channels: &[usize], kernel: usize, stride: usize) -> Self {
        let mut c = Self::with_channels(channels);
        for b in &mut c.conv_blocks {
            b.kernel = kernel;
            b.stride = stride;
        }
        c
    }

    pub fn input_channels(&self) -> usize {
        if self.coord_channel {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim != EMBEDDING_DIM {
            return Err(AsdError::Config(format!(
                "embedding_dim must be {EMBEDDING_DIM}, got {}",
                self.embedding_dim
            )));
        }
        if self.conv_blocks.is_empty() {
            return Err(AsdError::Config("encoder needs at least one conv block".into()));
        }
        if self
            .conv_blocks
            .iter()
            .any(|b| b.channels == 0 || b.kernel == 0 || b.kernel % 2 == 0 || b.stride == 0)
        {
            return Err(AsdError::Config("conv blocks need channels > 0, odd kernel, stride > 0".into()));
        }
        if self.head_hidden == 0 || self.input_frames == 0 || self.input_mels == 0 {
            return Err(AsdError::Config("encoder dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Short hash identifying the architecture together with the number of product IDs.
    pub fn hash(&self, n_ids: usize) -> String {
        let mut text = serde_json::to_string(self).expect("encoder config serializes");
        text.push_str(&format!("|ids={n_ids}"));
        crate::util::sha256_hex(text.as_bytes())[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }
    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }
}

pub(crate) fn conv_geoms(cfg: &EncoderConfig) -> Vec<ConvGeom> {
    let (mut c, mut h, mut w) = (cfg.input_channels(), cfg.input_frames, cfg.input_mels);
    cfg.conv_blocks
        .iter()
        .map(|b| {
            let pad = b.kernel / 2;
            let out_h = (h + 2 * pad - b.kernel) / b.stride + 1;
            let out_w = (w + 2 * pad - b.kernel) / b.stride + 1;
            let g = ConvGeom {
                in_c: c,
                in_h: h,
                in_w: w,
                out_c: b.channels,
                out_h,
                out_w,
                kernel: b.kernel,
                stride: b.stride,
                pad,
            };
            (c, h, w) = (b.channels, out_h, out_w);
            g
        })
        .collect()
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ParamLayout {
    pub specs: Vec<ParamSpec>,
    pub conv_w: Vec<usize>,
    pub conv_b: Vec<usize>,
    pub dense1_w: usize,
    pub dense1_b: usize,
    pub dense2_w: usize,
    pub dense2_b: usize,
    pub prod_w: usize,
    pub prod_b: usize,
    /// `a` at this offset, `b` right after.
    pub affine: usize,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &EncoderConfig, geoms: &[ConvGeom], n_ids: usize) -> Self {
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, len: usize| {
            specs.push(ParamSpec { name, offset, len });
            offset += len;
            offset - len
        };
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for (i, g) in geoms.iter().enumerate() {
            conv_w.push(push(format!("conv{i}.weight"), g.out_c * g.rows()));
            conv_b.push(push(format!("conv{i}.bias"), g.out_c));
        }
        let last_c = geoms.last().map_or(0, |g| g.out_c);
        let dense1_w = push("dense1.weight".into(), cfg.head_hidden * last_c);
        let dense1_b = push("dense1.bias".into(), cfg.head_hidden);
        let dense2_w = push("dense2.weight".into(), cfg.embedding_dim * cfg.head_hidden);
        let dense2_b = push("dense2.bias".into(), cfg.embedding_dim);
        let prod_w = push("product_head.weight".into(), n_ids * cfg.embedding_dim);
        let prod_b = push("product_head.bias".into(), n_ids);
        let affine = push("norm_affine".into(), 2);
        ParamLayout {
            specs,
            conv_w,
            conv_b,
            dense1_w,
            dense1_b,
            dense2_w,
            dense2_b,
            prod_w,
            prod_b,
            affine,
            total: offset,
        }
    }

    pub fn name_of(&self, index: usize) -> String {
        self.specs
            .iter()
            .find(|s| index >= s.offset && index < s.offset + s.len)
            .map(|s| format!("{}[{}]", s.name, index - s.offset))
            .unwrap_or_else(|| format!("param[{index}]"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_geometry() {
        let cfg = EncoderConfig::standard();
        let g = conv_geoms(&cfg);
        let shapes: Vec<_> = g.iter().map(|g| (g.out_c, g.out_h, g.out_w)).collect();
        assert_eq!(shapes, vec![(16, 59, 112), (32, 30, 56), (64, 15, 28), (128, 8, 14)]);
    }

    #[test]
    fn embedding_dim_is_fixed() {
        let mut cfg = EncoderConfig::standard();
        cfg.embedding_dim = 64;
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::standard();
        cfg.conv_blocks.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_config() {
        let a = EncoderConfig::standard();
        let mut b = a.clone();
        b.head_hidden = 64;
        assert_ne!(a.hash(6), b.hash(6));
        assert_ne!(a.hash(6), a.hash(3));
        assert_eq!(a.hash(6), EncoderConfig::standard().hash(6));
    }
}
