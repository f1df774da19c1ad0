//! Amplitude normalization, log-mel extraction and 2-second segmentation.

mod mel;

use std::sync::Arc;

use rand::Rng;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataset::{wav, Manifest, Split};
use crate::error::{AsdError, Result};

pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};

/// Lower bound applied to the fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-machine-type amplitude statistics used to standardize waveforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub machine_type: String,
    pub mean: f64,
    pub std: f64,
    /// Set when the raw standard deviation fell below [`STD_FLOOR`].
    #[serde(default)]
    pub clamped: bool,
}

impl NormStats {
    pub fn identity(machine_type: &str) -> Self {
        NormStats {
            machine_type: machine_type.to_string(),
            mean: 0.0,
            std: 1.0,
            clamped: false,
        }
    }

    /// Population mean and standard deviation over the concatenation of `clips`.
    pub fn from_clips<'a>(machine_type: &str, clips: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let (mut n, mut sum, mut sum_sq) = (0usize, 0.0f64, 0.0f64);
        let clips: Vec<&[f64]> = clips.into_iter().collect();
        for c in &clips {
            n += c.len();
            sum += c.iter().sum::<f64>();
        }
        if n == 0 {
            return Err(AsdError::InvalidInput(format!("no samples for machine type {machine_type}")));
        }
        let mean = sum / n as f64;
        for c in &clips {
            sum_sq += c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
        let std = (sum_sq / n as f64).sqrt();
        let clamped = !(std >= STD_FLOOR);
        if clamped {
            log::warn!("{machine_type}: amplitude std {std:e} below floor, clamped to {STD_FLOOR:e}");
        }
        Ok(NormStats {
            machine_type: machine_type.to_string(),
            mean,
            std: if clamped { STD_FLOOR } else { std },
            clamped,
        })
    }
}

/// Fits normalization statistics over all training clips (train and train-val) of one machine type.
pub fn fit_norm_stats(manifest: &Manifest, machine_type: &str) -> Result<NormStats> {
    let paths: Vec<_> = manifest
        .select(Some(machine_type), &[Split::Train, Split::TrainVal])
        .map(|(_, r)| manifest.resolve(r))
        .collect();
    if paths.is_empty() {
        return Err(AsdError::InvalidInput(format!("no training clips for machine type {machine_type}")));
    }
    let clips = paths.iter().map(|p| wav::read_mono(p)).collect::<Result<Vec<_>>>()?;
    NormStats::from_clips(machine_type, clips.iter().map(Vec::as_slice))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub segment_s: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate_hz: 16_000,
            window_ms: 128.0,
            hop_ms: 16.0,
            n_mels: 224,
            fmin_hz: 50.0,
            fmax_hz: 7800.0,
            segment_s: 2.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    /// Frames produced for a waveform of `n_samples` (no padding).
    pub fn frames_for(&self, n_samples: usize) -> usize {
        let win = self.window_samples();
        if n_samples < win {
            0
        } else {
            (n_samples - win) / self.hop_samples() + 1
        }
    }

    /// Frames in a segment of `seconds`.
    pub fn segment_frames(&self, seconds: f64) -> usize {
        self.frames_for((seconds * self.sample_rate_hz as f64).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(AsdError::Config(format!(
                "mel range {}..{} Hz invalid for {} Hz sampling",
                self.fmin_hz, self.fmax_hz, self.sample_rate_hz
            )));
        }
        let (win, hop) = (self.window_samples(), self.hop_samples());
        if hop == 0 || win < hop {
            return Err(AsdError::Config(format!("window {win} must be >= hop {hop} > 0")));
        }
        if self.n_mels == 0 || !(self.log_floor > 0.0) {
            return Err(AsdError::Config("n_mels must be > 0 and log_floor positive".into()));
        }
        Ok(())
    }
}

/// Row-major `frames x n_mels` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MelMatrix {
    pub frames: usize,
    pub n_mels: usize,
    pub data: Vec<f64>,
}

impl MelMatrix {
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.n_mels..(frame + 1) * self.n_mels]
    }

    pub fn slice_frames(&self, start: usize, len: usize) -> MelMatrix {
        MelMatrix {
            frames: len,
            n_mels: self.n_mels,
            data: self.data[start * self.n_mels..(start + len) * self.n_mels].to_vec(),
        }
    }
}

/// Full-clip log-mel features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipMel {
    pub clip_id: String,
    pub duration_s: f64,
    pub mel: MelMatrix,
}

/// A `T`-second log-mel patch cut from a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSegment {
    pub values: MelMatrix,
    pub clip_id: String,
    pub start_s: f64,
    pub start_frame: usize,
}

/// Hann-windowed power STFT followed by the mel projection and a floored log.
pub struct LogMelExtractor {
    cfg: MelConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    bank: MelFilterbank,
}

impl std::fmt::Debug for LogMelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelExtractor").field("cfg", &self.cfg).finish()
    }
}

impl LogMelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.window_samples();
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        let bank = MelFilterbank::new(n, cfg.sample_rate_hz as f64, cfg.n_mels, cfg.fmin_hz, cfg.fmax_hz);
        Ok(LogMelExtractor { cfg, window, fft, bank })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    /// Log-mel of the whole waveform.
    pub fn compute(&self, waveform: &[f64], stats: &NormStats) -> Result<MelMatrix> {
        let frames = self.cfg.frames_for(waveform.len());
        if frames == 0 {
            return Err(AsdError::InvalidInput(format!(
                "waveform of {} samples is shorter than one {}-sample window",
                waveform.len(),
                self.cfg.window_samples()
            )));
        }
        self.compute_frames(waveform, stats, 0, frames)
    }

    /// Frames `start..start + count` of the full-clip log-mel, computed directly.
    pub fn compute_frames(&self, waveform: &[f64], stats: &NormStats, start: usize, count: usize) -> Result<MelMatrix> {
        let total = self.cfg.frames_for(waveform.len());
        if start + count > total {
            return Err(AsdError::InvalidInput(format!(
                "frames {start}..{} out of range for {total}-frame clip",
                start + count
            )));
        }
        let (win, hop, n_mels) = (self.cfg.window_samples(), self.cfg.hop_samples(), self.cfg.n_mels);
        let inv_std = 1.0 / stats.std;
        let mut buf = vec![Complex::new(0.0, 0.0); win];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; win / 2 + 1];
        let mut data = Vec::with_capacity(count * n_mels);
        for f in start..start + count {
            let frame = &waveform[f * hop..f * hop + win];
            for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new((x - stats.mean) * inv_std * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for filt in self.bank.filters() {
                let v: f64 = filt
                    .weights
                    .iter()
                    .zip(&power[filt.start_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
                data.push(v.max(self.cfg.log_floor).ln());
            }
        }
        Ok(MelMatrix {
            frames: count,
            n_mels,
            data,
        })
    }

    pub fn clip(&self, clip_id: &str, waveform: &[f64], stats: &NormStats) -> Result<ClipMel> {
        Ok(ClipMel {
            clip_id: clip_id.to_string(),
            duration_s: waveform.len() as f64 / self.cfg.sample_rate_hz as f64,
            mel: self.compute(waveform, stats)?,
        })
    }
}

/// Convenience wrapper building a one-off extractor.
pub fn logmel(waveform: &[f64], cfg: &MelConfig, stats: &NormStats) -> Result<MelMatrix> {
    LogMelExtractor::new(cfg.clone())?.compute(waveform, stats)
}

/// Start frames of `count` evenly spaced segments of `seg_frames` over `total_frames`.
pub fn even_starts(total_frames: usize, seg_frames: usize, count: usize) -> Vec<usize> {
    let slack = total_frames.saturating_sub(seg_frames);
    if count <= 1 {
        return vec![0; count];
    }
    (0..count)
        .map(|i| ((i * slack) as f64 / (count - 1) as f64).round() as usize)
        .map(|s| s.min(slack))
        .collect()
}

/// Cuts `s` overlapping segments of `t_s` seconds; the first starts at 0 and the
/// last ends at the clip end, with evenly spaced starts in between.
pub fn inference_segments(clip: &ClipMel, s: usize, t_s: f64, cfg: &MelConfig) -> Result<Vec<FeatureSegment>> {
    if s < 2 {
        return Err(AsdError::InvalidInput(format!("segment count must be >= 2, got {s}")));
    }
    let seg_frames = cfg.segment_frames(t_s);
    if t_s > clip.duration_s + 1e-9 || seg_frames == 0 || seg_frames > clip.mel.frames {
        return Err(AsdError::InvalidInput(format!(
            "cannot cut {t_s} s segments from a {} s clip",
            clip.duration_s
        )));
    }
    let secs_per_frame = cfg.hop_samples() as f64 / cfg.sample_rate_hz as f64;
    Ok(even_starts(clip.mel.frames, seg_frames, s)
        .into_iter()
        .map(|start| FeatureSegment {
            values: clip.mel.slice_frames(start, seg_frames),
            clip_id: clip.clip_id.clone(),
            start_s: start as f64 * secs_per_frame,
            start_frame: start,
        })
        .collect())
}

/// Uniformly random hop-aligned start frame for a `seg_frames` crop.
pub fn random_start<R: Rng + ?Sized>(total_frames: usize, seg_frames: usize, rng: &mut R) -> Result<usize> {
    if seg_frames == 0 || seg_frames > total_frames {
        return Err(AsdError::InvalidInput(format!(
            "clip of {total_frames} frames is shorter than a {seg_frames}-frame crop"
        )));
    }
    Ok(rng.gen_range(0..=total_frames - seg_frames))
}

pub fn random_crop<R: Rng + ?Sized>(clip: &ClipMel, t_s: f64, cfg: &MelConfig, rng: &mut R) -> Result<FeatureSegment> {
    let seg_frames = cfg.segment_frames(t_s);
    if t_s > clip.duration_s + 1e-9 {
        return Err(AsdError::InvalidInput(format!(
            "clip of {} s is shorter than {t_s} s",
            clip.duration_s
        )));
    }
    let start = random_start(clip.mel.frames, seg_frames, rng)?;
    Ok(FeatureSegment {
        values: clip.mel.slice_frames(start, seg_frames),
        clip_id: clip.clip_id.clone(),
        start_s: start as f64 * cfg.hop_samples() as f64 / cfg.sample_rate_hz as f64,
        start_frame: start,
    })
}
