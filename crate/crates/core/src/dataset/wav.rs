use std::path::Path;

use crate::error::{AsdError, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavInfo {
    pub sample_rate_hz: u32,
    pub n_samples: usize,
}

impl WavInfo {
    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate_hz as f64
    }
}

fn check_spec(path: &Path, spec: hound::WavSpec) -> Result<()> {
    let reason = if spec.channels != 1 {
        Some(format!("{} channels, expected mono", spec.channels))
    } else if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        Some(format!("{}-bit {:?}, expected 16-bit PCM", spec.bits_per_sample, spec.sample_format))
    } else if spec.sample_rate != SAMPLE_RATE_HZ {
        Some(format!("{} Hz, expected {SAMPLE_RATE_HZ} Hz", spec.sample_rate))
    } else {
        None
    };
    match reason {
        Some(reason) => Err(AsdError::AudioFormat {
            path: path.to_path_buf(),
            reason,
        }),
        None => Ok(()),
    }
}

pub fn probe(path: &Path) -> Result<WavInfo> {
    let reader = hound::WavReader::open(path).map_err(|source| AsdError::Wav {
        path: path.to_path_buf(),
        source,
    })?;
    check_spec(path, reader.spec())?;
    Ok(WavInfo {
        sample_rate_hz: reader.spec().sample_rate,
        n_samples: reader.duration() as usize,
    })
}

/// Reads a mono 16-bit clip as samples in [-1, 1).
pub fn read_mono(path: &Path) -> Result<Vec<f64>> {
    let mut reader = hound::WavReader::open(path).map_err(|source| AsdError::Wav {
        path: path.to_path_buf(),
        source,
    })?;
    check_spec(path, reader.spec())?;
    reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|source| AsdError::Wav {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes samples in [-1, 1] as mono 16-bit PCM. Out-of-range values are clipped.
pub fn write_mono(path: &Path, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    crate::util::ensure_parent(path)?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |source| AsdError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        let q = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}
