use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{scan_corpus, wav, Layout, Manifest};
use crate::error::{AsdError, Result};
use crate::util;

/// Tonal signature of one product ID: a harmonic series over a base frequency
/// plus a white noise floor. Amplitudes are relative; the clip is rescaled on output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdSignature {
    pub base_hz: f64,
    pub harmonics: Vec<f64>,
    pub noise_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSynth {
    pub name: String,
    pub ids: Vec<IdSignature>,
}

/// Short decaying noise bursts planted at random positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstSpec {
    pub per_second: f64,
    pub duration_ms: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyTransform {
    /// Relative shift of the base frequency, e.g. 0.15 for +15 %.
    #[serde(default)]
    pub freq_shift: f64,
    #[serde(default)]
    pub bursts: Option<BurstSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub machine_types: Vec<MachineSynth>,
    #[serde(default = "default_clip_seconds")]
    pub clip_seconds: f64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: u32,
    pub train_per_id: usize,
    pub eval_normal_per_id: usize,
    pub eval_anomaly_per_id: usize,
    pub anomaly: AnomalyTransform,
    /// Per-clip relative jitter of the base frequency.
    #[serde(default = "default_jitter")]
    pub freq_jitter: f64,
    pub seed: u64,
}

fn default_clip_seconds() -> f64 {
    10.0
}
fn default_rate() -> u32 {
    wav::SAMPLE_RATE_HZ
}
fn default_jitter() -> f64 {
    0.005
}

impl SynthSpec {
    /// Three machine types with three product IDs each and a +15 % frequency-shift anomaly.
    /// IDs of one type share a frequency band and differ in harmonic balance, so a
    /// product-ID classifier alone does not have to track absolute pitch.
    pub fn desk(seed: u64) -> Self {
        let machine = |name: &str, base: f64, balances: [[f64; 4]; 3]| MachineSynth {
            name: name.to_string(),
            ids: balances
                .iter()
                .enumerate()
                .map(|(k, h)| IdSignature {
                    base_hz: base * (1.0 + 0.01 * k as f64),
                    harmonics: h.to_vec(),
                    noise_floor: 0.15,
                })
                .collect(),
        };
        SynthSpec {
            machine_types: vec![
                machine(
                    "fan",
                    220.0,
                    [[1.0, 0.6, 0.35, 0.2], [0.35, 1.0, 0.2, 0.6], [0.2, 0.35, 0.6, 1.0]],
                ),
                machine(
                    "pump",
                    480.0,
                    [[1.0, 0.45, 0.5, 0.15], [0.5, 0.15, 1.0, 0.45], [0.15, 1.0, 0.45, 0.5]],
                ),
                machine(
                    "ToyCar",
                    1000.0,
                    [[1.0, 0.7, 0.25, 0.3], [0.3, 0.25, 1.0, 0.7], [0.7, 1.0, 0.3, 0.25]],
                ),
            ],
            clip_seconds: 10.0,
            sample_rate_hz: wav::SAMPLE_RATE_HZ,
            train_per_id: 40,
            eval_normal_per_id: 16,
            eval_anomaly_per_id: 16,
            anomaly: AnomalyTransform {
                freq_shift: 0.15,
                bursts: None,
            },
            freq_jitter: 0.03,
            seed,
        }
    }

    pub fn ids_per_type(&self) -> usize {
        self.machine_types.first().map_or(0, |m| m.ids.len())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AsdError::Config(msg));
        if self.machine_types.len() < 2 {
            return bad(format!(
                "synthetic corpus needs at least 2 machine types, got {}",
                self.machine_types.len()
            ));
        }
        let k = self.ids_per_type();
        if k < 2 {
            return bad(format!("synthetic corpus needs K >= 2 product ids, got {k}"));
        }
        if let Some(m) = self.machine_types.iter().find(|m| m.ids.len() != k) {
            return bad(format!("machine type {} has {} ids, expected {k}", m.name, m.ids.len()));
        }
        if self.sample_rate_hz != wav::SAMPLE_RATE_HZ {
            return bad(format!("sample rate must be {} Hz", wav::SAMPLE_RATE_HZ));
        }
        if !(self.clip_seconds > 0.0) {
            return bad("clip length must be positive".into());
        }
        if self.train_per_id == 0 {
            return bad("train_per_id must be >= 1".into());
        }
        for m in &self.machine_types {
            for s in &m.ids {
                if !(s.base_hz > 0.0) || s.harmonics.is_empty() || s.noise_floor < 0.0 {
                    return bad(format!("invalid signature for {}", m.name));
                }
            }
        }
        Ok(())
    }
}

/// Renders one clip. The same rng state with `freq_shift = 0` and `> 0` gives a
/// normal clip and its frequency-shifted counterpart.
pub fn synthesize_clip<R: Rng>(
    sig: &IdSignature,
    anomaly: Option<&AnomalyTransform>,
    seconds: f64,
    sample_rate_hz: u32,
    freq_jitter: f64,
    rng: &mut R,
) -> Vec<f64> {
    let sr = sample_rate_hz as f64;
    let n = (seconds * sr).round() as usize;
    let shift = anomaly.map_or(0.0, |a| a.freq_shift);
    let jitter = if freq_jitter > 0.0 { rng.gen_range(-freq_jitter..freq_jitter) } else { 0.0 };
    let f0 = sig.base_hz * (1.0 + shift) * (1.0 + jitter);
    let phases: Vec<f64> = sig.harmonics.iter().map(|_| rng.gen_range(0.0..TAU)).collect();
    let am_rate = rng.gen_range(2.0..6.0);
    let am_depth = rng.gen_range(0.1..0.3);
    let am_phase = rng.gen_range(0.0..TAU);

    let partials: Vec<(f64, f64, f64)> = sig
        .harmonics
        .iter()
        .zip(&phases)
        .enumerate()
        .map(|(h, (&a, &phi))| (TAU * (h + 1) as f64 * f0 / sr, a, phi))
        .filter(|(w, _, _)| *w < 0.95 * std::f64::consts::PI)
        .collect();

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64;
        let tone: f64 = partials.iter().map(|&(w, a, phi)| a * (w * t + phi).sin()).sum();
        let am = 1.0 + am_depth * (TAU * am_rate * t / sr + am_phase).sin();
        let noise: f64 = rng.sample(StandardNormal);
        out.push(tone * am + sig.noise_floor * noise);
    }

    if let Some(b) = anomaly.and_then(|a| a.bursts.as_ref()) {
        let count = (b.per_second * seconds).round() as usize;
        let len = ((b.duration_ms / 1000.0) * sr).round().max(1.0) as usize;
        for _ in 0..count {
            let start = rng.gen_range(0..n.saturating_sub(len).max(1));
            for j in 0..len.min(n - start) {
                let env = (-5.0 * j as f64 / len as f64).exp();
                let v: f64 = rng.sample(StandardNormal);
                out[start + j] += b.gain * env * v;
            }
        }
    }

    let amp: f64 = sig.harmonics.iter().map(|a| a.abs()).sum();
    let gain = 0.5 / (1.3 * amp + 3.0 * sig.noise_floor).max(1e-9);
    for v in &mut out {
        *v = (*v * gain).clamp(-1.0, 1.0);
    }
    out
}

#[derive(Clone, Copy)]
enum Kind {
    Train,
    EvalNormal,
    EvalAnomaly,
}

/// Writes a DCASE-2021-style tree of synthetic clips under `out` plus
/// `out/manifest.json`, and returns the manifest.
pub fn generate_synthetic(spec: &SynthSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for (mi, m) in spec.machine_types.iter().enumerate() {
        for id in 0..m.ids.len() {
            let counts = [
                (Kind::Train, spec.train_per_id),
                (Kind::EvalNormal, spec.eval_normal_per_id),
                (Kind::EvalAnomaly, spec.eval_anomaly_per_id),
            ];
            for (kind, count) in counts {
                for idx in 0..count {
                    jobs.push((mi, id, kind, idx));
                }
            }
        }
    }
    jobs.par_iter().try_for_each(|&(mi, id, kind, idx)| {
        let m = &spec.machine_types[mi];
        let (dir, label, file_idx) = match kind {
            Kind::Train => ("train", "normal", idx),
            Kind::EvalNormal => ("test", "normal", idx),
            Kind::EvalAnomaly => ("test", "anomaly", spec.eval_normal_per_id + idx),
        };
        let mut rng = util::rng_for(spec.seed, &[mi as u64, id as u64, kind as u64, idx as u64]);
        let anomaly = matches!(kind, Kind::EvalAnomaly).then_some(&spec.anomaly);
        let samples = synthesize_clip(
            &m.ids[id],
            anomaly,
            spec.clip_seconds,
            spec.sample_rate_hz,
            spec.freq_jitter,
            &mut rng,
        );
        let path = out
            .join(&m.name)
            .join(dir)
            .join(format!("section_{id:02}_source_{dir}_{label}_{file_idx:04}.wav"));
        wav::write_mono(&path, &samples, spec.sample_rate_hz)
    })?;
    let manifest = scan_corpus(out, Layout::Dcase2021, spec.seed)?;
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}
