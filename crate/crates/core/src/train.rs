//! The training loop: balanced batches, random crops, mixup, the combined
//! loss, backpropagation and AdamW, with best-epoch selection on train-val.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{wav, ClipRecord, Manifest, Split};
use crate::error::{AsdError, Result};
use crate::features::{random_start, LogMelExtractor, MelConfig, MelMatrix, NormStats};
use crate::nnet::{AdamW, Batch, Checkpoint, Encoder, LrSchedule, OneCycle, OutputGrads};
use crate::objective::{evaluate_loss, mixup_within, BatchLabels, BatchSampler, LossBreakdown, LossMode};
use crate::util;

/// Validation clips are pushed through the network this many at a time.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub product_loss: f64,
    pub machine_loss: f64,
    pub total_loss: f64,
    /// Label entries strictly between 0 and 1 in this batch.
    pub fractional_labels: usize,
    pub target_samples: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub validation: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub machine_type: String,
    pub config_hash: String,
    pub lambda: f64,
    pub loss_mode: LossMode,
    pub mixup: bool,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Tracks the epoch with the smallest validation loss; the first one wins ties.
#[derive(Debug, Clone, Default)]
pub struct BestSelector {
    best: Option<(usize, f64)>,
}

impl BestSelector {
    /// Returns true when `loss` is a new strict minimum.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        let better = match self.best {
            None => !loss.is_nan(),
            Some((_, b)) => loss < b,
        };
        if better {
            self.best = Some((epoch, loss));
        }
        better
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

fn stats_for<'a>(stats: &'a BTreeMap<String, NormStats>, machine: &str) -> Result<&'a NormStats> {
    stats
        .get(machine)
        .ok_or_else(|| AsdError::InvalidInput(format!("no normalization statistics for {machine}")))
}

fn load_crop(
    manifest: &Manifest,
    rec: &ClipRecord,
    extractor: &LogMelExtractor,
    stats: &NormStats,
    seg_frames: usize,
    start: Option<u64>,
) -> Result<MelMatrix> {
    let wave = wav::read_mono(&manifest.resolve(rec))?;
    let total = extractor.config().frames_for(wave.len());
    let first = match start {
        Some(seed) => random_start(total, seg_frames, &mut util::rng_for(seed, &[]))?,
        None => {
            if seg_frames > total {
                return Err(AsdError::InvalidInput(format!("{} is shorter than one segment", rec.clip_id())));
            }
            (total - seg_frames) / 2
        }
    };
    extractor.compute_frames(&wave, stats, first, seg_frames)
}

/// Mean loss over centre crops of every train-val clip (target clips labelled 1).
fn validation_loss(
    model: &Encoder<f32>,
    manifest: &Manifest,
    cfg: &RunConfig,
    stats: &BTreeMap<String, NormStats>,
    extractor: &LogMelExtractor,
    seg_frames: usize,
) -> Result<LossBreakdown> {
    let recs: Vec<&ClipRecord> = manifest.select(None, &[Split::TrainVal]).map(|(_, r)| r).collect();
    if !recs.iter().any(|r| r.machine_type == cfg.machine_type) {
        return Err(AsdError::InvalidInput(format!("no train-val clips for {}", cfg.machine_type)));
    }
    let mut labels = BatchLabels::new(manifest.ids_per_type);
    let (mut prod, mut mach) = (Vec::new(), Vec::new());
    for chunk in recs.chunks(EVAL_CHUNK) {
        let mats = chunk
            .par_iter()
            .map(|r| load_crop(manifest, r, extractor, stats_for(stats, &r.machine_type)?, seg_frames, None))
            .collect::<Result<Vec<_>>>()?;
        let out = model.forward(&Batch::<f32>::from_matrices(&mats)?)?;
        prod.extend(out.product_probs.iter().map(|&v| v as f64));
        mach.extend(out.machine_probs.iter().map(|&v| v as f64));
        for r in chunk {
            if r.machine_type == cfg.machine_type {
                labels.push_target(r.product_id);
            } else {
                labels.push_other();
            }
        }
    }
    Ok(evaluate_loss(&prod, &mach, &labels, cfg.lambda, cfg.loss_mode)?.0)
}

/// Trains the encoder for `cfg.machine_type` and returns the best-epoch checkpoint.
pub fn train_machine(
    manifest: &Manifest,
    stats: &BTreeMap<String, NormStats>,
    cfg: &RunConfig,
    norm_stats_ref: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let machine = cfg.machine_type.as_str();
    if manifest.machine_index(machine).is_none() {
        return Err(AsdError::Config(format!("machine type {machine} is not in the manifest")));
    }
    let mel_cfg = MelConfig::default();
    let extractor = Arc::new(LogMelExtractor::new(mel_cfg.clone())?);
    let enc_cfg = cfg.encoder_config(&mel_cfg);
    let seg_frames = enc_cfg.input_frames;
    let n_ids = manifest.ids_per_type;
    let mut sampler = BatchSampler::new(manifest, machine, cfg.batch_size, cfg.seed)?;
    let model_seed = util::mix_seed(cfg.seed, util::str_salt(&format!("init/{machine}")));
    let mut model: Encoder<f32> = Encoder::new(enc_cfg, n_ids, model_seed)?;
    let total_steps = cfg.epochs * sampler.batches_per_epoch();
    let mut optim = AdamW::new(
        model.n_params(),
        LrSchedule::OneCycle(OneCycle::new(cfg.lr, total_steps)),
        cfg.weight_decay,
    );
    let run_seed = util::mix_seed(cfg.seed, util::str_salt(&format!("train/{machine}")));
    let mut selector = BestSelector::default();
    let mut best: Option<Checkpoint> = None;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches = sampler.epoch();
        let n_batches = batches.len();
        for (b, picks) in batches.into_iter().enumerate() {
            let batch_seed = util::mix_seed(run_seed, step as u64);
            let mats = picks
                .par_iter()
                .enumerate()
                .map(|(j, s)| {
                    let r = &manifest.records[s.record];
                    let crop_seed = util::mix_seed(batch_seed, j as u64 + 1);
                    load_crop(manifest, r, &extractor, stats_for(stats, &r.machine_type)?, seg_frames, Some(crop_seed))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut labels = BatchLabels::new(n_ids);
            for s in &picks {
                if s.is_target {
                    labels.push_target(manifest.records[s.record].product_id);
                } else {
                    labels.push_other();
                }
            }
            let mut batch = Batch::<f32>::from_matrices(&mats)?;
            if cfg.mixup {
                let mut rng = util::rng_for(batch_seed, &[util::str_salt("mixup")]);
                (batch, labels) = mixup_within(&batch, &labels, cfg.mixup_alpha, &mut rng)?;
            }
            let out = model.forward_train(&batch)?;
            let prod: Vec<f64> = out.product_probs.iter().map(|&v| v as f64).collect();
            let mach: Vec<f64> = out.machine_probs.iter().map(|&v| v as f64).collect();
            let (loss, gp, gm) = evaluate_loss(&prod, &mach, &labels, cfg.lambda, cfg.loss_mode)?;
            let grads = model.backward(&OutputGrads {
                product_logits: gp.iter().map(|&g| g as f32).collect(),
                machine_logits: gm.iter().map(|&g| g as f32).collect(),
            })?;
            let names = |i: usize| model.param_name(i);
            let mut params = model.params().to_vec();
            let lr = optim.step(&mut params, &grads, names)?;
            model.set_params(params)?;
            epoch_loss += loss.total;
            steps.push(StepRecord {
                epoch,
                step,
                lr,
                product_loss: loss.product,
                machine_loss: loss.machine,
                total_loss: loss.total,
                fractional_labels: labels.fractional_count(),
                target_samples: picks.iter().filter(|s| s.is_target).count(),
                batch_size: picks.len(),
            });
            log::debug!("{machine} epoch {epoch} batch {b}/{n_batches}: loss {:.5}", loss.total);
            step += 1;
        }
        let val = validation_loss(&model, manifest, cfg, stats, &extractor, seg_frames)?;
        let mean_train_loss = epoch_loss / n_batches as f64;
        log::info!(
            "{machine} epoch {}/{}: train {:.5}  val {:.5} (lp {:.5}, lm {:.5})",
            epoch + 1,
            cfg.epochs,
            mean_train_loss,
            val.total,
            val.product,
            val.machine
        );
        if selector.observe(epoch, val.total) {
            best = Some(Checkpoint::new(
                &model,
                Some(&optim),
                machine,
                epoch,
                val.total,
                stats_for(stats, machine)?.clone(),
                norm_stats_ref,
                cfg.to_json(),
            ));
        }
        epochs.push(EpochRecord {
            epoch,
            mean_train_loss,
            validation: val,
        });
    }
    let (best_epoch, best_validation_loss) = selector
        .best()
        .ok_or_else(|| AsdError::Numerical("validation loss was NaN in every epoch".into()))?;
    Ok(TrainOutcome {
        checkpoint: best.expect("best checkpoint recorded with best epoch"),
        log: TrainLog {
            machine_type: machine.to_string(),
            config_hash: cfg.hash(),
            lambda: cfg.lambda,
            loss_mode: cfg.loss_mode,
            mixup: cfg.mixup,
            best_epoch,
            best_validation_loss,
            epochs,
            steps,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selector_keeps_first_minimum_over_300_epochs() {
        let mut s = BestSelector::default();
        let curve = |e: usize| ((e as f64 - 170.0) / 40.0).powi(2) + if e == 231 { -5.0 } else { 0.0 };
        for e in 0..300 {
            s.observe(e, curve(e));
        }
        assert_eq!(s.best().unwrap().0, 231);
        let mut flat = BestSelector::default();
        for e in 0..300 {
            flat.observe(e, if e >= 40 { 0.5 } else { 1.0 });
        }
        assert_eq!(flat.best(), Some((40, 0.5)));
    }

    #[test]
    fn selector_ignores_nan() {
        let mut s = BestSelector::default();
        assert!(!s.observe(0, f64::NAN));
        assert!(s.observe(1, 2.0));
        assert!(!s.observe(2, f64::NAN));
        assert_eq!(s.best(), Some((1, 2.0)));
    }
}
