//! Clip scoring: cut a clip into overlapping segments, embed each one, score
//! the embeddings with the product ID's inlier model and aggregate.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{wav, Label, Manifest, Split};
use crate::error::{AsdError, Result};
use crate::features::{inference_segments, LogMelExtractor, NormStats};
use crate::inlier::{fit_set_hash, CovarianceType, InlierKind, InlierMeta, InlierModel};
use crate::nnet::{Batch, Encoder};
use crate::util;

pub const DEFAULT_SEGMENTS: usize = 10;
pub const DEFAULT_SEGMENT_SECONDS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Max,
    /// Mean of the scores at or above the (lower) median.
    MeanAboveMedian,
}

impl Aggregator {
    /// The pairing used by the method: GMM scores keep the upper half, LOF scores are averaged.
    pub fn default_for(kind: InlierKind) -> Self {
        match kind {
            InlierKind::Gmm => Aggregator::MeanAboveMedian,
            InlierKind::Lof => Aggregator::Mean,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
            Aggregator::MeanAboveMedian => "mean_above_median",
        }
    }

    pub fn apply(self, scores: &[f64]) -> Result<f64> {
        if scores.is_empty() {
            return Err(AsdError::InvalidInput("cannot aggregate zero segment scores".into()));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(match self {
            Aggregator::Mean => mean(scores),
            Aggregator::Max => scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::MeanAboveMedian => {
                let mut sorted = scores.to_vec();
                sorted.sort_by(f64::total_cmp);
                let median = sorted[(sorted.len() - 1) / 2];
                let above: Vec<f64> = sorted.into_iter().filter(|&s| s >= median).collect();
                mean(&above)
            }
        })
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregator {
    type Err = AsdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "max" => Ok(Aggregator::Max),
            "mean_above_median" => Ok(Aggregator::MeanAboveMedian),
            other => Err(AsdError::Config(format!(
                "unknown aggregator {other:?} (expected mean, max or mean_above_median)"
            ))),
        }
    }
}

/// Per-segment network outputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutputs {
    pub start_s: Vec<f64>,
    pub embeddings: Vec<Vec<f64>>,
    /// `S x K` product-ID probabilities.
    pub product_probs: Vec<Vec<f64>>,
    pub machine_probs: Vec<f64>,
}

/// Frozen encoder plus the feature front end for one machine type.
#[derive(Debug, Clone)]
pub struct Embedder {
    pub encoder: Encoder<f32>,
    pub extractor: std::sync::Arc<LogMelExtractor>,
    pub stats: NormStats,
    pub n_segments: usize,
    pub segment_s: f64,
}

impl Embedder {
    pub fn embed_waveform(&self, clip_id: &str, waveform: &[f64]) -> Result<SegmentOutputs> {
        let clip = self.extractor.clip(clip_id, waveform, &self.stats)?;
        let segs = inference_segments(&clip, self.n_segments, self.segment_s, self.extractor.config())?;
        let batch: Batch<f32> = Batch::from_matrices(segs.iter().map(|s| &s.values))?;
        let out = self.encoder.forward(&batch)?;
        let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        Ok(SegmentOutputs {
            start_s: segs.iter().map(|s| s.start_s).collect(),
            embeddings: (0..out.n).map(|i| to64(out.embedding(i))).collect(),
            product_probs: (0..out.n).map(|i| to64(out.product_row(i))).collect(),
            machine_probs: to64(&out.machine_probs),
        })
    }
}

/// Network outputs for one manifest clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipEmbeddings {
    pub clip_id: String,
    pub machine_type: String,
    pub product_id: usize,
    pub label: Label,
    pub split: Split,
    pub outputs: SegmentOutputs,
}

/// Embeds every clip of `machine_type` in `splits`, ordered by clip id.
pub fn embed_manifest(
    embedder: &Embedder,
    manifest: &Manifest,
    machine_type: &str,
    splits: &[Split],
) -> Result<Vec<ClipEmbeddings>> {
    let mut recs: Vec<_> = manifest.select(Some(machine_type), splits).map(|(_, r)| r).collect();
    recs.sort_by_key(|r| r.clip_id());
    recs.par_iter()
        .map(|r| {
            let path = manifest.resolve(r);
            let wave = wav::read_mono(&path)?;
            let clip_id = r.clip_id();
            let outputs = embedder
                .embed_waveform(&clip_id, &wave)
                .map_err(|e| AsdError::InvalidInput(format!("{}: {e}", path.display())))?;
            Ok(ClipEmbeddings {
                clip_id,
                machine_type: r.machine_type.clone(),
                product_id: r.product_id,
                label: r.label,
                split: r.split,
                outputs,
            })
        })
        .collect()
}

/// Inlier models of one machine type, keyed by product ID.
#[derive(Debug, Clone, Default)]
pub struct InlierSet {
    pub machine_type: String,
    pub models: BTreeMap<usize, InlierModel>,
}

impl InlierSet {
    /// Fits one model per product ID on the segment embeddings of `clips`.
    pub fn fit(
        machine_type: &str,
        clips: &[ClipEmbeddings],
        kind: InlierKind,
        p: usize,
        covariance: CovarianceType,
        seed: u64,
    ) -> Result<(Self, Vec<InlierMeta>)> {
        let mut by_id: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
        for c in clips.iter().filter(|c| c.machine_type == machine_type) {
            by_id.entry(c.product_id).or_default().extend(c.outputs.embeddings.iter().cloned());
        }
        if by_id.is_empty() {
            return Err(AsdError::InvalidInput(format!("no fit embeddings for {machine_type}")));
        }
        let fit_set = {
            let mut splits: Vec<&str> = clips.iter().map(|c| c.split.as_str()).collect();
            splits.sort_unstable();
            splits.dedup();
            splits.join("+")
        };
        let fitted: Vec<(usize, InlierModel, InlierMeta)> = by_id
            .into_par_iter()
            .map(|(id, points)| {
                let meta = InlierMeta {
                    machine_type: machine_type.to_string(),
                    product_id: id,
                    fit_set: fit_set.clone(),
                    fit_set_hash: fit_set_hash(&points),
                    n_fit: points.len(),
                };
                let model_seed = util::mix_seed(seed, util::str_salt(&format!("{machine_type}/{id}")));
                InlierModel::fit(kind, p, points, covariance, model_seed)
                    .map(|m| (id, m, meta))
                    .map_err(|e| AsdError::InvalidInput(format!("{machine_type} id {id}: {e}")))
            })
            .collect::<Result<_>>()?;
        let mut set = InlierSet {
            machine_type: machine_type.to_string(),
            models: BTreeMap::new(),
        };
        let mut metas = Vec::new();
        for (id, m, meta) in fitted {
            set.models.insert(id, m);
            metas.push(meta);
        }
        Ok((set, metas))
    }

    pub fn get(&self, product_id: usize) -> Result<&InlierModel> {
        self.models.get(&product_id).ok_or_else(|| AsdError::MissingModel {
            machine_type: self.machine_type.clone(),
            product_id,
        })
    }

    pub fn file_name(kind: InlierKind, p: usize, product_id: usize) -> String {
        format!("{kind}_p{p}_id{product_id}.inlier")
    }

    pub fn save(&self, dir: &Path, metas: &[InlierMeta]) -> Result<()> {
        for meta in metas {
            let m = self.get(meta.product_id)?;
            m.save(&dir.join(Self::file_name(m.kind(), m.param(), meta.product_id)), meta)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, machine_type: &str, kind: InlierKind, p: usize, product_ids: &[usize]) -> Result<Self> {
        let mut models = BTreeMap::new();
        for &id in product_ids {
            let path = dir.join(Self::file_name(kind, p, id));
            if !path.exists() {
                return Err(AsdError::MissingModel {
                    machine_type: machine_type.to_string(),
                    product_id: id,
                });
            }
            models.insert(id, InlierModel::load(&path)?.0);
        }
        Ok(InlierSet {
            machine_type: machine_type.to_string(),
            models,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipScore {
    pub clip_id: String,
    pub machine_type: String,
    pub product_id: usize,
    pub label: Label,
    pub segment_scores: Vec<f64>,
    pub aggregate: f64,
}

/// Scores a clip's segments with its product ID's inlier model.
pub fn score_clip(clip: &ClipEmbeddings, models: &InlierSet, aggregator: Aggregator) -> Result<ClipScore> {
    let model = models.get(clip.product_id)?;
    let segment_scores = clip
        .outputs
        .embeddings
        .iter()
        .map(|e| model.score(e))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ClipScore {
        clip_id: clip.clip_id.clone(),
        machine_type: clip.machine_type.clone(),
        product_id: clip.product_id,
        label: clip.label,
        aggregate: aggregator.apply(&segment_scores)?,
        segment_scores,
    })
}

/// Scores without an inlier model: one minus the clip's own-ID probability,
/// averaged over segments.
pub fn score_clip_without_inlier(clip: &ClipEmbeddings) -> Result<ClipScore> {
    let segment_scores: Vec<f64> = clip
        .outputs
        .product_probs
        .iter()
        .map(|row| {
            row.get(clip.product_id)
                .map(|p| 1.0 - p)
                .ok_or_else(|| AsdError::Shape(format!("product id {} outside the model's heads", clip.product_id)))
        })
        .collect::<Result<_>>()?;
    Ok(ClipScore {
        clip_id: clip.clip_id.clone(),
        machine_type: clip.machine_type.clone(),
        product_id: clip.product_id,
        label: clip.label,
        aggregate: Aggregator::Mean.apply(&segment_scores)?,
        segment_scores,
    })
}

pub fn score_all(clips: &[ClipEmbeddings], models: &InlierSet, aggregator: Aggregator) -> Result<Vec<ClipScore>> {
    clips.iter().map(|c| score_clip(c, models, aggregator)).collect()
}

/// Self-contained scorer for raw waveforms: a checkpoint plus the inlier
/// models fitted on its embeddings.
#[derive(Debug, Clone)]
pub struct Detector {
    pub embedder: Embedder,
    pub models: InlierSet,
    pub aggregator: Aggregator,
}

impl Detector {
    /// Loads `checkpoint` and the `<kind>_p<p>_id<k>.inlier` files in `inlier_dir`.
    /// Without `p`, the directory must hold models for exactly one p.
    pub fn load(checkpoint: &Path, inlier_dir: &Path, p: Option<usize>) -> Result<Self> {
        let ck = crate::nnet::Checkpoint::load(checkpoint)?;
        let cfg: crate::config::RunConfig = serde_json::from_value(ck.header.run_config.clone())
            .map_err(|e| AsdError::json(format!("run config in {}", checkpoint.display()), e))?;
        let prefix = format!("{}_p", cfg.h_type);
        let mut found: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let entries = std::fs::read_dir(inlier_dir).map_err(|e| AsdError::io(inlier_dir, e))?;
        for entry in entries {
            let name = entry.map_err(|e| AsdError::io(inlier_dir, e))?.file_name();
            let name = name.to_string_lossy();
            let parsed = name
                .strip_prefix(&prefix)
                .and_then(|r| r.strip_suffix(".inlier"))
                .and_then(|r| r.split_once("_id"))
                .and_then(|(p, id)| Some((p.parse::<usize>().ok()?, id.parse::<usize>().ok()?)));
            if let Some((fp, id)) = parsed {
                found.entry(fp).or_default().push(id);
            }
        }
        let p = match p {
            Some(p) => p,
            None if found.len() == 1 => *found.keys().next().unwrap(),
            None => {
                return Err(AsdError::InvalidInput(format!(
                    "{} holds {} inlier models for {} distinct p values; specify p",
                    inlier_dir.display(),
                    cfg.h_type,
                    found.len()
                )))
            }
        };
        let mut ids = found.remove(&p).unwrap_or_default();
        ids.sort_unstable();
        if ids.is_empty() {
            return Err(AsdError::MissingModel {
                machine_type: ck.header.machine_type.clone(),
                product_id: 0,
            });
        }
        let models = InlierSet::load(inlier_dir, &ck.header.machine_type, cfg.h_type, p, &ids)?;
        let embedder = Embedder {
            encoder: ck.encoder(None)?,
            extractor: std::sync::Arc::new(LogMelExtractor::new(crate::features::MelConfig::default())?),
            stats: ck.header.norm_stats.clone(),
            n_segments: cfg.n_segments,
            segment_s: cfg.segment_seconds,
        };
        Ok(Detector {
            embedder,
            models,
            aggregator: cfg.aggregator,
        })
    }

    pub fn machine_type(&self) -> &str {
        &self.models.machine_type
    }

    /// Segment scores and their aggregate for a waveform of product `product_id`.
    pub fn score_waveform(&self, waveform: &[f64], product_id: usize) -> Result<(Vec<f64>, f64)> {
        let model = self.models.get(product_id)?;
        let out = self.embedder.embed_waveform("waveform", waveform)?;
        let seg = out.embeddings.iter().map(|e| model.score(e)).collect::<Result<Vec<f64>>>()?;
        let agg = self.aggregator.apply(&seg)?;
        Ok((seg, agg))
    }
}

/// Writes scores sorted by clip id.
pub fn write_scores_csv(path: &Path, scores: &[ClipScore]) -> Result<()> {
    let n_seg = scores.first().map_or(0, |s| s.segment_scores.len());
    if scores.iter().any(|s| s.segment_scores.len() != n_seg) {
        return Err(AsdError::Shape("clips have differing segment counts".into()));
    }
    let mut sorted: Vec<&ClipScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    util::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = ["clip_id", "machine_type", "product_id", "label", "aggregate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n_seg).map(|i| format!("seg_{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for s in sorted {
        let mut row = vec![
            s.clip_id.clone(),
            s.machine_type.clone(),
            s.product_id.to_string(),
            s.label.as_str().to_string(),
            s.aggregate.to_string(),
        ];
        row.extend(s.segment_scores.iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| AsdError::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ClipScore>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let bad = |what: &str| AsdError::Corrupt {
        path: path.to_path_buf(),
        reason: what.to_string(),
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() < 5 {
            return Err(bad("short row"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));
        out.push(ClipScore {
            clip_id: rec[0].to_string(),
            machine_type: rec[1].to_string(),
            product_id: rec[2].parse().map_err(|_| bad("bad product id"))?,
            label: serde_json::from_value(serde_json::Value::String(rec[3].to_string()))
                .map_err(|_| bad("bad label"))?,
            aggregate: num(&rec[4])?,
            segment_scores: rec.iter().skip(5).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> AsdError {
    AsdError::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregator_examples() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(Aggregator::MeanAboveMedian.apply(&s).unwrap(), 4.0);
        assert_eq!(Aggregator::Mean.apply(&s).unwrap(), 3.0);
        assert_eq!(Aggregator::Max.apply(&s).unwrap(), 5.0);
        for a in [Aggregator::Mean, Aggregator::Max, Aggregator::MeanAboveMedian] {
            assert_eq!(a.apply(&[2.5; 10]).unwrap(), 2.5);
        }
        // even count: lower median 2 keeps {2, 3, 4}
        assert_eq!(Aggregator::MeanAboveMedian.apply(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 3.0);
        assert!(Aggregator::Mean.apply(&[]).is_err());
    }

    #[test]
    fn aggregator_ordering_and_permutation() {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let n = rng.gen_range(1..20);
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let (mean, mam, max) = (
                Aggregator::Mean.apply(&v).unwrap(),
                Aggregator::MeanAboveMedian.apply(&v).unwrap(),
                Aggregator::Max.apply(&v).unwrap(),
            );
            assert!(max >= mam && mam >= mean - 1e-12);
            v.shuffle(&mut rng);
            assert_eq!(Aggregator::MeanAboveMedian.apply(&v).unwrap(), mam);
        }
    }

    #[test]
    fn aggregator_names() {
        for a in [Aggregator::Mean, Aggregator::Max, Aggregator::MeanAboveMedian] {
            assert_eq!(a.as_str().parse::<Aggregator>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{a}\""));
        }
        assert!("median".parse::<Aggregator>().is_err());
    }

    fn clip(id: &str, pid: usize, emb: Vec<Vec<f64>>, probs: Vec<Vec<f64>>) -> ClipEmbeddings {
        ClipEmbeddings {
            clip_id: id.into(),
            machine_type: "fan".into(),
            product_id: pid,
            label: Label::Normal,
            split: Split::Train,
            outputs: SegmentOutputs {
                start_s: vec![0.0; emb.len()],
                machine_probs: vec![0.5; emb.len()],
                embeddings: emb,
                product_probs: probs,
            },
        }
    }

    #[test]
    fn missing_model_is_reported() {
        let c = clip("a", 2, vec![vec![0.0]], vec![vec![0.5; 3]]);
        let set = InlierSet {
            machine_type: "fan".into(),
            models: BTreeMap::new(),
        };
        assert!(matches!(score_clip(&c, &set, Aggregator::Mean), Err(AsdError::MissingModel { product_id: 2, .. })));
    }

    #[test]
    fn without_inlier_uses_own_id_probability() {
        let c = clip("a", 1, vec![vec![0.0]; 2], vec![vec![0.1, 0.8, 0.3], vec![0.2, 0.6, 0.9]]);
        let s = score_clip_without_inlier(&c).unwrap();
        assert!((s.aggregate - 0.3).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let mk = |id: &str, v: f64| ClipScore {
            clip_id: id.into(),
            machine_type: "pump".into(),
            product_id: 1,
            label: Label::Anomaly,
            segment_scores: vec![v, v + 0.125],
            aggregate: v + 0.0625,
        };
        write_scores_csv(&path, &[mk("b.wav", 1.0), mk("a.wav", -2.5)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("clip_id,machine_type,product_id,label,aggregate,seg_0,seg_1\na.wav,"));
        let back = read_scores_csv(&path).unwrap();
        assert_eq!(back, vec![mk("a.wav", -2.5), mk("b.wav", 1.0)]);
    }
}
