//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. Pass name fragments as arguments to run a subset,
//! e.g. `cargo test --test acceptance -- gmm lof`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use asd_core::dataset::{ClipRecord, Label, Manifest, Split};
use asd_core::features::{LogMelExtractor, MelConfig, NormStats};
use asd_core::inlier::{CovarianceType, Gmm, Lof, LRD_EPS};
use asd_core::metrics::{auc, harmonic_mean, pauc};
use asd_core::nnet::{Batch, Checkpoint, Encoder, OutputGrads};
use asd_core::objective::{evaluate_loss, loss_machine, loss_product, BatchLabels, BatchSampler, LossMode};
use asd_core::scoring::{embed_manifest, score_clip_without_inlier, Aggregator, ClipEmbeddings, Embedder, SegmentOutputs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use common::{asd, read_json, run_ok, tiny_setup, tree_hashes};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(elapsed: Duration, budget_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < budget_s, || {
        format!("took {:.1} s, budget {budget_s} s", elapsed.as_secs_f64())
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------- losses

fn oracle_product(p: &[f64], t: &[f64], y: &[f64], k: usize) -> f64 {
    let sum_t: f64 = t.iter().sum();
    let mut acc = 0.0;
    for i in 0..t.len() {
        for j in 0..k {
            let (pi, yi) = (p[i * k + j], y[i * k + j]);
            acc += t[i] * (yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln());
        }
    }
    -acc / (k as f64 * sum_t)
}

fn oracle_machine(q: &[f64], t: &[f64]) -> f64 {
    let acc: f64 = q.iter().zip(t).map(|(&q, &t)| t * q.ln() + (1.0 - t) * (1.0 - q).ln()).sum();
    -acc / t.len() as f64
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> BatchLabels {
    let mut labels = BatchLabels::new(k);
    for i in 0..n {
        // at least one sample carries target mass
        if i == 0 || rng.gen_bool(0.5) {
            labels.push_target(rng.gen_range(0..k));
        } else {
            labels.push_other();
        }
    }
    // fractional rows as produced by mixup
    for i in 0..n {
        if rng.gen_bool(0.3) {
            let lam: f64 = rng.gen();
            let j = rng.gen_range(0..n);
            let (tj, yj) = (labels.t[j], labels.y_row(j).to_vec());
            labels.t[i] = lam * labels.t[i] + (1.0 - lam) * tj;
            for c in 0..k {
                labels.y[i * k + c] = lam * labels.y[i * k + c] + (1.0 - lam) * yj[c];
            }
        }
    }
    if labels.t.iter().sum::<f64>() == 0.0 {
        labels.t[0] = 1.0;
        labels.y[0] = 1.0;
    }
    labels
}

fn loss_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.gen_range(1..=8);
        let k = rng.gen_range(2..=4);
        let labels = random_labels(&mut rng, n, k);
        let p: Vec<f64> = (0..n * k).map(|_| rng.gen_range(0.01..0.99)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        let lp = loss_product(&p, &labels).map_err(|e| e.to_string())?;
        let lm = loss_machine(&q, &labels).map_err(|e| e.to_string())?;
        let ep = oracle_product(&p, &labels.t, &labels.y, k);
        let em = oracle_machine(&q, &labels.t);
        worst = worst.max(rel_err(lp, ep)).max(rel_err(lm, em));
    }
    ensure(worst <= 1e-10, || format!("max relative error {worst:e}"))?;
    within_budget(start.elapsed(), 1.0)?;
    Ok(format!("20 batches, max relative error {worst:.2e}, {:.3} s", start.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------- gradients

fn gradient_check() -> Check {
    let start = Instant::now();
    let mut cfg = asd_core::nnet::EncoderConfig::custom_channels(&[2, 3], 3, 2);
    cfg.input_frames = 9;
    cfg.input_mels = 12;
    cfg.head_hidden = 4;
    let n_ids = 3;
    let mut enc = Encoder::<f64>::new(cfg, n_ids, 31).map_err(|e| e.to_string())?;
    let n_params = enc.n_params();
    ensure(n_params <= 5000, || format!("{n_params} parameters"))?;
    // Give the norm head a non-zero slope so every path carries gradient.
    let off = enc.norm_affine_offset();
    enc.params_mut()[off] = 0.03;
    enc.params_mut()[off + 1] = -0.2;

    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let n = 4;
    let data: Vec<f64> = (0..n * 9 * 12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let batch = Batch::new(9, 12, data).map_err(|e| e.to_string())?;
    let labels = random_labels(&mut rng, n, n_ids);
    let lambda = 0.7;

    let loss_at = |e: &Encoder<f64>| -> f64 {
        let out = e.forward(&batch).unwrap();
        evaluate_loss(&out.product_probs, &out.machine_probs, &labels, lambda, LossMode::Full)
            .unwrap()
            .0
            .total
    };

    let out = enc.forward_train(&batch).map_err(|e| e.to_string())?;
    let (_, gp, gm) = evaluate_loss(&out.product_probs, &out.machine_probs, &labels, lambda, LossMode::Full)
        .map_err(|e| e.to_string())?;
    let analytic = enc
        .backward(&OutputGrads {
            product_logits: gp,
            machine_logits: gm,
        })
        .map_err(|e| e.to_string())?;

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut worst_at = 0;
    for i in 0..n_params {
        let orig = enc.params()[i];
        enc.params_mut()[i] = orig + h;
        let up = loss_at(&enc);
        enc.params_mut()[i] = orig - h;
        let down = loss_at(&enc);
        enc.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        // Gradients below the finite-difference noise floor are compared absolutely.
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        if err > worst {
            worst = err;
            worst_at = i;
        }
    }
    ensure(worst < 1e-3, || {
        format!("max relative error {worst:.2e} at {}", enc.param_name(worst_at))
    })?;
    within_budget(start.elapsed(), 60.0)?;
    Ok(format!(
        "{n_params} parameters, max relative error {worst:.2e}, {:.2} s",
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------- GMM

fn gaussian_blobs(rng: &mut ChaCha8Rng, m: usize, dim: usize, centres: usize) -> Vec<Vec<f64>> {
    let c: Vec<Vec<f64>> = (0..centres)
        .map(|_| (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect();
    (0..m)
        .map(|i| {
            let ctr = &c[i % centres];
            ctr.iter()
                .map(|&v| v + Distribution::<f64>::sample(&StandardNormal, rng))
                .collect()
        })
        .collect()
}

fn gmm_monotone() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut iters = 0;
    for fit in 0..10 {
        let dim = rng.gen_range(2..=5);
        let p = rng.gen_range(1..=4);
        let cov = if fit % 2 == 0 { CovarianceType::Full } else { CovarianceType::Diagonal };
        let centres = rng.gen_range(1..=4);
        let data = gaussian_blobs(&mut rng, 300, dim, centres);
        let g = Gmm::fit(&data, p, cov, fit).map_err(|e| e.to_string())?;
        let tr = g.log_likelihood_trace();
        iters += tr.len();
        for w in tr.windows(2) {
            ensure(w[1] >= w[0], || format!("fit {fit}: log-likelihood fell from {} to {}", w[0], w[1]))?;
        }
    }
    within_budget(start.elapsed(), 30.0)?;
    Ok(format!("10 fits, {iters} EM iterations, all non-decreasing"))
}

fn gmm_recovery() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let truth = [(0.3, [0.0, 0.0]), (0.7, [3.0, -2.0])];
    let data: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            let c = if rng.gen_bool(truth[0].0) { 0 } else { 1 };
            let mu = truth[c].1;
            mu.iter()
                .map(|&v| v + 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        })
        .collect();
    let g = Gmm::fit(&data, 2, CovarianceType::Full, 3).map_err(|e| e.to_string())?;
    let mut worst_mean: f64 = 0.0;
    let mut worst_weight: f64 = 0.0;
    for (w, mu) in &truth {
        let j = (0..2)
            .min_by(|&a, &b| {
                let d = |i: usize| g.means()[i].iter().zip(mu).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        let dm = g.means()[j].iter().zip(mu).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst_mean = worst_mean.max(dm);
        worst_weight = worst_weight.max((g.weights()[j] - w).abs());
    }
    ensure(worst_mean < 0.1 && worst_weight < 0.05, || {
        format!("mean error {worst_mean:.4}, weight error {worst_weight:.4}")
    })?;
    within_budget(start.elapsed(), 30.0)?;
    Ok(format!("M=2000, mean error {worst_mean:.4}, weight error {worst_weight:.4}"))
}

// ---------------------------------------------------------------- LOF

struct ReferenceLof {
    pts: Vec<Vec<f64>>,
    k: usize,
    kdist: Vec<f64>,
    lrd: Vec<f64>,
}

impl ReferenceLof {
    fn d(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]) * (a[i] - b[i]);
        }
        s.sqrt()
    }

    /// Sorted by (distance, index); exactly k neighbours.
    fn neighbours(&self, x: &[f64], skip: Option<usize>) -> Vec<(f64, usize)> {
        let mut v = Vec::new();
        for (j, p) in self.pts.iter().enumerate() {
            if Some(j) != skip {
                v.push((Self::d(x, p), j));
            }
        }
        // insertion sort keeps this independent of the library's ordering code
        for i in 1..v.len() {
            let mut j = i;
            while j > 0 && (v[j].0 < v[j - 1].0 || (v[j].0 == v[j - 1].0 && v[j].1 < v[j - 1].1)) {
                v.swap(j, j - 1);
                j -= 1;
            }
        }
        v.truncate(self.k);
        v
    }

    fn lrd_of(&self, nb: &[(f64, usize)]) -> f64 {
        let mut s = 0.0;
        for &(d, j) in nb {
            s += if d > self.kdist[j] { d } else { self.kdist[j] };
        }
        1.0 / (s / nb.len() as f64 + LRD_EPS)
    }

    fn new(pts: Vec<Vec<f64>>, k: usize) -> Self {
        let mut r = ReferenceLof {
            pts,
            k,
            kdist: Vec::new(),
            lrd: Vec::new(),
        };
        r.kdist = (0..r.pts.len()).map(|i| r.neighbours(&r.pts[i], Some(i))[k - 1].0).collect();
        r.lrd = (0..r.pts.len()).map(|i| r.lrd_of(&r.neighbours(&r.pts[i], Some(i)))).collect();
        r
    }

    fn lof(&self, x: &[f64], skip: Option<usize>) -> f64 {
        let nb = self.neighbours(x, skip);
        let own = self.lrd_of(&nb);
        nb.iter().map(|&(_, j)| self.lrd[j]).sum::<f64>() / nb.len() as f64 / own
    }
}

fn lof_reference() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst: f64 = 0.0;
    let mut n_scores = 0;
    for set in 0..50 {
        let m = rng.gen_range(12..=200);
        let k = rng.gen_range(1..=10);
        let dim = rng.gen_range(1..=6);
        // every fifth set sits on an integer lattice so distance ties occur
        let lattice = set % 5 == 0;
        let gen = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dim)
                .map(|_| if lattice { rng.gen_range(0..4) as f64 } else { rng.gen_range(-3.0..3.0) })
                .collect()
        };
        let pts: Vec<Vec<f64>> = (0..m).map(|_| gen(&mut rng)).collect();
        let lib = Lof::fit(pts.clone(), k).map_err(|e| e.to_string())?;
        let reference = ReferenceLof::new(pts, k);
        for (i, s) in lib.reference_scores().iter().enumerate() {
            let e = reference.lof(&reference.pts[i], Some(i));
            worst = worst.max((s - e).abs() / e.abs().max(1.0));
            n_scores += 1;
        }
        for _ in 0..10 {
            let x = gen(&mut rng);
            let s = lib.score(&x).map_err(|e| e.to_string())?;
            let e = reference.lof(&x, None);
            worst = worst.max((s - e).abs() / e.abs().max(1.0));
            n_scores += 1;
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    within_budget(start.elapsed(), 30.0)?;
    Ok(format!("50 datasets, {n_scores} scores, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- metrics

fn pair_count_auc(normal: &[f64], anomaly: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in anomaly {
        for &n in normal {
            if a > n {
                wins += 1.0;
            } else if a == n {
                wins += 0.5;
            }
        }
    }
    wins / (normal.len() * anomaly.len()) as f64
}

fn metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for set in 0..100 {
        let nn = rng.gen_range(1..40);
        let na = rng.gen_range(1..40);
        // coarse values on half the sets to force ties
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            let v: f64 = rng.gen_range(0.0..1.0);
            if set % 2 == 0 {
                (v * 8.0).floor()
            } else {
                v
            }
        };
        let normal: Vec<f64> = (0..nn).map(|_| draw(&mut rng)).collect();
        let anomaly: Vec<f64> = (0..na).map(|_| draw(&mut rng) + 0.2).collect();
        let a = auc(&normal, &anomaly).map_err(|e| e.to_string())?;
        let e = pair_count_auc(&normal, &anomaly);
        ensure(a == e, || format!("set {set}: auc {a} vs pair count {e}"))?;
        let p1 = pauc(&normal, &anomaly, 1.0).map_err(|e| e.to_string())?;
        ensure((p1 - a).abs() <= 1e-12, || format!("set {set}: pauc(1) {p1} vs auc {a}"))?;
    }
    let sep = pauc(&[0.1, 0.2, 0.3], &[0.4, 0.9], 0.1).map_err(|e| e.to_string())?;
    ensure(sep == 1.0, || format!("separated pauc {sep}"))?;
    let hm = harmonic_mean(&[1.0, 0.5]);
    ensure((hm - 0.6667).abs() <= 1e-4, || format!("HM(1, 0.5) = {hm}"))?;
    Ok(format!("100 sets exact; pauc(1)=auc; separated pauc=1; HM(1,0.5)={hm:.4}"))
}

// ---------------------------------------------------------------- aggregators

fn aggregators() -> Check {
    let mam = Aggregator::MeanAboveMedian.apply(&[1.0, 2.0, 3.0, 4.0, 5.0]).map_err(|e| e.to_string())?;
    ensure(mam == 4.0, || format!("mean_above_median([1..5]) = {mam}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for v in 0..1000 {
        let n = rng.gen_range(1..30);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let mx = Aggregator::Max.apply(&x).unwrap();
        let mam = Aggregator::MeanAboveMedian.apply(&x).unwrap();
        let mean = Aggregator::Mean.apply(&x).unwrap();
        ensure(mx >= mam && mam >= mean, || format!("vector {v}: max {mx}, mam {mam}, mean {mean}"))?;
    }
    Ok("mean_above_median([1..5]) = 4; ordering holds on 1000 vectors".into())
}

// ---------------------------------------------------------------- sampler

fn sampler() -> Check {
    let mut records = Vec::new();
    for (mt, per_id) in [("fan", [23, 7, 11]), ("pump", [30, 30, 30]), ("valve", [5, 9, 2])] {
        for (id, &count) in per_id.iter().enumerate() {
            for c in 0..count {
                records.push(ClipRecord {
                    path: format!("{mt}/train/section_{id:02}_{c:04}.wav").into(),
                    machine_type: mt.into(),
                    product_id: id,
                    split: Split::Train,
                    label: Label::Normal,
                    duration_s: 10.0,
                    sample_rate_hz: 16_000,
                });
            }
        }
    }
    let manifest = Manifest::from_records("/", records, 0).map_err(|e| e.to_string())?;
    let mut total = 0;
    for (machine, batch_size) in [("fan", 8), ("valve", 6), ("pump", 32)] {
        let mut s = BatchSampler::new(&manifest, machine, batch_size, 3).map_err(|e| e.to_string())?;
        let mut seen = 0;
        while seen < 1000 {
            for b in s.epoch() {
                ensure(b.len() == batch_size, || format!("{machine}: batch of {}", b.len()))?;
                let flagged = b.iter().filter(|c| c.is_target).count();
                let actual = b.iter().filter(|c| manifest.records[c.record].machine_type == machine).count();
                ensure(flagged == batch_size / 2 && actual == batch_size / 2, || {
                    format!("{machine}: {actual}/{batch_size} target clips")
                })?;
                seen += 1;
            }
        }
        total += seen;
    }
    Ok(format!("{total} batches over 3 machine types, each exactly half target"))
}

// ---------------------------------------------------------------- no_h sign

fn no_h_direction() -> Check {
    let clip = |own: f64| ClipEmbeddings {
        clip_id: "c".into(),
        machine_type: "fan".into(),
        product_id: 1,
        label: Label::Normal,
        split: Split::EvalTest,
        outputs: SegmentOutputs {
            start_s: vec![0.0, 1.0],
            embeddings: vec![vec![0.0; 128]; 2],
            product_probs: vec![vec![0.1, own, 0.9], vec![0.2, own, 0.8]],
            machine_probs: vec![0.5, 0.5],
        },
    };
    let confident = score_clip_without_inlier(&clip(0.95)).map_err(|e| e.to_string())?.aggregate;
    let unsure = score_clip_without_inlier(&clip(0.2)).map_err(|e| e.to_string())?.aggregate;
    ensure((confident - 0.05).abs() < 1e-12, || format!("score {confident}, expected 0.05"))?;
    ensure(unsure > confident, || "lower own-ID probability must score as more anomalous".into())?;
    Ok(format!("1 - mean own-ID probability: {confident:.2} (p=0.95) < {unsure:.2} (p=0.2)"))
}

// ---------------------------------------------------------------- end to end

fn overall(report: &Path) -> f64 {
    read_json(report)["overall_harmonic_mean"].as_f64().unwrap_or(f64::NAN)
}

/// AUC of squared embedding norms, target machine rows as the positive class,
/// using each machine type's encoder over all machine types' eval-test clips.
fn norm_separation(work: &Path, manifest: &Manifest) -> Result<Vec<(String, f64)>, String> {
    let stats: BTreeMap<String, NormStats> =
        serde_json::from_slice(&std::fs::read(work.join("norm_stats.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let extractor = std::sync::Arc::new(LogMelExtractor::new(MelConfig::default()).map_err(|e| e.to_string())?);
    let mut out = Vec::new();
    for target in &manifest.machine_types {
        let ck = Checkpoint::load(&work.join("full").join(target).join("model.ckpt")).map_err(|e| e.to_string())?;
        let cfg: asd_core::config::RunConfig = serde_json::from_value(ck.header.run_config.clone()).map_err(|e| e.to_string())?;
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for m in &manifest.machine_types {
            let embedder = Embedder {
                encoder: ck.encoder(None).map_err(|e| e.to_string())?,
                extractor: extractor.clone(),
                stats: stats[m].clone(),
                n_segments: cfg.n_segments,
                segment_s: cfg.segment_seconds,
            };
            let clips = embed_manifest(&embedder, manifest, m, &[Split::EvalTest]).map_err(|e| e.to_string())?;
            let norms = clips
                .iter()
                .flat_map(|c| c.outputs.embeddings.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>()));
            if m == target {
                pos.extend(norms);
            } else {
                neg.extend(norms);
            }
        }
        out.push((target.clone(), auc(&neg, &pos).map_err(|e| e.to_string())?));
    }
    Ok(out)
}

struct DeskRun {
    root: PathBuf,
    work: PathBuf,
    manifest: PathBuf,
    full: f64,
    no_h: f64,
    elapsed: Duration,
}

static DESK_RUN: OnceLock<Result<DeskRun, String>> = OnceLock::new();

/// Synthesizes the desk corpus and runs the full pipeline plus the no_h arm, once.
fn desk_run() -> Result<&'static DeskRun, String> {
    DESK_RUN
        .get_or_init(|| {
            let root = tempfile::tempdir().map_err(|e| e.to_string())?.keep();
            let corpus = root.join("corpus");
            let work = root.join("work");
            run_ok(asd().arg("synth").arg("--out").arg(&corpus));
            let manifest = corpus.join("manifest.json");
            let start = Instant::now();
            run_ok(asd().args(["--desk", "pipeline", "--workdir"]).arg(&work).arg("--manifest").arg(&manifest));
            let elapsed = start.elapsed();
            run_ok(
                asd()
                    .args(["--desk", "ablate", "--arm", "no_h", "--workdir"])
                    .arg(&work)
                    .arg("--manifest")
                    .arg(&manifest),
            );
            println!("{}", std::fs::read_to_string(work.join("ablation.txt")).unwrap_or_default());
            Ok(DeskRun {
                full: overall(&work.join("full/report.json")),
                no_h: overall(&work.join("no_h/report.json")),
                root,
                work,
                manifest,
                elapsed,
            })
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn end_to_end() -> Check {
    let run = desk_run()?;
    let detail = format!(
        "full {:.2} %, no_h {:.2} %, pipeline {:.0} s on {} worker thread(s)",
        100.0 * run.full,
        100.0 * run.no_h,
        run.elapsed.as_secs_f64(),
        rayon::current_num_threads()
    );
    ensure(run.full >= 0.85, || format!("{detail}: full below 85 %"))?;
    ensure(run.full > run.no_h, || format!("{detail}: full does not exceed no_h"))?;
    within_budget(run.elapsed, 15.0 * 60.0).map_err(|e| format!("{detail}: {e}"))?;
    Ok(detail)
}

/// Export example: the squared embedding norm separates target from non-target clips.
fn embedding_norms() -> Check {
    let run = desk_run()?;
    let manifest = Manifest::load(&run.manifest).map_err(|e| e.to_string())?;
    let seps = norm_separation(&run.work, &manifest)?;
    let detail: Vec<String> = seps.iter().map(|(m, a)| format!("{m} {a:.3}")).collect();
    let detail = format!("AUC per target encoder: {}", detail.join(", "));
    // The sign of the norm head's slope is learned, so either direction counts.
    ensure(seps.iter().all(|(_, a)| *a > 0.7 || *a < 0.3), || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- ablation structure

fn ablation_structure() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (manifest, cfg) = tiny_setup(dir.path(), 11);
    let work = dir.path().join("work");
    for arm in ["ids_only", "no_mixup", "full"] {
        run_ok(
            asd()
                .arg("--config")
                .arg(&cfg)
                .args(["train", "--arm", arm, "--workdir"])
                .arg(&work)
                .arg("--manifest")
                .arg(&manifest),
        );
    }
    let mut steps = 0;
    let mut worst: f64 = 0.0;
    let mut full_fractional = 0;
    for m in ["fan", "pump"] {
        let log = read_json(&work.join("ids_only").join(m).join("train_log.json"));
        let lambda = log["lambda"].as_f64().unwrap();
        for s in log["steps"].as_array().unwrap() {
            let (total, lp) = (s["total_loss"].as_f64().unwrap(), s["product_loss"].as_f64().unwrap());
            worst = worst.max((total - lambda * lp).abs() / (lambda * lp).abs().max(1.0));
            steps += 1;
        }
        let log = read_json(&work.join("no_mixup").join(m).join("train_log.json"));
        for s in log["steps"].as_array().unwrap() {
            let f = s["fractional_labels"].as_u64().unwrap();
            ensure(f == 0, || format!("{m} no_mixup step {} has {f} fractional labels", s["step"]))?;
        }
        let log = read_json(&work.join("full").join(m).join("train_log.json"));
        full_fractional += log["steps"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["fractional_labels"].as_u64().unwrap())
            .sum::<u64>();
    }
    ensure(worst <= 1e-12, || format!("ids_only total deviates from lambda*lp by {worst:e}"))?;
    ensure(full_fractional > 0, || "mixup arm produced no fractional labels; check is vacuous".into())?;
    Ok(format!(
        "ids_only: {steps} steps, max |total - lambda*lp| {worst:.1e}; no_mixup: 0 fractional labels (full arm: {full_fractional})"
    ))
}

// ---------------------------------------------------------------- determinism

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let root = dir.path().join(run);
        std::fs::create_dir_all(&root).map_err(|e| e.to_string())?;
        let (manifest, cfg) = tiny_setup(&root, 12);
        let work = root.join("work");
        let base = |cmd: &[&str]| {
            let mut c = asd();
            c.arg("--config").arg(&cfg).args(cmd).arg("--workdir").arg(&work).arg("--manifest").arg(&manifest);
            c
        };
        run_ok(&mut base(&["--seed", "5", "pipeline", "--ablations"]));
        let emb = work.join("emb.csv");
        run_ok(base(&["--seed", "5", "export", "--split", "eval-val"]).arg("--out").arg(&emb));
        let mut corpus = tree_hashes(&root.join("corpus"));
        corpus.remove("manifest.json");
        trees.push((corpus, tree_hashes(&work), std::fs::read(root.join("corpus/manifest.json")).unwrap()));
    }
    let (a, b) = (&trees[0], &trees[1]);
    ensure(a.0 == b.0, || "synthesized audio differs between runs".into())?;
    let manifests = |bytes: &[u8]| -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        v.as_object_mut().unwrap().remove("base_dir");
        v
    };
    ensure(manifests(&a.2) == manifests(&b.2), || "manifests differ".into())?;
    let differing: Vec<&String> = a.1.keys().filter(|k| a.1.get(*k) != b.1.get(*k)).collect();
    ensure(a.1.len() == b.1.len() && differing.is_empty(), || format!("artifacts differ: {differing:?}"))?;
    Ok(format!("{} audio files and {} pipeline artifacts byte-identical across two runs", a.0.len(), a.1.len()))
}

// ---------------------------------------------------------------- harness

fn report(name: &str, result: Check) -> bool {
    match result {
        Ok(detail) => {
            println!("PASS  {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL  {name}: {detail}");
            false
        }
    }
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("loss oracle equivalence", loss_oracle),
        ("gradient correctness (finite differences, f64)", gradient_check),
        ("gmm log-likelihood non-decreasing", gmm_monotone),
        ("gmm parameter recovery", gmm_recovery),
        ("lof matches quadratic-time reference", lof_reference),
        ("metrics: auc, pauc, harmonic mean", metrics),
        ("aggregators", aggregators),
        ("sampler half target", sampler),
        ("no_h score direction", no_h_direction),
        ("ablation structure", ablation_structure),
        ("determinism", determinism),
        ("end-to-end desk run", end_to_end),
        ("end-to-end embedding norm separation", embedding_norms),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|flt| name.contains(flt.as_str())) {
            continue;
        }
        ran += 1;
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        if !report(name, result) {
            failed += 1;
        }
    }
    if let Some(Ok(run)) = DESK_RUN.get() {
        let _ = std::fs::remove_dir_all(&run.root);
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
