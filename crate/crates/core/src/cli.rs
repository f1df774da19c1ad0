//! Command-line entry points and the work-directory conventions that tie the
//! stages together.
//!
//! Work directory layout:
//!
//! ```text
//! <workdir>/norm_stats.json
//! <workdir>/<arm>/<machine>/model.ckpt
//! <workdir>/<arm>/<machine>/train_log.json
//! <workdir>/<arm>/<machine>/inlier/<kind>_p<p>_id<k>.inlier
//! <workdir>/<arm>/<machine>/scores_<split>.csv
//! <workdir>/<arm>/report.json, report.txt
//! <workdir>/ablation.txt
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{load_overrides, RunConfig};
use crate::dataset::{generate_synthetic, scan_corpus, Label, Layout, Manifest, Split, SynthSpec};
use crate::embed_export::write_embeddings_csv;
use crate::error::{AsdError, Result};
use crate::features::{fit_norm_stats, LogMelExtractor, MelConfig, NormStats};
use crate::metrics::{comparison_table, EvalReport, LabeledScore};
use crate::nnet::Checkpoint;
use crate::objective::LossMode;
use crate::scoring::{
    embed_manifest, read_scores_csv, score_all, score_clip_without_inlier, write_scores_csv, ClipEmbeddings,
    ClipScore, Embedder, InlierSet,
};
use crate::train::train_machine;
use crate::util;

/// Environment variable bounding the number of data-parallel worker threads.
pub const WORKERS_ENV: &str = "ASD_NUM_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "asd", version, about = "Anomalous sound detection: outlier-exposure embedding + inlier modeling")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Flat JSON file of configuration overrides.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Restrict to one machine type.
    #[arg(long, global = true)]
    pub machine: Option<String>,
    /// Small encoder and short schedule for quick CPU runs.
    #[arg(long, global = true)]
    pub desk: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Output and artifact directory.
    #[arg(long)]
    pub workdir: PathBuf,
    /// Manifest file; defaults to <workdir>/manifest.json.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// The full method.
    #[value(name = "full")]
    Full,
    #[value(name = "no_mixup")]
    NoMixup,
    /// Scores with the product-ID probabilities instead of an inlier model.
    #[value(name = "no_h")]
    NoH,
    /// Trains on the product-ID loss only.
    #[value(name = "ids_only")]
    IdsOnly,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Full, Arm::NoMixup, Arm::NoH, Arm::IdsOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::NoMixup => "no_mixup",
            Arm::NoH => "no_h",
            Arm::IdsOnly => "ids_only",
        }
    }

    /// The arm whose trained encoder this arm uses.
    pub fn training_arm(self) -> Arm {
        match self {
            Arm::NoH => Arm::Full,
            other => other,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Arm::Full => "proposed",
            Arm::NoMixup => "w/o mixup",
            Arm::NoH => "w/o h",
            Arm::IdsOnly => "product IDs only",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth {
        /// JSON synthesis spec; the built-in three-machine spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scan a corpus directory into a manifest.
    Scan {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "dcase2021")]
        layout: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the encoder for each machine type.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "full")]
        arm: Arm,
    },
    /// Fit per-ID inlier models on training embeddings.
    FitInlier {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "full")]
        arm: Arm,
        /// Inlier hyperparameter; the configured one when omitted.
        #[arg(long)]
        p: Option<usize>,
    },
    /// Score evaluation clips.
    Score {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "full")]
        arm: Arm,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value = "eval-test")]
        split: Split,
    },
    /// Compute AUC / pAUC reports from score files.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "full")]
        arm: Arm,
        #[arg(long, default_value = "eval-test")]
        split: Split,
    },
    /// Run one ablation arm end to end and update the comparison table.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        arm: Arm,
    },
    /// Train, select the inlier hyperparameter on eval-val, and report on eval-test.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        /// Also run every ablation arm and write the comparison table.
        #[arg(long)]
        ablations: bool,
    },
    /// Export per-segment embeddings as CSV.
    Export {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "full")]
        arm: Arm,
        #[arg(long, default_value = "eval-test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
}

/// One grid point of the inlier hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub p: usize,
    pub eval_val_harmonic_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineProvenance {
    pub config_hash: String,
    pub checkpoint_epoch: usize,
    pub checkpoint_validation_loss: f64,
    pub h_type: String,
    pub aggregator: String,
    pub chosen_p: Option<usize>,
    pub grid: Vec<GridPoint>,
}

/// Resolved inputs and conventions for the run commands.
pub struct Workspace {
    pub manifest: Manifest,
    pub dir: PathBuf,
    overrides: Map<String, Value>,
    seed: Option<u64>,
    desk: bool,
    machine: Option<String>,
    extractor: Arc<LogMelExtractor>,
}

impl Workspace {
    pub fn open(run: &RunArgs, global: &GlobalArgs) -> Result<Self> {
        let manifest_path = run.manifest.clone().unwrap_or_else(|| run.workdir.join("manifest.json"));
        let manifest = Manifest::load(&manifest_path)?;
        let overrides = match &global.config {
            Some(p) => load_overrides(p)?,
            None => Map::new(),
        };
        if let Some(m) = &global.machine {
            if manifest.machine_index(m).is_none() {
                return Err(AsdError::Config(format!("machine type {m} is not in the manifest")));
            }
        }
        let ws = Workspace {
            manifest,
            dir: run.workdir.clone(),
            overrides,
            seed: global.seed,
            desk: global.desk,
            machine: global.machine.clone(),
            extractor: Arc::new(LogMelExtractor::new(MelConfig::default())?),
        };
        // Validate every effective config before any compute.
        for m in ws.machines() {
            for arm in Arm::ALL {
                ws.config(&m, arm)?;
            }
        }
        Ok(ws)
    }

    pub fn machines(&self) -> Vec<String> {
        match &self.machine {
            Some(m) => vec![m.clone()],
            None => self.manifest.machine_types.clone(),
        }
    }

    /// Effective configuration: machine defaults (or the desk preset), then the
    /// override file, then `--seed`, then the arm's modification.
    pub fn config(&self, machine: &str, arm: Arm) -> Result<RunConfig> {
        let mut cfg = if self.desk {
            RunConfig::desk_for(machine)
        } else {
            RunConfig::defaults_for(machine)
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        match arm {
            Arm::Full | Arm::NoH => {}
            Arm::NoMixup => cfg.mixup = false,
            Arm::IdsOnly => cfg.loss_mode = LossMode::IdsOnly,
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn machine_dir(&self, arm: Arm, machine: &str) -> PathBuf {
        self.dir.join(arm.as_str()).join(machine)
    }

    fn norm_stats_path(&self) -> PathBuf {
        self.dir.join("norm_stats.json")
    }

    /// Loads the per-machine normalization statistics, computing them if absent.
    pub fn norm_stats(&self) -> Result<BTreeMap<String, NormStats>> {
        let path = self.norm_stats_path();
        if path.exists() {
            let stats: BTreeMap<String, NormStats> = util::read_json(&path)?;
            if self.manifest.machine_types.iter().all(|m| stats.contains_key(m)) {
                return Ok(stats);
            }
        }
        let mut stats = BTreeMap::new();
        for m in &self.manifest.machine_types {
            let s = fit_norm_stats(&self.manifest, m)?;
            if s.clamped {
                log::warn!("{m}: amplitude std below floor, clamped");
            }
            stats.insert(m.clone(), s);
        }
        util::write_json(&path, &stats)?;
        Ok(stats)
    }

    /// Trains and saves the encoder of `machine` for `arm`.
    pub fn train(&self, machine: &str, arm: Arm) -> Result<Checkpoint> {
        let arm = arm.training_arm();
        let cfg = self.config(machine, arm)?;
        let stats = self.norm_stats()?;
        log::info!("training {machine} ({}, config {})", arm.as_str(), cfg.hash());
        let out = train_machine(&self.manifest, &stats, &cfg, "norm_stats.json")?;
        let dir = self.machine_dir(arm, machine);
        out.checkpoint.save(&dir.join("model.ckpt"))?;
        util::write_json(&dir.join("train_log.json"), &out.log)?;
        Ok(out.checkpoint)
    }

    /// Existing checkpoint trained with the current effective config, or a fresh one.
    pub fn checkpoint(&self, machine: &str, arm: Arm, train_if_missing: bool) -> Result<Checkpoint> {
        let arm = arm.training_arm();
        let cfg = self.config(machine, arm)?;
        let path = self.machine_dir(arm, machine).join("model.ckpt");
        if path.exists() {
            let ck = Checkpoint::load(&path)?;
            if ck.header.run_config == cfg.to_json() {
                return Ok(ck);
            }
            if !train_if_missing {
                return Err(AsdError::CheckpointMismatch(format!(
                    "{} was trained with a different configuration",
                    path.display()
                )));
            }
            log::info!("{}: configuration changed, retraining", path.display());
        } else if !train_if_missing {
            return Err(AsdError::InvalidInput(format!("{} not found; run train first", path.display())));
        }
        self.train(machine, arm)
    }

    pub fn embedder(&self, ck: &Checkpoint, cfg: &RunConfig) -> Result<Embedder> {
        let enc_cfg = cfg.encoder_config(self.extractor.config());
        Ok(Embedder {
            encoder: ck.encoder(Some((&enc_cfg, self.manifest.ids_per_type)))?,
            extractor: self.extractor.clone(),
            stats: ck.header.norm_stats.clone(),
            n_segments: cfg.n_segments,
            segment_s: cfg.segment_seconds,
        })
    }

    fn fit_and_save(
        &self,
        machine: &str,
        arm: Arm,
        cfg: &RunConfig,
        fit: &[ClipEmbeddings],
        p: usize,
    ) -> Result<InlierSet> {
        let (set, metas) = InlierSet::fit(machine, fit, cfg.h_type, p, cfg.covariance, cfg.seed)?;
        set.save(&self.machine_dir(arm, machine).join("inlier"), &metas)?;
        Ok(set)
    }

    fn score_split(&self, arm: Arm, cfg: &RunConfig, clips: &[ClipEmbeddings], set: Option<&InlierSet>) -> Result<Vec<ClipScore>> {
        match (arm, set) {
            (Arm::NoH, _) => clips.iter().map(score_clip_without_inlier).collect(),
            (_, Some(set)) => score_all(clips, set, cfg.aggregator),
            (_, None) => Err(AsdError::InvalidInput("inlier models required".into())),
        }
    }

    /// Full per-machine run: train (or reuse), embed, grid-search p on eval-val,
    /// score eval-val and eval-test with the chosen p.
    pub fn run_machine(&self, machine: &str, arm: Arm) -> Result<(Vec<ClipScore>, MachineProvenance)> {
        let cfg = self.config(machine, arm)?;
        let ck = self.checkpoint(machine, arm, true).map_err(|e| e.in_stage("train"))?;
        let embedder = self.embedder(&ck, &cfg)?;
        let embed = |splits: &[Split]| embed_manifest(&embedder, &self.manifest, machine, splits);
        let val = embed(&[Split::EvalVal]).map_err(|e| e.in_stage("embed"))?;
        let test = embed(&[Split::EvalTest]).map_err(|e| e.in_stage("embed"))?;
        let dir = self.machine_dir(arm, machine);
        let mut prov = MachineProvenance {
            config_hash: cfg.hash(),
            checkpoint_epoch: ck.header.epoch,
            checkpoint_validation_loss: ck.header.validation_loss,
            h_type: if arm == Arm::NoH { "none".into() } else { cfg.h_type.to_string() },
            aggregator: if arm == Arm::NoH { "mean".into() } else { cfg.aggregator.to_string() },
            chosen_p: None,
            grid: Vec::new(),
        };
        let (val_scores, test_scores) = if arm == Arm::NoH {
            (self.score_split(arm, &cfg, &val, None)?, self.score_split(arm, &cfg, &test, None)?)
        } else {
            let fit = embed(cfg.fit_set.splits()).map_err(|e| e.in_stage("embed"))?;
            let mut best: Option<(usize, f64, InlierSet, Vec<ClipScore>)> = None;
            for &p in &cfg.p_grid {
                let attempt = InlierSet::fit(machine, &fit, cfg.h_type, p, cfg.covariance, cfg.seed).and_then(|(set, _)| {
                    let scores = self.score_split(arm, &cfg, &val, Some(&set))?;
                    let hm = EvalReport::from_scores(&labeled(&scores), cfg.max_fpr)?.overall_harmonic_mean;
                    Ok((set, scores, hm))
                });
                match attempt {
                    Ok((set, scores, hm)) => {
                        log::info!("{machine} {}: p = {p} eval-val harmonic mean {:.4}", arm.as_str(), hm);
                        prov.grid.push(GridPoint {
                            p,
                            eval_val_harmonic_mean: Some(hm),
                            error: None,
                        });
                        if best.as_ref().map_or(true, |b| hm > b.1) {
                            best = Some((p, hm, set, scores));
                        }
                    }
                    Err(e) => {
                        log::warn!("{machine}: p = {p} skipped: {e}");
                        prov.grid.push(GridPoint {
                            p,
                            eval_val_harmonic_mean: None,
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
            let (p, _, _, val_scores) =
                best.ok_or_else(|| AsdError::Numerical(format!("{machine}: no inlier hyperparameter could be fitted")).in_stage("fit-inlier"))?;
            prov.chosen_p = Some(p);
            let set = self.fit_and_save(machine, arm, &cfg, &fit, p).map_err(|e| e.in_stage("fit-inlier"))?;
            (val_scores, self.score_split(arm, &cfg, &test, Some(&set)).map_err(|e| e.in_stage("score"))?)
        };
        write_scores_csv(&dir.join("scores_eval-val.csv"), &val_scores)?;
        write_scores_csv(&dir.join("scores_eval-test.csv"), &test_scores)?;
        Ok((test_scores, prov))
    }

    /// Runs every selected machine for `arm` and writes the arm's report.
    pub fn pipeline(&self, arm: Arm) -> Result<EvalReport> {
        let mut all = Vec::new();
        let mut prov = Map::new();
        let mut max_fpr = crate::metrics::DEFAULT_MAX_FPR;
        for m in self.machines() {
            max_fpr = self.config(&m, arm)?.max_fpr;
            let (scores, p) = self.run_machine(&m, arm)?;
            all.extend(scores);
            prov.insert(m, serde_json::to_value(p).expect("provenance serializes"));
        }
        let mut report = EvalReport::from_scores(&labeled(&all), max_fpr).map_err(|e| e.in_stage("evaluate"))?;
        report.provenance = json!({ "arm": arm.as_str(), "split": Split::EvalTest.as_str(), "machines": prov });
        self.write_report(arm, &report)?;
        Ok(report)
    }

    pub fn write_report(&self, arm: Arm, report: &EvalReport) -> Result<()> {
        let dir = self.dir.join(arm.as_str());
        util::write_json(&dir.join("report.json"), report)?;
        let text = format!(
            "{}\n{}",
            comparison_table(&[(arm.display_name(), report)]),
            report.detail_table()
        );
        std::fs::write(dir.join("report.txt"), text).map_err(|e| AsdError::io(dir.join("report.txt"), e))?;
        if report.has_nan() {
            return Err(AsdError::Numerical("report contains NaN metrics".into()));
        }
        Ok(())
    }

    /// Rebuilds the comparison table from whichever arm reports exist.
    pub fn write_ablation_table(&self) -> Result<String> {
        let mut rows = Vec::new();
        for arm in Arm::ALL {
            let path = self.dir.join(arm.as_str()).join("report.json");
            if path.exists() {
                rows.push((arm, util::read_json::<EvalReport>(&path)?));
            }
        }
        let named: Vec<(&str, &EvalReport)> = rows.iter().map(|(a, r)| (a.display_name(), r)).collect();
        let table = comparison_table(&named);
        let path = self.dir.join("ablation.txt");
        std::fs::write(&path, &table).map_err(|e| AsdError::io(&path, e))?;
        Ok(table)
    }
}

pub fn labeled(scores: &[ClipScore]) -> Vec<LabeledScore> {
    scores
        .iter()
        .map(|s| LabeledScore {
            machine_type: s.machine_type.clone(),
            product_id: s.product_id,
            is_anomaly: s.label == Label::Anomaly,
            score: s.aggregate,
        })
        .collect()
}

/// Sizes the global thread pool from `ASD_NUM_WORKERS` when set.
pub fn init_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| AsdError::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        // A pool may already exist when called twice in one process; that is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn product_ids(manifest: &Manifest, machine: &str, splits: &[Split]) -> Vec<usize> {
    let mut ids: Vec<usize> = manifest.select(Some(machine), splits).map(|(_, r)| r.product_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    init_workers()?;
    let g = &cli.global;
    match &cli.command {
        Command::Synth { spec, out } => {
            let mut spec = match spec {
                Some(p) => util::read_json::<SynthSpec>(p)?,
                None => SynthSpec::desk(0),
            };
            if let Some(s) = g.seed {
                spec.seed = s;
            }
            let m = generate_synthetic(&spec, out)?;
            println!("wrote {} clips and {}", m.records.len(), out.join("manifest.json").display());
        }
        Command::Scan { root, layout, out } => {
            let layout: Layout = layout.parse()?;
            let m = scan_corpus(root, layout, g.seed.unwrap_or(0))?;
            m.save(out)?;
            println!("{} records, {} machine types, K = {}", m.records.len(), m.machine_types.len(), m.ids_per_type);
        }
        Command::Train { run, arm } => {
            let ws = Workspace::open(run, g)?;
            for m in ws.machines() {
                let ck = ws.train(&m, *arm)?;
                println!("{m}: best epoch {} (validation loss {:.6})", ck.header.epoch, ck.header.validation_loss);
            }
        }
        Command::FitInlier { run, arm, p } => {
            let ws = Workspace::open(run, g)?;
            for m in ws.machines() {
                let cfg = ws.config(&m, *arm)?;
                let ck = ws.checkpoint(&m, *arm, false)?;
                let fit = embed_manifest(&ws.embedder(&ck, &cfg)?, &ws.manifest, &m, cfg.fit_set.splits())?;
                let p = p.unwrap_or(cfg.h_param);
                let set = ws.fit_and_save(&m, *arm, &cfg, &fit, p)?;
                println!("{m}: {} {} models with p = {p}", set.models.len(), cfg.h_type);
            }
        }
        Command::Score { run, arm, p, split } => {
            let ws = Workspace::open(run, g)?;
            for m in ws.machines() {
                let cfg = ws.config(&m, *arm)?;
                let ck = ws.checkpoint(&m, *arm, false)?;
                let clips = embed_manifest(&ws.embedder(&ck, &cfg)?, &ws.manifest, &m, &[*split])?;
                let set = if *arm == Arm::NoH {
                    None
                } else {
                    let ids = product_ids(&ws.manifest, &m, &[*split]);
                    let dir = ws.machine_dir(*arm, &m).join("inlier");
                    Some(InlierSet::load(&dir, &m, cfg.h_type, p.unwrap_or(cfg.h_param), &ids)?)
                };
                let scores = ws.score_split(*arm, &cfg, &clips, set.as_ref())?;
                let path = ws.machine_dir(*arm, &m).join(format!("scores_{split}.csv"));
                write_scores_csv(&path, &scores)?;
                println!("{m}: {} clips scored -> {}", scores.len(), path.display());
            }
        }
        Command::Evaluate { run, arm, split } => {
            let ws = Workspace::open(run, g)?;
            let mut all = Vec::new();
            let mut max_fpr = crate::metrics::DEFAULT_MAX_FPR;
            for m in ws.machines() {
                max_fpr = ws.config(&m, *arm)?.max_fpr;
                all.extend(read_scores_csv(&ws.machine_dir(*arm, &m).join(format!("scores_{split}.csv")))?);
            }
            let mut report = EvalReport::from_scores(&labeled(&all), max_fpr)?;
            report.provenance = json!({ "arm": arm.as_str(), "split": split.as_str() });
            let table = comparison_table(&[(arm.display_name(), &report)]);
            ws.write_report(*arm, &report)?;
            print!("{table}");
        }
        Command::Ablate { run, arm } => {
            let ws = Workspace::open(run, g)?;
            let report = ws.pipeline(*arm)?;
            println!("{}: overall harmonic mean {:.2} %", arm.as_str(), 100.0 * report.overall_harmonic_mean);
            print!("{}", ws.write_ablation_table()?);
        }
        Command::Pipeline { run, ablations } => {
            let ws = Workspace::open(run, g)?;
            let arms: &[Arm] = if *ablations { &Arm::ALL } else { &[Arm::Full] };
            for &arm in arms {
                let report = ws.pipeline(arm)?;
                println!("{}: overall harmonic mean {:.2} %", arm.as_str(), 100.0 * report.overall_harmonic_mean);
            }
            print!("{}", ws.write_ablation_table()?);
        }
        Command::Export { run, arm, split, out } => {
            let ws = Workspace::open(run, g)?;
            let mut clips = Vec::new();
            for m in ws.machines() {
                let cfg = ws.config(&m, *arm)?;
                let ck = ws.checkpoint(&m, *arm, false)?;
                clips.extend(embed_manifest(&ws.embedder(&ck, &cfg)?, &ws.manifest, &m, &[*split])?);
            }
            let rows = write_embeddings_csv(out, &clips)?;
            println!("{rows} rows -> {}", out.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arguments_parse() {
        let cli = Cli::try_parse_from([
            "asd", "pipeline", "--workdir", "w", "--desk", "--seed", "3", "--machine", "fan",
        ])
        .unwrap();
        assert!(cli.global.desk);
        assert_eq!(cli.global.seed, Some(3));
        assert!(matches!(cli.command, Command::Pipeline { ablations: false, .. }));
        let cli = Cli::try_parse_from(["asd", "ablate", "--workdir", "w", "--arm", "no_h"]).unwrap();
        assert!(matches!(cli.command, Command::Ablate { arm: Arm::NoH, .. }));
        assert!(Cli::try_parse_from(["asd", "ablate", "--workdir", "w", "--arm", "no_gmm"]).is_err());
        let cli = Cli::try_parse_from(["asd", "score", "--workdir", "w", "--split", "eval-val"]).unwrap();
        assert!(matches!(cli.command, Command::Score { split: Split::EvalVal, .. }));
    }

    #[test]
    fn arm_training_source() {
        assert_eq!(Arm::NoH.training_arm(), Arm::Full);
        assert_eq!(Arm::IdsOnly.training_arm(), Arm::IdsOnly);
    }
}
