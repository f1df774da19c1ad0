//! Corpus bookkeeping: clip records, manifests, split assignment, directory
//! scanning, and the synthetic corpus generator.

mod synth;
pub mod wav;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{AsdError, Result};
use crate::util;

pub use synth::{
    generate_synthetic, synthesize_clip, AnomalyTransform, BurstSpec, IdSignature, MachineSynth,
    SynthSpec,
};

/// Fraction of each machine type's training clips held out for validation.
pub const TRAIN_VAL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "train-val")]
    TrainVal,
    #[serde(rename = "eval-val")]
    EvalVal,
    #[serde(rename = "eval-test")]
    EvalTest,
}

impl Split {
    pub fn is_training(self) -> bool {
        matches!(self, Split::Train | Split::TrainVal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TrainVal => "train-val",
            Split::EvalVal => "eval-val",
            Split::EvalTest => "eval-test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = AsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "train-val" => Ok(Split::TrainVal),
            "eval-val" => Ok(Split::EvalVal),
            "eval-test" => Ok(Split::EvalTest),
            other => Err(AsdError::InvalidInput(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomaly,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
            Label::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    /// Relative to the manifest's base directory.
    pub path: PathBuf,
    pub machine_type: String,
    pub product_id: usize,
    pub split: Split,
    pub label: Label,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
}

impl ClipRecord {
    /// Stable identifier used in score and embedding tables.
    pub fn clip_id(&self) -> String {
        self.path.to_string_lossy().replace('\\', "/")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<ClipRecord>,
    pub machine_types: Vec<String>,
    pub ids_per_type: usize,
    pub seed: u64,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    /// Builds a manifest from records whose split is only coarse (`Train` for
    /// training-directory clips, `EvalVal`/`EvalTest` for evaluation clips) and
    /// assigns the final splits.
    pub fn from_records(base_dir: impl Into<PathBuf>, mut records: Vec<ClipRecord>, seed: u64) -> Result<Self> {
        if records.is_empty() {
            return Err(AsdError::InvalidInput("manifest has no records".into()));
        }
        records.sort_by(|a, b| a.path.cmp(&b.path));
        let ids_per_type = records.iter().map(|r| r.product_id).max().unwrap_or(0) + 1;
        let mut machine_types: Vec<String> = records.iter().map(|r| r.machine_type.clone()).collect();
        machine_types.sort();
        machine_types.dedup();
        assign_splits(&mut records, ids_per_type, seed);
        let m = Manifest {
            records,
            machine_types,
            ids_per_type,
            seed,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AsdError::InvalidInput(msg));
        for r in &self.records {
            if r.sample_rate_hz != wav::SAMPLE_RATE_HZ {
                return bad(format!("{}: sample rate {} Hz", r.path.display(), r.sample_rate_hz));
            }
            if r.label == Label::Unknown && !r.split.is_training() {
                return bad(format!("{}: unknown label in split {}", r.path.display(), r.split));
            }
            if r.product_id >= self.ids_per_type {
                return bad(format!(
                    "{}: product id {} >= K = {}",
                    r.path.display(),
                    r.product_id,
                    self.ids_per_type
                ));
            }
            if !self.machine_types.contains(&r.machine_type) {
                return bad(format!("{}: undeclared machine type {}", r.path.display(), r.machine_type));
            }
        }
        Ok(())
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, record: &ClipRecord) -> PathBuf {
        util::normalize(&self.base_dir.join(&record.path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Manifest = util::read_json(path)?;
        let abs = util::absolute(path)?;
        m.base_dir = abs.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    /// Writes the manifest with record paths rebased onto the manifest's own directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let abs = util::absolute(path)?;
        let new_base = abs.parent().map(Path::to_path_buf).unwrap_or_default();
        let old_base = util::absolute(&self.base_dir)?;
        let mut out = self.clone();
        for r in &mut out.records {
            r.path = util::relative_to(&old_base.join(&r.path), &new_base);
        }
        util::write_json(&abs, &out)
    }

    /// Same manifest, re-rooted. Record paths are rebased so they keep pointing at the same files.
    pub fn rebased(&self, new_base: &Path) -> Result<Self> {
        let new_base = util::absolute(new_base)?;
        let old_base = util::absolute(&self.base_dir)?;
        let mut out = self.clone();
        for r in &mut out.records {
            r.path = util::relative_to(&old_base.join(&r.path), &new_base);
        }
        out.base_dir = new_base;
        Ok(out)
    }

    pub fn select<'a>(
        &'a self,
        machine_type: Option<&'a str>,
        splits: &'a [Split],
    ) -> impl Iterator<Item = (usize, &'a ClipRecord)> + 'a {
        self.records.iter().enumerate().filter(move |(_, r)| {
            machine_type.map_or(true, |m| r.machine_type == m) && splits.contains(&r.split)
        })
    }

    pub fn count(&self, machine_type: Option<&str>, split: Split) -> usize {
        self.select(machine_type, &[split]).count()
    }

    pub fn machine_index(&self, machine_type: &str) -> Option<usize> {
        self.machine_types.iter().position(|m| m == machine_type)
    }
}

/// Evaluation product IDs below this bound go to eval-val, the rest to eval-test.
/// With six IDs this is IDs 0-2 vs 3-5.
pub fn eval_val_id_bound(ids_per_type: usize) -> usize {
    ids_per_type / 2
}

fn assign_splits(records: &mut [ClipRecord], ids_per_type: usize, seed: u64) {
    let bound = eval_val_id_bound(ids_per_type);
    let mut strata: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter_mut().enumerate() {
        match r.split {
            Split::Train | Split::TrainVal => {
                r.split = Split::Train;
                strata.entry((r.machine_type.clone(), r.product_id)).or_default().push(i);
            }
            Split::EvalVal | Split::EvalTest => {
                r.split = if r.product_id < bound { Split::EvalVal } else { Split::EvalTest };
            }
        }
    }

    // Largest-remainder apportionment keeps the global count at round(10 %) while
    // stratifying per (machine type, product id).
    let total: usize = strata.values().map(Vec::len).sum();
    let target = (total as f64 * TRAIN_VAL_FRACTION).round() as usize;
    let mut shares: Vec<(usize, f64)> = strata
        .values()
        .map(|v| {
            let exact = v.len() as f64 * TRAIN_VAL_FRACTION;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = shares.iter().map(|s| s.0).sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| shares[b].1.total_cmp(&shares[a].1).then(a.cmp(&b)));
    for &i in order.iter().take(target.saturating_sub(assigned)) {
        shares[i].0 += 1;
    }

    for (((machine, id), members), (n_val, _)) in strata.iter().zip(&shares) {
        let mut idx = members.clone();
        let mut rng = util::rng_for(seed, &[util::str_salt(machine), *id as u64]);
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(*n_val) {
            records[i].split = Split::TrainVal;
        }
    }
}

/// File naming conventions understood by [`scan_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// `<machine>/{train,test}/section_XX_{source,target}_{train,test}_{normal,anomaly}_NNNN[_...].wav`
    Dcase2021,
    /// `<machine>/{train,test}/{normal,anomaly}_id_XX_NNNNNNNN.wav`
    Dcase2020,
}

impl FromStr for Layout {
    type Err = AsdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dcase2021" => Ok(Layout::Dcase2021),
            "dcase2020" => Ok(Layout::Dcase2020),
            other => Err(AsdError::InvalidInput(format!("unknown layout '{other}'"))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Dcase2021 => "dcase2021",
            Layout::Dcase2020 => "dcase2020",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParsedName {
    pub machine_type: String,
    pub product_id: usize,
    pub is_training: bool,
    pub label: Label,
    /// Target-domain clips are outside the supported same-domain protocol.
    pub target_domain: bool,
}

impl Layout {
    pub(crate) fn parse(self, rel: &Path) -> Option<ParsedName> {
        let comps: Vec<&str> = rel.iter().map(|c| c.to_str()).collect::<Option<_>>()?;
        let [machine, dir, file] = comps.as_slice() else {
            return None;
        };
        let is_training = match *dir {
            "train" => true,
            "test" => false,
            _ => return None,
        };
        let stem = file.strip_suffix(".wav")?;
        let parts: Vec<&str> = stem.split('_').collect();
        let label_of = |s: &str| match s {
            "normal" => Some(Label::Normal),
            "anomaly" => Some(Label::Anomaly),
            _ => None,
        };
        let numeric = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
        match self {
            Layout::Dcase2021 => {
                if parts.len() < 6 || parts[0] != "section" || !numeric(parts[1]) || !numeric(parts[5]) {
                    return None;
                }
                let target_domain = match parts[2] {
                    "source" => false,
                    "target" => true,
                    _ => return None,
                };
                if parts[3] != *dir {
                    return None;
                }
                Some(ParsedName {
                    machine_type: machine.to_string(),
                    product_id: parts[1].parse().ok()?,
                    is_training,
                    label: label_of(parts[4])?,
                    target_domain,
                })
            }
            Layout::Dcase2020 => {
                if parts.len() != 4 || parts[1] != "id" || !numeric(parts[2]) || !numeric(parts[3]) {
                    return None;
                }
                Some(ParsedName {
                    machine_type: machine.to_string(),
                    product_id: parts[2].parse().ok()?,
                    is_training,
                    label: label_of(parts[0])?,
                    target_domain: false,
                })
            }
        }
    }
}

/// Scans a corpus tree and assigns splits: training clips are split 90/10 into
/// train / train-val per (machine type, product id) with `seed`; evaluation clips
/// go to eval-val or eval-test by product id.
pub fn scan_corpus(root: &Path, layout: Layout, seed: u64) -> Result<Manifest> {
    let root = util::absolute(root)?;
    if !root.is_dir() {
        return Err(AsdError::io(
            &root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(&root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.clone());
            AsdError::io(path, e.into())
        })?;
        let is_wav = entry.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("wav"));
        if entry.file_type().is_file() && is_wav {
            files.push(entry.into_path());
        }
    }
    if files.is_empty() {
        return Err(AsdError::NoAudio(root));
    }

    let parsed = files
        .iter()
        .map(|p| {
            let rel = util::relative_to(p, &root);
            layout
                .parse(&rel)
                .map(|n| (rel, n))
                .ok_or_else(|| AsdError::Layout {
                    layout: layout.to_string(),
                    path: p.clone(),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let skipped = parsed.iter().filter(|(_, n)| n.target_domain).count();
    if skipped > 0 {
        log::warn!("skipping {skipped} target-domain clips");
    }
    let records = parsed
        .into_par_iter()
        .filter(|(_, n)| !n.target_domain)
        .map(|(rel, n)| {
            let info = wav::probe(&root.join(&rel))?;
            Ok(ClipRecord {
                path: rel,
                machine_type: n.machine_type,
                product_id: n.product_id,
                split: if n.is_training { Split::Train } else { Split::EvalTest },
                label: n.label,
                duration_s: info.duration_s(),
                sample_rate_hz: info.sample_rate_hz,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(AsdError::NoAudio(root));
    }
    Manifest::from_records(root, records, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(machine: &str, id: usize, idx: usize, training: bool, label: Label) -> ClipRecord {
        let dir = if training { "train" } else { "test" };
        ClipRecord {
            path: PathBuf::from(format!("{machine}/{dir}/section_{id:02}_source_{dir}_{label}_{idx:04}.wav")),
            machine_type: machine.to_string(),
            product_id: id,
            split: if training { Split::Train } else { Split::EvalTest },
            label,
            duration_s: 10.0,
            sample_rate_hz: 16_000,
        }
    }

    const MACHINES: [&str; 7] = ["fan", "gearbox", "pump", "valve", "slider", "ToyCar", "ToyTrain"];

    #[test]
    fn full_scale_corpus_counts() {
        let mut recs = Vec::new();
        for m in MACHINES {
            for id in 0..6 {
                for i in 0..1000 {
                    recs.push(record(m, id, i, true, Label::Normal));
                }
                for i in 0..100 {
                    recs.push(record(m, id, i, false, Label::Normal));
                    recs.push(record(m, id, 100 + i, false, Label::Anomaly));
                }
            }
        }
        let m = Manifest::from_records("/data", recs, 0).unwrap();
        let train_side = m.records.iter().filter(|r| r.split.is_training()).count();
        assert_eq!(train_side, 42_000);
        assert_eq!(m.count(None, Split::TrainVal), 4_200);
        assert_eq!(m.ids_per_type, 6);
        for r in &m.records {
            match r.split {
                Split::EvalVal => assert!(r.product_id <= 2),
                Split::EvalTest => assert!(r.product_id >= 3),
                _ => assert_eq!(r.label, Label::Normal),
            }
        }
        // stratified: exactly 100 of each (machine, id) stratum
        for machine in MACHINES {
            for id in 0..6 {
                let n = m
                    .select(Some(machine), &[Split::TrainVal])
                    .filter(|(_, r)| r.product_id == id)
                    .count();
                assert_eq!(n, 100);
            }
        }
    }

    #[test]
    fn hundred_clip_split_is_exactly_ten() {
        // 3 machine types x 3 ids with uneven strata (11 or 12 clips), 100 total.
        let mut recs = Vec::new();
        let mut n = 0;
        for m in ["a", "b", "c"] {
            for id in 0..3 {
                let count = if n < 1 { 12 } else { 11 };
                n += 1;
                for i in 0..count {
                    recs.push(record(m, id, i, true, Label::Normal));
                }
            }
        }
        assert_eq!(recs.len(), 100);
        let m = Manifest::from_records("/x", recs, 1).unwrap();
        assert_eq!(m.count(None, Split::TrainVal), 10);
    }

    #[test]
    fn split_is_pure_function_of_contents_and_seed() {
        let recs: Vec<_> = (0..50).map(|i| record("fan", i % 2, i, true, Label::Normal)).collect();
        let mut shuffled = recs.clone();
        shuffled.reverse();
        let a = Manifest::from_records("/x", recs.clone(), 3).unwrap();
        let b = Manifest::from_records("/x", shuffled, 3).unwrap();
        assert_eq!(a, b);
        let c = Manifest::from_records("/x", recs, 4).unwrap();
        let val = |m: &Manifest| {
            m.records
                .iter()
                .filter(|r| r.split == Split::TrainVal)
                .map(|r| r.path.clone())
                .collect::<Vec<_>>()
        };
        assert_ne!(val(&a), val(&c));
    }

    #[test]
    fn parse_layouts() {
        let p = Layout::Dcase2021
            .parse(Path::new("fan/train/section_02_source_train_normal_0013_strength_1.wav"))
            .unwrap();
        assert_eq!(p.product_id, 2);
        assert!(p.is_training);
        assert_eq!(p.label, Label::Normal);
        assert!(Layout::Dcase2021
            .parse(Path::new("fan/test/section_02_target_test_anomaly_0001.wav"))
            .unwrap()
            .target_domain);
        assert!(Layout::Dcase2021.parse(Path::new("fan/train/junk.wav")).is_none());
        let q = Layout::Dcase2020
            .parse(Path::new("pump/test/anomaly_id_04_00000012.wav"))
            .unwrap();
        assert_eq!((q.product_id, q.label, q.is_training), (4, Label::Anomaly, false));
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = scan_corpus(dir.path(), Layout::Dcase2021, 0).unwrap_err();
        assert!(err.to_string().contains("no audio files found"), "{err}");
    }

    #[test]
    fn unparseable_name_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("fan/train/whatever.wav");
        wav::write_mono(&bad, &[0.0; 16], 16_000).unwrap();
        let err = scan_corpus(dir.path(), Layout::Dcase2021, 0).unwrap_err();
        assert!(err.to_string().contains("whatever.wav"), "{err}");
    }

    #[test]
    fn unknown_label_rejected_for_eval() {
        let mut r = record("fan", 0, 0, false, Label::Normal);
        r.label = Label::Unknown;
        assert!(Manifest::from_records("/x", vec![r], 0).is_err());
    }

    #[test]
    fn manifest_save_load_rebases_paths() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("corpus");
        let recs = vec![record("fan", 0, 0, true, Label::Normal)];
        let m = Manifest::from_records(&root, recs, 0).unwrap();
        let out = dir.path().join("meta/manifest.json");
        m.save(&out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.contains("../corpus/fan/train"), "{text}");
        let back = Manifest::load(&out).unwrap();
        assert_eq!(back.resolve(&back.records[0]), root.join(&m.records[0].path));
    }
}
