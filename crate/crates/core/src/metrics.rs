//! AUC, partial AUC and the harmonic-mean roll-ups used for reporting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AsdError, Result};

/// Default false-positive-rate cut for the partial AUC.
pub const DEFAULT_MAX_FPR: f64 = 0.1;

fn check_classes(normal: &[f64], anomaly: &[f64]) -> Result<()> {
    if normal.is_empty() || anomaly.is_empty() {
        return Err(AsdError::InvalidInput(format!(
            "AUC needs both classes (got {} normal, {} anomalous scores)",
            normal.len(),
            anomaly.len()
        )));
    }
    if normal.iter().chain(anomaly).any(|v| v.is_nan()) {
        return Err(AsdError::InvalidInput("NaN anomaly score".into()));
    }
    Ok(())
}

/// Probability that a random anomaly outscores a random normal, ties counting half.
pub fn auc(normal: &[f64], anomaly: &[f64]) -> Result<f64> {
    check_classes(normal, anomaly)?;
    let mut all: Vec<(f64, bool)> = normal.iter().map(|&s| (s, false)).chain(anomaly.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the Mann-Whitney U, kept integral until the final division.
    let mut u2: u128 = 0;
    let mut normals_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut n_grp, mut a_grp) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                a_grp += 1;
            } else {
                n_grp += 1;
            }
            j += 1;
        }
        u2 += a_grp * (2 * normals_below + n_grp);
        normals_below += n_grp;
        i = j;
    }
    Ok(u2 as f64 / (2.0 * normal.len() as f64 * anomaly.len() as f64))
}

/// ROC vertices from a descending sweep with tied scores processed as one group.
fn roc_points(normal: &[f64], anomaly: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, bool)> = normal.iter().map(|&s| (s, false)).chain(anomaly.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (nn, na) = (normal.len() as f64, anomaly.len() as f64);
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut pts = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        pts.push((fp as f64 / nn, tp as f64 / na));
        i = j;
    }
    pts
}

/// Unnormalized ROC area over FPR in [0, max_fpr], interpolating linearly at the cut.
fn partial_area(normal: &[f64], anomaly: &[f64], max_fpr: f64) -> Result<f64> {
    check_classes(normal, anomaly)?;
    if !(max_fpr > 0.0 && max_fpr <= 1.0) {
        return Err(AsdError::InvalidInput(format!("max FPR must lie in (0, 1], got {max_fpr}")));
    }
    let pts = roc_points(normal, anomaly);
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= max_fpr {
            break;
        }
        if x1 <= max_fpr {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_cut = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0);
            area += (max_fpr - x0) * (y0 + y_cut) / 2.0;
        }
    }
    Ok(area)
}

/// Partial AUC over FPR in [0, max_fpr], divided by max_fpr so it lies in [0, 1].
pub fn pauc(normal: &[f64], anomaly: &[f64], max_fpr: f64) -> Result<f64> {
    if max_fpr == 1.0 {
        // The full trapezoidal area equals the tie-corrected Mann-Whitney statistic.
        return auc(normal, anomaly);
    }
    Ok(partial_area(normal, anomaly, max_fpr)? / max_fpr)
}

/// McClish-standardized partial AUC: 0.5 for a chance-level ROC, 1.0 for a perfect one.
pub fn pauc_mcclish(normal: &[f64], anomaly: &[f64], max_fpr: f64) -> Result<f64> {
    let area = partial_area(normal, anomaly, max_fpr)?;
    let (min_area, max_area) = (max_fpr * max_fpr / 2.0, max_fpr);
    Ok(0.5 * (1.0 + (area - min_area) / (max_area - min_area)))
}

/// Harmonic mean; 0 (with a warning) when any value is not positive.
pub fn harmonic_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    if values.iter().any(|&v| !(v > 0.0)) {
        log::warn!("harmonic mean undefined for non-positive values; reporting 0");
        return 0.0;
    }
    values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdMetrics {
    pub machine_type: String,
    pub product_id: usize,
    pub auc: f64,
    pub pauc: f64,
    pub n_normal: usize,
    pub n_anomaly: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSummary {
    pub machine_type: String,
    pub ids: Vec<IdMetrics>,
    /// Harmonic mean over the AUC and pAUC of every ID.
    pub harmonic_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub max_fpr: f64,
    pub machines: Vec<MachineSummary>,
    /// Harmonic mean over the AUC and pAUC of every ID of every machine.
    pub overall_harmonic_mean: f64,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

/// One scored evaluation clip, as needed for metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScore {
    pub machine_type: String,
    pub product_id: usize,
    pub is_anomaly: bool,
    pub score: f64,
}

impl EvalReport {
    /// Computes per-ID metrics and the roll-ups. Machines keep first-seen order.
    pub fn from_scores(scores: &[LabeledScore], max_fpr: f64) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<(String, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for s in scores {
            if !order.contains(&s.machine_type) {
                order.push(s.machine_type.clone());
            }
            let g = groups.entry((s.machine_type.clone(), s.product_id)).or_default();
            if s.is_anomaly {
                g.1.push(s.score);
            } else {
                g.0.push(s.score);
            }
        }
        let mut cells = Vec::new();
        for ((m, id), (normal, anomaly)) in &groups {
            cells.push(IdMetrics {
                machine_type: m.clone(),
                product_id: *id,
                auc: auc(normal, anomaly).map_err(|e| ctx(e, m, *id))?,
                pauc: pauc(normal, anomaly, max_fpr).map_err(|e| ctx(e, m, *id))?,
                n_normal: normal.len(),
                n_anomaly: anomaly.len(),
            });
        }
        Ok(Self::rollup(cells, &order, max_fpr))
    }

    /// Groups per-ID cells by machine and computes the harmonic means.
    pub fn rollup(cells: Vec<IdMetrics>, machine_order: &[String], max_fpr: f64) -> Self {
        let mut machines = Vec::new();
        let mut all = Vec::new();
        for m in machine_order {
            let ids: Vec<IdMetrics> = cells.iter().filter(|c| &c.machine_type == m).cloned().collect();
            if ids.is_empty() {
                continue;
            }
            let vals: Vec<f64> = ids.iter().flat_map(|c| [c.auc, c.pauc]).collect();
            all.extend_from_slice(&vals);
            machines.push(MachineSummary {
                machine_type: m.clone(),
                harmonic_mean: harmonic_mean(&vals),
                ids,
            });
        }
        EvalReport {
            max_fpr,
            machines,
            overall_harmonic_mean: harmonic_mean(&all),
            provenance: serde_json::Value::Null,
        }
    }

    pub fn machine(&self, machine_type: &str) -> Option<&MachineSummary> {
        self.machines.iter().find(|m| m.machine_type == machine_type)
    }

    /// True if any reported number is NaN.
    pub fn has_nan(&self) -> bool {
        self.overall_harmonic_mean.is_nan()
            || self
                .machines
                .iter()
                .any(|m| m.harmonic_mean.is_nan() || m.ids.iter().any(|c| c.auc.is_nan() || c.pauc.is_nan()))
    }

    /// Per-ID detail table in percent.
    pub fn detail_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>4} {:>8} {:>8} {:>8} {:>8}\n",
            "machine",
            "id",
            "AUC",
            format!("pAUC{}", self.max_fpr),
            "normal",
            "anomaly"
        );
        for m in &self.machines {
            for c in &m.ids {
                out.push_str(&format!(
                    "{:<12} {:>4} {:>8.2} {:>8.2} {:>8} {:>8}\n",
                    c.machine_type,
                    c.product_id,
                    100.0 * c.auc,
                    100.0 * c.pauc,
                    c.n_normal,
                    c.n_anomaly
                ));
            }
        }
        out
    }
}

fn ctx(e: AsdError, machine: &str, id: usize) -> AsdError {
    AsdError::InvalidInput(format!("{machine} id {id}: {e}"))
}

/// Method-by-machine table of harmonic means in percent, one row per named report.
pub fn comparison_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut machines: Vec<&str> = Vec::new();
    for (_, r) in rows {
        for m in &r.machines {
            if !machines.contains(&m.machine_type.as_str()) {
                machines.push(&m.machine_type);
            }
        }
    }
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let col_w = machines.iter().map(|m| m.len()).max().unwrap_or(0).max(8);
    let mut out = format!("{:<name_w$}", "method");
    for m in &machines {
        out.push_str(&format!(" {m:>col_w$}"));
    }
    out.push_str(&format!(" {:>14}\n", "All/Har-mean"));
    for (name, r) in rows {
        out.push_str(&format!("{name:<name_w$}"));
        for m in &machines {
            match r.machine(m) {
                Some(s) => out.push_str(&format!(" {:>col_w$.2}", 100.0 * s.harmonic_mean)),
                None => out.push_str(&format!(" {:>col_w$}", "-")),
            }
        }
        out.push_str(&format!(" {:>14.2}\n", 100.0 * r.overall_harmonic_mean));
    }
    out
}
