//! Per-segment embedding export for external visualization and debugging.

use std::path::Path;

use crate::error::{AsdError, Result};
use crate::scoring::ClipEmbeddings;
use crate::util;

/// Writes one row per (clip, segment): `clip_id,segment,machine_type,product_id,label,e_0..`.
/// Rows are ordered by clip id, then segment. Returns the row count.
pub fn write_embeddings_csv(path: &Path, clips: &[ClipEmbeddings]) -> Result<usize> {
    let dim = clips
        .iter()
        .flat_map(|c| c.outputs.embeddings.first())
        .map(Vec::len)
        .next()
        .unwrap_or(crate::nnet::EMBEDDING_DIM);
    let mut sorted: Vec<&ClipEmbeddings> = clips.iter().collect();
    sorted.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    util::ensure_parent(path)?;
    let err = |e: csv::Error| AsdError::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header: Vec<String> = ["clip_id", "segment", "machine_type", "product_id", "label"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim).map(|i| format!("e_{i}")));
    w.write_record(&header).map_err(err)?;
    let mut rows = 0;
    for c in sorted {
        for (s, e) in c.outputs.embeddings.iter().enumerate() {
            if e.len() != dim {
                return Err(AsdError::Shape(format!("{} segment {s} has {} values, expected {dim}", c.clip_id, e.len())));
            }
            let mut row = vec![
                c.clip_id.clone(),
                s.to_string(),
                c.machine_type.clone(),
                c.product_id.to_string(),
                c.label.as_str().to_string(),
            ];
            row.extend(e.iter().map(f64::to_string));
            w.write_record(&row).map_err(err)?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| AsdError::io(path, e))?;
    Ok(rows)
}
