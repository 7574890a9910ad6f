//! Threshold calibration on labeled real anchors.
//!
//! `tau_sem` is chosen as the largest observed positive-anchor margin that
//! still lets at least `recall_target` of the positive anchors through the
//! inclusive semantic gate. Negatives only feed the reported rejection rate.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::filter::{semantic_margin, FilterError, PromptBank, StructScore};
use crate::hash::SampleId;
use crate::io::{read_jsonl, JsonlError};
use crate::scorer::EmbeddingRecord;

pub const SEMANTIC_METHOD: &str = "recall-floor over positive-anchor margins (nearest rank)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorLabel {
    pub id: SampleId,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRecord {
    pub id: SampleId,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub tau_sem: f64,
    pub achieved_recall: f64,
    /// Fraction of negative anchors rejected at `tau_sem`; 0 when there are none.
    pub achieved_rejection: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub recall_target: f64,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structural: Option<StructuralThresholds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralThresholds {
    pub tau_area: f64,
    pub tau_kpt_count: u32,
    pub quantile: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("no positive anchors to calibrate on")]
    NoPositives,
    #[error("recall target {0} outside (0, 1]")]
    RecallOutOfRange(f64),
    #[error("quantile {0} outside [0, 1]")]
    QuantileOutOfRange(f64),
    #[error("labeled anchor {0} has no score")]
    MissingScore(SampleId),
    #[error("non-finite margin for {0}")]
    NonFinite(SampleId),
    #[error("labels file: {0}")]
    Labels(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

fn labeled_scores<'a, T>(
    scores: &'a BTreeMap<SampleId, T>,
    labels: &[AnchorLabel],
    which: Label,
) -> Result<Vec<&'a T>, CalibrationError> {
    labels
        .iter()
        .filter(|l| l.label == which)
        .map(|l| scores.get(&l.id).ok_or_else(|| CalibrationError::MissingScore(l.id.clone())))
        .collect()
}

pub fn calibrate_semantic(
    margins: &BTreeMap<SampleId, f64>,
    labels: &[AnchorLabel],
    recall_target: f64,
) -> Result<CalibrationReport, CalibrationError> {
    if !(recall_target > 0.0 && recall_target <= 1.0) {
        return Err(CalibrationError::RecallOutOfRange(recall_target));
    }
    for l in labels {
        match margins.get(&l.id) {
            None => return Err(CalibrationError::MissingScore(l.id.clone())),
            Some(m) if !m.is_finite() => return Err(CalibrationError::NonFinite(l.id.clone())),
            _ => {}
        }
    }
    let mut pos: Vec<f64> = labeled_scores(margins, labels, Label::Positive)?
        .into_iter()
        .copied()
        .collect();
    let neg: Vec<f64> = labeled_scores(margins, labels, Label::Negative)?
        .into_iter()
        .copied()
        .collect();
    if pos.is_empty() {
        return Err(CalibrationError::NoPositives);
    }
    let n_pos = pos.len();
    pos.sort_by(|a, b| b.total_cmp(a));

    // Smallest pass count whose recall meets the target.
    let needed = (1..=n_pos)
        .find(|&c| c as f64 / n_pos as f64 >= recall_target)
        .unwrap_or(n_pos);
    let tau = pos[needed - 1];

    let passing = pos.iter().filter(|&&m| m >= tau).count();
    let rejected = neg.iter().filter(|&&m| m < tau).count();
    Ok(CalibrationReport {
        tau_sem: tau,
        achieved_recall: passing as f64 / n_pos as f64,
        achieved_rejection: if neg.is_empty() {
            0.0
        } else {
            rejected as f64 / neg.len() as f64
        },
        n_pos,
        n_neg: neg.len(),
        recall_target,
        method: SEMANTIC_METHOD.into(),
        structural: None,
    })
}

/// Nearest-rank lower quantile: the `max(1, ceil(q * n))`-th smallest value.
pub fn nearest_rank_quantile(sorted_ascending: &[f64], q: f64) -> f64 {
    let n = sorted_ascending.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted_ascending[rank - 1]
}

pub fn calibrate_structural(
    scores: &BTreeMap<SampleId, StructScore>,
    labels: &[AnchorLabel],
    quantile: f64,
) -> Result<StructuralThresholds, CalibrationError> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(CalibrationError::QuantileOutOfRange(quantile));
    }
    let pos = labeled_scores(scores, labels, Label::Positive)?;
    if pos.is_empty() {
        return Err(CalibrationError::NoPositives);
    }
    let mut areas: Vec<f64> = pos.iter().map(|s| s.area_ratio).collect();
    let mut counts: Vec<f64> = pos.iter().map(|s| s.kpt_count as f64).collect();
    areas.sort_by(f64::total_cmp);
    counts.sort_by(f64::total_cmp);
    Ok(StructuralThresholds {
        tau_area: nearest_rank_quantile(&areas, quantile),
        tau_kpt_count: nearest_rank_quantile(&counts, quantile).floor() as u32,
        quantile,
    })
}

/// Semantic margins for a batch of embeddings, in id order.
pub fn compute_margins(
    embeddings: &BTreeMap<SampleId, EmbeddingRecord>,
    bank: &PromptBank,
    k_top: usize,
    scale: f64,
) -> Result<Vec<MarginRecord>, FilterError> {
    embeddings
        .values()
        .map(|e| {
            semantic_margin(&e.vec, bank, k_top, scale)
                .map(|margin| MarginRecord {
                    id: e.id.clone(),
                    margin,
                })
                .map_err(|err| match err {
                    FilterError::ZeroNorm(_) => FilterError::ZeroNorm(e.id.to_string()),
                    other => other,
                })
        })
        .collect()
}

pub fn read_margins(path: &Path) -> Result<BTreeMap<SampleId, f64>, CalibrationError> {
    let recs: Vec<MarginRecord> = read_jsonl(path)?;
    Ok(recs.into_iter().map(|r| (r.id, r.margin)).collect())
}

/// Reads the `id,label` sidecar CSV (header row required).
pub fn read_labels(path: &Path) -> Result<Vec<AnchorLabel>, CalibrationError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CalibrationError::Labels(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let label: AnchorLabel = row.map_err(|e| CalibrationError::Labels(e.to_string()))?;
        out.push(label);
    }
    Ok(out)
}
