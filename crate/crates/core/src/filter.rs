//! Two-stage curation cascade: a semantic margin gate followed by a
//! structural (person box + keypoint) gate.
//!
//! The semantic score of a sample is the top-k mean of its scaled cosine
//! logits against task-positive prompt embeddings minus the same statistic
//! against task-negative prompts. Only samples clearing the semantic gate are
//! scored structurally. Samples just under the semantic threshold (within
//! `borderline_delta`) are routed to review rather than rejected outright.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, TauSem};
use crate::hash::{hash_json, SampleId};
use crate::io::{read_jsonl, JsonlError};
use crate::manifest::{DatasetManifest, ProvenanceEntry};
use crate::scorer::{DetectionRecord, EmbeddingRecord, PersonDet, NUM_KEYPOINTS};

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("zero-norm embedding for {0}; cosine similarity is undefined")]
    ZeroNorm(String),
    #[error("dimension mismatch: {what} has dim {found}, expected {expected}")]
    DimMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("prompt bank needs at least one positive and one negative template")]
    EmptyBank,
    #[error("k_top must be >= 1")]
    ZeroK,
    #[error("missing embeddings for {} samples, first {}", .0.len(), .0[0])]
    MissingEmbeddings(Vec<SampleId>),
    #[error("missing detection for semantically passing sample {0}")]
    MissingDetection(SampleId),
    #[error("tau_sem is set to \"calibrate\" but no calibrated value was supplied")]
    UncalibratedTau,
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("prompt bank line {line}: {reason}")]
    InvalidBankEntry { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    pub template: String,
    pub vec: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankLine {
    polarity: Polarity,
    template: String,
    vec: Vec<f64>,
}

/// Task-positive and task-negative text templates with their embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBank {
    positives: Vec<PromptEmbedding>,
    negatives: Vec<PromptEmbedding>,
    dim: usize,
}

impl PromptBank {
    pub fn new(
        positives: Vec<PromptEmbedding>,
        negatives: Vec<PromptEmbedding>,
    ) -> Result<Self, FilterError> {
        let dim = positives.first().ok_or(FilterError::EmptyBank)?.vec.len();
        if negatives.is_empty() {
            return Err(FilterError::EmptyBank);
        }
        for p in positives.iter().chain(&negatives) {
            if p.vec.len() != dim {
                return Err(FilterError::DimMismatch {
                    what: format!("prompt {:?}", p.template),
                    expected: dim,
                    found: p.vec.len(),
                });
            }
            if norm(&p.vec) == 0.0 {
                return Err(FilterError::ZeroNorm(format!("prompt {:?}", p.template)));
            }
        }
        Ok(PromptBank {
            positives,
            negatives,
            dim,
        })
    }

    /// Reads `{"polarity":"positive"|"negative","template":…,"vec":[…]}` lines.
    pub fn load(path: &Path) -> Result<Self, FilterError> {
        let lines: Vec<BankLine> = read_jsonl(path)?;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (i, l) in lines.into_iter().enumerate() {
            if l.vec.iter().any(|x| !x.is_finite()) {
                return Err(FilterError::InvalidBankEntry {
                    line: i + 1,
                    reason: "non-finite component".into(),
                });
            }
            let e = PromptEmbedding {
                template: l.template,
                vec: l.vec,
            };
            match l.polarity {
                Polarity::Positive => pos.push(e),
                Polarity::Negative => neg.push(e),
            }
        }
        PromptBank::new(pos, neg)
    }

    pub fn positives(&self) -> &[PromptEmbedding] {
        &self.positives
    }

    pub fn negatives(&self) -> &[PromptEmbedding] {
        &self.negatives
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        let lines: Vec<BankLine> = self
            .positives
            .iter()
            .map(|p| (Polarity::Positive, p))
            .chain(self.negatives.iter().map(|n| (Polarity::Negative, n)))
            .map(|(polarity, p)| BankLine {
                polarity,
                template: p.template.clone(),
                vec: p.vec.clone(),
            })
            .collect();
        hash_json(&lines)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean of the `min(k, len)` largest values; `None` for an empty slice.
pub fn top_k_mean(values: &[f64], k: usize) -> Option<f64> {
    if values.is_empty() || k == 0 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(sorted.len());
    Some(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// `scale * cos(x, t)` for each template.
fn logits(x: &[f64], x_norm: f64, templates: &[PromptEmbedding], scale: f64) -> Vec<f64> {
    templates
        .iter()
        .map(|t| scale * (dot(x, &t.vec) / (x_norm * norm(&t.vec))))
        .collect()
}

/// Semantic margin `score_pos - score_neg` of one sample embedding.
pub fn semantic_margin(
    x: &[f64],
    bank: &PromptBank,
    k_top: usize,
    scale: f64,
) -> Result<f64, FilterError> {
    if k_top == 0 {
        return Err(FilterError::ZeroK);
    }
    if x.len() != bank.dim {
        return Err(FilterError::DimMismatch {
            what: "sample embedding".into(),
            expected: bank.dim,
            found: x.len(),
        });
    }
    let x_norm = norm(x);
    if x_norm == 0.0 {
        return Err(FilterError::ZeroNorm("sample embedding".into()));
    }
    let pos = top_k_mean(&logits(x, x_norm, &bank.positives, scale), k_top).expect("bank non-empty");
    let neg = top_k_mean(&logits(x, x_norm, &bank.negatives, scale), k_top).expect("bank non-empty");
    Ok(pos - neg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemanticOutcome {
    Pass,
    Borderline,
    Reject,
}

/// Inclusive at the threshold; `[tau - delta, tau)` is the borderline band.
pub fn semantic_gate(margin: f64, tau_sem: f64, delta: f64) -> SemanticOutcome {
    if margin >= tau_sem {
        SemanticOutcome::Pass
    } else if delta > 0.0 && margin >= tau_sem - delta {
        SemanticOutcome::Borderline
    } else {
        SemanticOutcome::Reject
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructScore {
    pub area_ratio: f64,
    pub kpt_count: u32,
    pub person_found: bool,
}

impl StructScore {
    pub const NONE: StructScore = StructScore {
        area_ratio: 0.0,
        kpt_count: 0,
        person_found: false,
    };
}

/// Ordering used to pick the gated person: higher score, then larger box,
/// then the lexicographically smallest box.
fn person_rank(a: &PersonDet, b: &PersonDet) -> Ordering {
    a.det_score
        .total_cmp(&b.det_score)
        .then(a.area().total_cmp(&b.area()))
        .then_with(|| {
            // smaller coordinates rank higher
            b.bbox
                .iter()
                .zip(&a.bbox)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

pub fn select_person(det: &DetectionRecord) -> Option<&PersonDet> {
    det.persons.iter().max_by(|a, b| person_rank(a, b))
}

pub fn structural_score(det: &DetectionRecord, kpt_conf_thresh: f64) -> StructScore {
    let Some(person) = select_person(det) else {
        return StructScore::NONE;
    };
    let image_area = det.image_w as f64 * det.image_h as f64;
    let kpt_count = person
        .keypoints
        .iter()
        .take(NUM_KEYPOINTS)
        .filter(|k| k[2] >= kpt_conf_thresh)
        .count() as u32;
    StructScore {
        area_ratio: (person.area() / image_area).clamp(0.0, 1.0),
        kpt_count,
        person_found: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructOutcome {
    Pass,
    Reject,
}

pub fn structural_gate(s: &StructScore, tau_area: f64, tau_kpt_count: u32) -> StructOutcome {
    if s.person_found && s.area_ratio >= tau_area && s.kpt_count >= tau_kpt_count {
        StructOutcome::Pass
    } else {
        StructOutcome::Reject
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Semantic,
    Structural,
    Passed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Routing {
    Accept,
    Reject,
    Borderline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterDecision {
    pub id: SampleId,
    pub s_sem: f64,
    pub s_struct: Option<StructScore>,
    pub stage: Stage,
    pub routing: Routing,
}

pub fn read_decisions(path: &Path) -> Result<Vec<FilterDecision>, JsonlError> {
    read_jsonl(path)
}

/// Resolved numeric parameters of one cascade run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CascadeParams {
    pub k_top: usize,
    pub similarity_scale: f64,
    pub tau_sem: f64,
    pub borderline_delta: f64,
    pub tau_area: f64,
    pub tau_kpt_conf: f64,
    pub tau_kpt_count: u32,
}

impl CascadeParams {
    /// `calibrated` supplies tau_sem when the config asks for calibration.
    pub fn from_config(cfg: &PipelineConfig, calibrated: Option<f64>) -> Result<Self, FilterError> {
        let tau_sem = match cfg.tau_sem {
            TauSem::Value(v) => v,
            TauSem::Calibrate(_) => calibrated.ok_or(FilterError::UncalibratedTau)?,
        };
        Ok(CascadeParams {
            k_top: cfg.k_top,
            similarity_scale: cfg.similarity_scale,
            tau_sem,
            borderline_delta: cfg.borderline_delta,
            tau_area: cfg.tau_area,
            tau_kpt_conf: cfg.tau_kpt_conf,
            tau_kpt_count: cfg.tau_kpt_count,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutput {
    pub clean: DatasetManifest,
    /// One per input sample, in canonical id order.
    pub decisions: Vec<FilterDecision>,
    /// Size of the intermediate pool that cleared the semantic gate.
    pub semantic_passed: usize,
}

/// Runs the semantic gate over the whole manifest, then the structural gate
/// over the survivors.
pub fn run_cascade(
    manifest: &DatasetManifest,
    embeddings: &BTreeMap<SampleId, EmbeddingRecord>,
    detections: &BTreeMap<SampleId, DetectionRecord>,
    bank: &PromptBank,
    params: &CascadeParams,
) -> Result<CascadeOutput, FilterError> {
    let missing: Vec<SampleId> = manifest
        .records()
        .iter()
        .filter(|r| !embeddings.contains_key(&r.id))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(FilterError::MissingEmbeddings(missing));
    }

    let mut decisions: BTreeMap<SampleId, FilterDecision> = BTreeMap::new();
    let mut first_pool: Vec<(&SampleId, f64)> = Vec::new();
    for rec in manifest.records() {
        let emb = &embeddings[&rec.id];
        let margin = semantic_margin(&emb.vec, bank, params.k_top, params.similarity_scale)
            .map_err(|e| match e {
                FilterError::ZeroNorm(_) => FilterError::ZeroNorm(rec.id.to_string()),
                FilterError::DimMismatch { expected, found, .. } => FilterError::DimMismatch {
                    what: format!("embedding of {}", rec.id),
                    expected,
                    found,
                },
                other => other,
            })?;
        let routing = match semantic_gate(margin, params.tau_sem, params.borderline_delta) {
            SemanticOutcome::Pass => {
                first_pool.push((&rec.id, margin));
                continue;
            }
            SemanticOutcome::Borderline => Routing::Borderline,
            SemanticOutcome::Reject => Routing::Reject,
        };
        decisions.insert(
            rec.id.clone(),
            FilterDecision {
                id: rec.id.clone(),
                s_sem: margin,
                s_struct: None,
                stage: Stage::Semantic,
                routing,
            },
        );
    }

    let semantic_passed = first_pool.len();
    for (id, margin) in first_pool {
        let det = detections
            .get(id)
            .ok_or_else(|| FilterError::MissingDetection(id.clone()))?;
        let score = structural_score(det, params.tau_kpt_conf);
        let (stage, routing) = match structural_gate(&score, params.tau_area, params.tau_kpt_count) {
            StructOutcome::Pass => (Stage::Passed, Routing::Accept),
            StructOutcome::Reject => (Stage::Structural, Routing::Reject),
        };
        decisions.insert(
            id.clone(),
            FilterDecision {
                id: id.clone(),
                s_sem: margin,
                s_struct: Some(score),
                stage,
                routing,
            },
        );
    }

    let mut clean = manifest.filtered(|r| {
        decisions
            .get(&r.id)
            .is_some_and(|d| d.routing == Routing::Accept)
    });
    clean.push_provenance(ProvenanceEntry::now(
        "filter",
        hash_json(&(params, bank.fingerprint())),
    ));
    Ok(CascadeOutput {
        clean,
        decisions: decisions.into_values().collect(),
        semantic_passed,
    })
}
