//! Pose-annotation datasets: the annotation type plus YOLO-pose and COCO
//! keypoint export/import.

mod coco;
mod yolo;

pub use coco::{export_coco, import_coco, COCO_KEYPOINT_NAMES, COCO_SKELETON};
pub use yolo::{export_yolo_pose, import_yolo_pose, label_line, YOLO_FLIP_IDX};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::hash::SampleId;
use crate::io::{read_jsonl, JsonlError};
use crate::manifest::ManifestError;
use crate::scorer::NUM_KEYPOINTS;

/// One ground-truth (or pseudo-label) person. Keypoint triples are
/// `[x, y, visibility]` with visibility in {0, 1, 2}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosePerson {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub keypoints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseAnnotation {
    pub id: SampleId,
    pub image_w: u32,
    pub image_h: u32,
    pub persons: Vec<PosePerson>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no annotation for record {0}")]
    MissingAnnotation(SampleId),
    #[error("annotation {id}: {what} = {value} lies outside [0, 1] after normalization")]
    OutOfBounds {
        id: SampleId,
        what: String,
        value: f64,
    },
    #[error("annotation {id}: {reason}")]
    InvalidAnnotation { id: SampleId, reason: String },
    #[error("{file}:{line}: {message}")]
    Label {
        file: String,
        line: usize,
        message: String,
    },
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn is_visibility(v: f64) -> bool {
    v == 0.0 || v == 1.0 || v == 2.0
}

impl PoseAnnotation {
    pub fn validate(&self) -> Result<(), ExportError> {
        let bad = |reason: String| ExportError::InvalidAnnotation {
            id: self.id.clone(),
            reason,
        };
        if self.image_w == 0 || self.image_h == 0 {
            return Err(bad("image dimensions must be positive".into()));
        }
        for (p, person) in self.persons.iter().enumerate() {
            if person.keypoints.len() != NUM_KEYPOINTS {
                return Err(bad(format!(
                    "person {p} has {} keypoints, expected {NUM_KEYPOINTS}",
                    person.keypoints.len()
                )));
            }
            if !(person.bbox[2] > 0.0 && person.bbox[3] > 0.0) {
                return Err(bad(format!("person {p} box has non-positive size")));
            }
            if let Some(k) = person.keypoints.iter().position(|kp| !is_visibility(kp[2])) {
                return Err(bad(format!(
                    "person {p} keypoint {k} visibility {} not in {{0, 1, 2}}",
                    person.keypoints[k][2]
                )));
            }
        }
        Ok(())
    }

    /// Count of keypoints with visibility > 0 for one person.
    pub fn visible_keypoints(person: &PosePerson) -> usize {
        person.keypoints.iter().filter(|k| k[2] > 0.0).count()
    }
}

pub fn read_annotations(path: &Path) -> Result<BTreeMap<SampleId, PoseAnnotation>, ExportError> {
    let anns: Vec<PoseAnnotation> = read_jsonl(path)?;
    let mut out = BTreeMap::new();
    for a in anns {
        a.validate()?;
        let id = a.id.clone();
        if out.insert(id.clone(), a).is_some() {
            return Err(ExportError::InvalidAnnotation {
                id,
                reason: "duplicate annotation".into(),
            });
        }
    }
    Ok(out)
}

pub fn annotations_jsonl(anns: &BTreeMap<SampleId, PoseAnnotation>) -> Vec<u8> {
    crate::io::to_jsonl(anns.values())
}

/// Largest absolute coordinate difference between two annotation sets, or
/// `None` when they differ structurally (ids, image sizes, person or
/// keypoint counts, visibility flags).
pub fn annotation_deviation(
    a: &BTreeMap<SampleId, PoseAnnotation>,
    b: &BTreeMap<SampleId, PoseAnnotation>,
) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut worst = 0.0_f64;
    for ((ia, x), (ib, y)) in a.iter().zip(b) {
        if ia != ib || x.image_w != y.image_w || x.image_h != y.image_h || x.persons.len() != y.persons.len() {
            return None;
        }
        for (p, q) in x.persons.iter().zip(&y.persons) {
            if p.keypoints.len() != q.keypoints.len() {
                return None;
            }
            for (u, v) in p.bbox.iter().zip(&q.bbox) {
                worst = worst.max((u - v).abs());
            }
            for (k, l) in p.keypoints.iter().zip(&q.keypoints) {
                if k[2] != l[2] {
                    return None;
                }
                worst = worst.max((k[0] - l[0]).abs()).max((k[1] - l[1]).abs());
            }
        }
    }
    Some(worst)
}

fn lookup<'a>(
    anns: &'a BTreeMap<SampleId, PoseAnnotation>,
    id: &SampleId,
) -> Result<&'a PoseAnnotation, ExportError> {
    let a = anns
        .get(id)
        .ok_or_else(|| ExportError::MissingAnnotation(id.clone()))?;
    a.validate()?;
    Ok(a)
}

/// `value / extent` checked to lie in `[0, 1]`; `-0.0` is folded to `0.0`.
fn normalized(id: &SampleId, what: impl FnOnce() -> String, value: f64, extent: f64) -> Result<f64, ExportError> {
    let n = value / extent + 0.0;
    if (0.0..=1.0).contains(&n) {
        Ok(n)
    } else {
        Err(ExportError::OutOfBounds {
            id: id.clone(),
            what: what(),
            value: n,
        })
    }
}
