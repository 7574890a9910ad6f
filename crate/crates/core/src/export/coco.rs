//! COCO keypoints document export/import.
//!
//! Standard `images` / `annotations` / `categories` arrays, with each image
//! entry also carrying its full manifest record under `engine_sample` so the
//! manifest can be rebuilt on import. Ids are assigned from 1 in canonical
//! manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{io_err, lookup, normalized, ExportError, PoseAnnotation, PosePerson};
use crate::hash::SampleId;
use crate::io::atomic_write;
use crate::manifest::DatasetManifest;
use crate::model::SampleRecord;
use crate::scorer::NUM_KEYPOINTS;

pub const COCO_KEYPOINT_NAMES: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// 1-based limb pairs of the COCO person skeleton.
pub const COCO_SKELETON: [[u8; 2]; 19] = [
    [16, 14],
    [14, 12],
    [17, 15],
    [15, 13],
    [12, 13],
    [6, 12],
    [7, 13],
    [6, 7],
    [6, 8],
    [7, 9],
    [8, 10],
    [9, 11],
    [2, 3],
    [1, 2],
    [1, 3],
    [2, 4],
    [3, 5],
    [4, 6],
    [5, 7],
];

const PERSON_CATEGORY: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Info {
    description: String,
    version: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Image {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
    engine_sample: SampleRecord,
}

#[derive(Debug, Serialize, Deserialize)]
struct Annotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    area: f64,
    iscrowd: u8,
    /// Flat `x, y, v` triples; `v` is written as an integer.
    keypoints: Vec<Value>,
    num_keypoints: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Document {
    info: Info,
    images: Vec<Image>,
    annotations: Vec<Annotation>,
    categories: Vec<Value>,
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

fn check_bounds(ann: &PoseAnnotation, person: &PosePerson) -> Result<(), ExportError> {
    let (iw, ih) = (ann.image_w as f64, ann.image_h as f64);
    let [x, y, w, h] = person.bbox;
    normalized(&ann.id, || "box x".into(), x, iw)?;
    normalized(&ann.id, || "box y".into(), y, ih)?;
    normalized(&ann.id, || "box right edge".into(), x + w, iw)?;
    normalized(&ann.id, || "box bottom edge".into(), y + h, ih)?;
    for (k, kp) in person.keypoints.iter().enumerate() {
        normalized(&ann.id, || format!("keypoint {k} x"), kp[0], iw)?;
        normalized(&ann.id, || format!("keypoint {k} y"), kp[1], ih)?;
    }
    Ok(())
}

fn build(manifest: &DatasetManifest, annotations: &BTreeMap<SampleId, PoseAnnotation>) -> Result<Document, ExportError> {
    let mut images = Vec::with_capacity(manifest.len());
    let mut anns = Vec::new();
    for (idx, rec) in manifest.records().iter().enumerate() {
        let image_id = idx as u64 + 1;
        let ann = lookup(annotations, &rec.id)?;
        images.push(Image {
            id: image_id,
            file_name: rec.image_path.clone(),
            width: ann.image_w,
            height: ann.image_h,
            engine_sample: rec.clone(),
        });
        for person in &ann.persons {
            check_bounds(ann, person)?;
            let keypoints = person
                .keypoints
                .iter()
                .flat_map(|k| [number(k[0]), number(k[1]), Value::from(k[2] as u8)])
                .collect();
            anns.push(Annotation {
                id: anns.len() as u64 + 1,
                image_id,
                category_id: PERSON_CATEGORY,
                bbox: person.bbox,
                area: person.bbox[2] * person.bbox[3],
                iscrowd: 0,
                keypoints,
                num_keypoints: PoseAnnotation::visible_keypoints(person),
            });
        }
    }
    Ok(Document {
        info: Info {
            description: manifest.task().to_owned(),
            version: "1".into(),
        },
        images,
        annotations: anns,
        categories: vec![json!({
            "id": PERSON_CATEGORY,
            "name": "person",
            "supercategory": "person",
            "keypoints": COCO_KEYPOINT_NAMES,
            "skeleton": COCO_SKELETON,
        })],
    })
}

/// Writes a single COCO keypoints JSON document.
pub fn export_coco(
    manifest: &DatasetManifest,
    annotations: &BTreeMap<SampleId, PoseAnnotation>,
    path: &Path,
) -> Result<(), ExportError> {
    let doc = build(manifest, annotations)?;
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("document serializes");
    bytes.push(b'\n');
    atomic_write(path, &bytes).map_err(io_err(path))
}

pub fn import_coco(
    path: &Path,
) -> Result<(DatasetManifest, BTreeMap<SampleId, PoseAnnotation>), ExportError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let doc: Document = serde_json::from_slice(&bytes)
        .map_err(|e| ExportError::Malformed(format!("{}: {e}", path.display())))?;

    let mut by_image: BTreeMap<u64, PoseAnnotation> = BTreeMap::new();
    let mut records = Vec::with_capacity(doc.images.len());
    for img in doc.images {
        img.engine_sample
            .validate()
            .map_err(|e| ExportError::Malformed(e.to_string()))?;
        by_image.insert(
            img.id,
            PoseAnnotation {
                id: img.engine_sample.id.clone(),
                image_w: img.width,
                image_h: img.height,
                persons: Vec::new(),
            },
        );
        records.push(img.engine_sample);
    }
    let mut annotations = doc.annotations;
    annotations.sort_by_key(|a| a.id);
    for a in annotations {
        let target = by_image
            .get_mut(&a.image_id)
            .ok_or_else(|| ExportError::Malformed(format!("annotation {} references unknown image {}", a.id, a.image_id)))?;
        if a.keypoints.len() != 3 * NUM_KEYPOINTS {
            return Err(ExportError::Malformed(format!(
                "annotation {} has {} keypoint values, expected {}",
                a.id,
                a.keypoints.len(),
                3 * NUM_KEYPOINTS
            )));
        }
        let flat = a
            .keypoints
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ExportError::Malformed(format!("annotation {}: non-numeric keypoint", a.id))))
            .collect::<Result<Vec<f64>, _>>()?;
        target.persons.push(PosePerson {
            bbox: a.bbox,
            keypoints: flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        });
    }
    let anns: BTreeMap<SampleId, PoseAnnotation> = by_image
        .into_values()
        .map(|a| (a.id.clone(), a))
        .collect();
    for a in anns.values() {
        a.validate()?;
    }
    let manifest = DatasetManifest::new(doc.info.description, records, vec![])?;
    Ok((manifest, anns))
}
