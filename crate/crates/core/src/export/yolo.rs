//! YOLO-pose layout:
//!
//! ```text
//! out/
//!   images/<id>.<ext>      copied image bytes
//!   labels/<id>.txt        one line per person
//!   manifest.jsonl         the exported manifest
//!   sizes.csv              id,width,height (for denormalization on import)
//!   dataset.yaml           index, written last
//! ```
//!
//! A label line is `0 cx cy w h x1 y1 v1 ... x17 y17 v17` with coordinates
//! normalized by the image size and printed with six decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, is_visibility, lookup, normalized, ExportError, PoseAnnotation, PosePerson};
use crate::hash::SampleId;
use crate::io::atomic_write;
use crate::manifest::{read_manifest, write_manifest, DatasetManifest};
use crate::scorer::NUM_KEYPOINTS;

/// Left/right keypoint swap used for horizontal-flip augmentation.
pub const YOLO_FLIP_IDX: [usize; 17] = [0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15];

const LABEL_TOKENS: usize = 5 + 3 * NUM_KEYPOINTS;

#[derive(Debug, Serialize, Deserialize)]
struct SizeRow {
    id: SampleId,
    width: u32,
    height: u32,
}

/// Formats one person as a label line (no trailing newline).
pub fn label_line(ann: &PoseAnnotation, person: &PosePerson) -> Result<String, ExportError> {
    let (iw, ih) = (ann.image_w as f64, ann.image_h as f64);
    let id = &ann.id;
    let [x, y, w, h] = person.bbox;
    let cx = normalized(id, || "box center x".into(), x + w / 2.0, iw)?;
    let cy = normalized(id, || "box center y".into(), y + h / 2.0, ih)?;
    let nw = normalized(id, || "box width".into(), w, iw)?;
    let nh = normalized(id, || "box height".into(), h, ih)?;
    let mut line = format!("0 {cx:.6} {cy:.6} {nw:.6} {nh:.6}");
    for (k, kp) in person.keypoints.iter().enumerate() {
        let kx = normalized(id, || format!("keypoint {k} x"), kp[0], iw)?;
        let ky = normalized(id, || format!("keypoint {k} y"), kp[1], ih)?;
        write!(line, " {kx:.6} {ky:.6} {}", kp[2] as u8).expect("write to String");
    }
    Ok(line)
}

fn image_name(id: &SampleId, image_path: &str) -> String {
    match Path::new(image_path).extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{id}.{ext}"),
        None => id.to_string(),
    }
}

fn dataset_yaml() -> String {
    let flip: Vec<String> = YOLO_FLIP_IDX.iter().map(|i| i.to_string()).collect();
    format!(
        "path: .\ntrain: images\nkpt_shape: [{NUM_KEYPOINTS}, 3]\nflip_idx: [{}]\nnames:\n  0: person\nmanifest: manifest.jsonl\nsizes: sizes.csv\n",
        flip.join(", ")
    )
}

/// Writes the YOLO-pose tree. Image paths resolve against `image_root`.
pub fn export_yolo_pose(
    manifest: &DatasetManifest,
    annotations: &BTreeMap<SampleId, PoseAnnotation>,
    image_root: &Path,
    out_dir: &Path,
) -> Result<(), ExportError> {
    // Validate and render everything before touching the output directory.
    let mut labels = Vec::with_capacity(manifest.len());
    for rec in manifest.records() {
        let ann = lookup(annotations, &rec.id)?;
        let mut text = String::new();
        for person in &ann.persons {
            text.push_str(&label_line(ann, person)?);
            text.push('\n');
        }
        labels.push((rec, ann, text));
    }

    let images = out_dir.join("images");
    let label_dir = out_dir.join("labels");
    for d in [&images, &label_dir] {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let index = out_dir.join("dataset.yaml");
    if index.exists() {
        std::fs::remove_file(&index).map_err(io_err(&index))?;
    }

    let mut sizes = csv::Writer::from_writer(Vec::new());
    for (rec, ann, text) in &labels {
        let src = image_root.join(&rec.image_path);
        let dst = images.join(image_name(&rec.id, &rec.image_path));
        std::fs::copy(&src, &dst).map_err(io_err(&src))?;
        let label = label_dir.join(format!("{}.txt", rec.id));
        atomic_write(&label, text.as_bytes()).map_err(io_err(&label))?;
        sizes
            .serialize(SizeRow {
                id: rec.id.clone(),
                width: ann.image_w,
                height: ann.image_h,
            })
            .map_err(|e| ExportError::Malformed(e.to_string()))?;
    }
    let sizes_path = out_dir.join("sizes.csv");
    let sizes_bytes = sizes
        .into_inner()
        .map_err(|e| ExportError::Malformed(e.to_string()))?;
    let sizes_bytes = if manifest.is_empty() {
        b"id,width,height\n".to_vec()
    } else {
        sizes_bytes
    };
    atomic_write(&sizes_path, &sizes_bytes).map_err(io_err(&sizes_path))?;
    write_manifest(manifest, &out_dir.join("manifest.jsonl"))?;
    atomic_write(&index, dataset_yaml().as_bytes()).map_err(io_err(&index))?;
    Ok(())
}

fn parse_label_line(file: &Path, line_no: usize, text: &str, width: f64, height: f64) -> Result<PosePerson, ExportError> {
    let err = |message: String| ExportError::Label {
        file: file.display().to_string(),
        line: line_no,
        message,
    };
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != LABEL_TOKENS {
        return Err(err(format!(
            "expected {LABEL_TOKENS} fields, found {}",
            tokens.len()
        )));
    }
    if tokens[0] != "0" {
        return Err(err(format!("unknown class id {:?}", tokens[0])));
    }
    let nums = tokens[1..]
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("not a number: {t:?}")))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    for (i, v) in nums.iter().enumerate() {
        let is_vis = i >= 4 && (i - 4) % 3 == 2;
        if is_vis {
            if !is_visibility(*v) {
                return Err(err(format!("visibility {v} not in {{0, 1, 2}}")));
            }
        } else if !(0.0..=1.0).contains(v) {
            return Err(err(format!("coordinate {v} outside [0, 1]")));
        }
    }
    let (cx, cy, w, h) = (nums[0] * width, nums[1] * height, nums[2] * width, nums[3] * height);
    let keypoints = nums[4..]
        .chunks(3)
        .map(|c| [c[0] * width, c[1] * height, c[2]])
        .collect();
    Ok(PosePerson {
        bbox: [cx - w / 2.0, cy - h / 2.0, w, h],
        keypoints,
    })
}

/// Reads a tree written by [`export_yolo_pose`]. Coordinates come back in
/// pixels, accurate to the six-decimal normalized precision of the labels.
pub fn import_yolo_pose(
    dir: &Path,
) -> Result<(DatasetManifest, BTreeMap<SampleId, PoseAnnotation>), ExportError> {
    let index = dir.join("dataset.yaml");
    if !index.is_file() {
        return Err(ExportError::Malformed(format!(
            "{} missing (incomplete export?)",
            index.display()
        )));
    }
    let manifest = read_manifest(&dir.join("manifest.jsonl"))?;
    let sizes_path = dir.join("sizes.csv");
    let mut reader = csv::Reader::from_path(&sizes_path)
        .map_err(|e| ExportError::Malformed(format!("{}: {e}", sizes_path.display())))?;
    let mut sizes = BTreeMap::new();
    for row in reader.deserialize() {
        let row: SizeRow = row.map_err(|e| ExportError::Malformed(format!("{}: {e}", sizes_path.display())))?;
        sizes.insert(row.id, (row.width, row.height));
    }

    let mut anns = BTreeMap::new();
    for rec in manifest.records() {
        let &(w, h) = sizes
            .get(&rec.id)
            .ok_or_else(|| ExportError::Malformed(format!("no size entry for {}", rec.id)))?;
        let file: PathBuf = dir.join("labels").join(format!("{}.txt", rec.id));
        let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
        let persons = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| parse_label_line(&file, i + 1, l, w as f64, h as f64))
            .collect::<Result<Vec<_>, _>>()?;
        anns.insert(
            rec.id.clone(),
            PoseAnnotation {
                id: rec.id.clone(),
                image_w: w,
                image_h: h,
                persons,
            },
        );
    }
    Ok((manifest, anns))
}
