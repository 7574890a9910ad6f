//! Composition, export/import and diagnostics.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use engine_core::compose::{compose_condition, Condition, ConditionInputs};
use engine_core::diagnostics::{gap_summary, project_2d, projection_csv, EmbeddedPoint};
use engine_core::export::{
    annotations_jsonl, export_coco, export_yolo_pose, import_coco, import_yolo_pose, read_annotations,
};
use engine_core::io::atomic_write;
use engine_core::review::read_verdicts;
use engine_core::scorer::load_embeddings;
use engine_core::{read_manifest, write_manifest, Origin};

use crate::stages::write_json;
use crate::Format;

pub fn compose(
    condition: &str,
    real: Option<&Path>,
    raw_syn: Option<&Path>,
    filtered_syn: Option<&Path>,
    verdicts: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let condition: Condition = condition.parse()?;
    let load = |p: Option<&Path>| p.map(read_manifest).transpose();
    let inputs = ConditionInputs {
        real: load(real)?,
        raw_syn: load(raw_syn)?,
        filtered_syn: load(filtered_syn)?,
    };
    let verdicts = verdicts.map(read_verdicts).transpose()?;
    let manifest = compose_condition(condition, &inputs, verdicts.as_deref())?;
    write_manifest(&manifest, out)?;
    eprintln!("condition {condition}: {} records", manifest.len());
    Ok(())
}

const COCO_FILE: &str = "annotations.json";

pub fn export(format: Format, manifest: &Path, annotations: &Path, out: &Path, image_root: &Path) -> Result<()> {
    let manifest = read_manifest(manifest)?;
    let anns = read_annotations(annotations)?;
    match format {
        Format::Yolo => export_yolo_pose(&manifest, &anns, image_root, out)?,
        Format::Coco => {
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            export_coco(&manifest, &anns, &out.join(COCO_FILE))?;
        }
    }
    eprintln!("exported {} images to {}", manifest.len(), out.display());
    Ok(())
}

pub fn import(format: Format, from: &Path, out_manifest: &Path, out_annotations: &Path) -> Result<()> {
    let (manifest, anns) = match format {
        Format::Yolo => import_yolo_pose(from)?,
        Format::Coco => {
            let doc: PathBuf = if from.is_dir() { from.join(COCO_FILE) } else { from.to_path_buf() };
            import_coco(&doc)?
        }
    };
    write_manifest(&manifest, out_manifest)?;
    atomic_write(out_annotations, &annotations_jsonl(&anns))
        .with_context(|| format!("writing {}", out_annotations.display()))?;
    Ok(())
}

fn points(path: &Path, origin: Origin) -> Result<Vec<EmbeddedPoint>> {
    Ok(load_embeddings(path)?
        .into_values()
        .map(|e| EmbeddedPoint { id: e.id, origin, vec: e.vec })
        .collect())
}

pub fn diag(real_embs: &Path, syn_embs: &Path, out_summary: &Path, out_proj: &Path) -> Result<()> {
    let real = points(real_embs, Origin::Real)?;
    let syn = points(syn_embs, Origin::Synthetic)?;
    if let Some(shared) = real.iter().find(|r| syn.iter().any(|s| s.id == r.id)) {
        bail!("id {} appears in both the real and the synthetic embeddings", shared.id);
    }
    let summary = gap_summary(&real, &syn)?;
    let all: Vec<EmbeddedPoint> = real.into_iter().chain(syn).collect();
    let proj = project_2d(&all)?;
    write_json(out_summary, &summary)?;
    atomic_write(out_proj, projection_csv(&proj).as_bytes())
        .with_context(|| format!("writing {}", out_proj.display()))?;
    eprintln!(
        "frechet_gap {:.6}, nn_coverage {:.4}",
        summary.frechet_gap, summary.nn_coverage
    );
    Ok(())
}
