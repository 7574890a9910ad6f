//! Generation, scoring, calibration and filtering stages.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use engine_core::calibrate::{
    calibrate_semantic, calibrate_structural, compute_margins, read_labels, read_margins,
    CalibrationReport,
};
use engine_core::config::{PipelineConfig, TauSem};
use engine_core::filter::{run_cascade, structural_score, CascadeParams, PromptBank};
use engine_core::hash::hash_json;
use engine_core::io::{atomic_write, read_jsonl, to_jsonl};
use engine_core::manifest::ProvenanceEntry;
use engine_core::plan::{collect_generated, emit_plan, expand_plan, read_plan, ControlSpace, GeneratedImage};
use engine_core::scorer::{load_detections, load_embeddings, run_sharded, ScoreMode, ScorerJob};
use engine_core::{read_manifest, write_manifest, DatasetManifest, Origin, SampleId, SampleRecord};
use serde::Serialize;

use crate::Mode;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "webp", "bmp", "tif", "tiff"];

fn load_config(path: &Path) -> Result<PipelineConfig> {
    PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn gen_plan(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let section = cfg
        .control
        .as_ref()
        .context("config has no [control] section")?;
    let jobs = expand_plan(&ControlSpace::from_config(section, cfg.seed));
    emit_plan(&jobs, out)?;
    eprintln!("wrote {} jobs to {}", jobs.len(), out.display());
    Ok(())
}

pub fn gen_collect(plan: &Path, outputs: &Path, root: Option<&Path>, config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let jobs = read_plan(plan)?;
    let mut generated: Vec<GeneratedImage> =
        read_jsonl(outputs).with_context(|| format!("reading {}", outputs.display()))?;
    if let Some(root) = root {
        for g in &mut generated {
            g.image_path = path_string(&root.join(&g.image_path));
            g.label_path = g.label_path.as_ref().map(|l| path_string(&root.join(l)));
        }
    }
    let manifest = collect_generated(&cfg.task, &jobs, &generated, Path::new(""))?;
    write_manifest(&manifest, out)?;
    eprintln!("collected {} synthetic samples into {}", manifest.len(), out.display());
    Ok(())
}

pub fn register(images: &Path, labels: Option<&Path>, config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in walkdir::WalkDir::new(images).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", images.display()))?;
        let is_image = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if entry.file_type().is_file() && is_image {
            files.push(entry.into_path());
        }
    }
    let mut seen: BTreeMap<SampleId, PathBuf> = BTreeMap::new();
    let mut records = Vec::with_capacity(files.len());
    for (pos, path) in files.iter().enumerate() {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let id = SampleId::of_bytes(&bytes);
        if let Some(prev) = seen.insert(id.clone(), path.clone()) {
            bail!("{} and {} have identical bytes", prev.display(), path.display());
        }
        let label_path = labels.and_then(|dir| {
            let stem = path.file_stem()?;
            let candidate = dir.join(stem).with_extension("txt");
            candidate.is_file().then(|| path_string(&candidate))
        });
        records.push(SampleRecord {
            id,
            origin: Origin::Real,
            scene_index: pos as u32 + 1,
            variation_index: 1,
            control: None,
            image_path: path_string(path),
            label_path,
        });
    }
    let listing: Vec<(&SampleId, &str)> = records.iter().map(|r| (&r.id, r.image_path.as_str())).collect();
    let prov = ProvenanceEntry::now("register", hash_json(&listing));
    let manifest = DatasetManifest::new(&cfg.task, records, vec![prov])?;
    write_manifest(&manifest, out)?;
    eprintln!("registered {} real samples into {}", manifest.len(), out.display());
    Ok(())
}

pub fn ingest(mode: Mode, manifest: &Path, adapter: &str, out: &Path, shards: usize, image_root: &Path) -> Result<()> {
    let command = shlex::split(adapter).filter(|c| !c.is_empty()).with_context(|| format!("cannot parse adapter command {adapter:?}"))?;
    let mode = match mode {
        Mode::Embed => ScoreMode::Embed,
        Mode::Detect => ScoreMode::Detect,
    };
    let manifest = read_manifest(manifest)?;
    let job = ScorerJob::from_manifest(command, mode, &manifest, image_root);
    let records = run_sharded(&job, shards)?;
    atomic_write(out, &records.to_jsonl()).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {} {} records to {}", records.len(), mode.as_str(), out.display());
    Ok(())
}

pub fn margins(embeddings: &Path, prompt_bank: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let bank = PromptBank::load(prompt_bank)?;
    let embs = load_embeddings(embeddings)?;
    let margins = compute_margins(&embs, &bank, cfg.k_top, cfg.similarity_scale)?;
    atomic_write(out, &to_jsonl(&margins)).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

pub fn calibrate(
    margins: &Path,
    labels: &Path,
    recall: Option<f64>,
    config: Option<&Path>,
    structural: Option<(&Path, f64)>,
    out: &Path,
) -> Result<()> {
    let cfg = config.map(load_config).transpose()?;
    let recall = recall
        .or(cfg.as_ref().map(|c| c.recall_target))
        .unwrap_or(0.95);
    let margins = read_margins(margins)?;
    let labels = read_labels(labels)?;
    let mut report = calibrate_semantic(&margins, &labels, recall)?;
    if let Some((detections, quantile)) = structural {
        let kpt_conf = cfg.as_ref().map_or(0.5, |c| c.tau_kpt_conf);
        let scores = load_detections(detections)?
            .into_iter()
            .map(|(id, d)| (id, structural_score(&d, kpt_conf)))
            .collect();
        report.structural = Some(calibrate_structural(&scores, &labels, quantile)?);
    }
    write_json(out, &report)?;
    eprintln!(
        "tau_sem = {} (recall {:.4} over {} positives, rejection {:.4} over {} negatives)",
        report.tau_sem, report.achieved_recall, report.n_pos, report.achieved_rejection, report.n_neg
    );
    Ok(())
}

pub struct FilterArgs<'a> {
    pub manifest: &'a Path,
    pub embeddings: &'a Path,
    pub detections: &'a Path,
    pub prompt_bank: &'a Path,
    pub config: &'a Path,
    pub calibration: Option<&'a Path>,
    pub calibrated_structural: bool,
    pub out_clean: &'a Path,
    pub out_decisions: &'a Path,
}

pub fn filter(args: FilterArgs<'_>) -> Result<()> {
    let cfg = load_config(args.config)?;
    let report: Option<CalibrationReport> = args
        .calibration
        .map(|p| -> Result<CalibrationReport> {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))
        })
        .transpose()?;
    if let (TauSem::Value(_), Some(_), false) = (cfg.tau_sem, &report, args.calibrated_structural) {
        bail!("config fixes tau_sem; set tau_sem = \"calibrate\" to use --calibration");
    }
    let mut params = CascadeParams::from_config(&cfg, report.as_ref().map(|r| r.tau_sem))?;
    if args.calibrated_structural {
        let s = report
            .as_ref()
            .and_then(|r| r.structural)
            .context("calibration report has no structural thresholds")?;
        params.tau_area = s.tau_area;
        params.tau_kpt_count = s.tau_kpt_count;
    }

    let manifest = read_manifest(args.manifest)?;
    let bank = PromptBank::load(args.prompt_bank)?;
    let embs = load_embeddings(args.embeddings)?;
    let dets = load_detections(args.detections)?;
    let out = run_cascade(&manifest, &embs, &dets, &bank, &params)?;
    write_manifest(&out.clean, args.out_clean)?;
    atomic_write(args.out_decisions, &to_jsonl(&out.decisions))
        .with_context(|| format!("writing {}", args.out_decisions.display()))?;
    eprintln!(
        "{} samples: {} passed semantic, {} clean",
        manifest.len(),
        out.semantic_passed,
        out.clean.len()
    );
    Ok(())
}
