//! Expansion of a control space into the `N x K` generation grid, and the
//! hand-off files exchanged with the external generator.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ControlSection;
use crate::hash::{hash_json, SampleId};
use crate::io::{atomic_write, read_jsonl, to_jsonl, JsonlError};
use crate::manifest::{DatasetManifest, ManifestError, ProvenanceEntry};
use crate::model::{ControlSignal, Origin, SampleRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlSpace {
    pub prompts: Vec<String>,
    pub pose_refs: Vec<String>,
    pub edge_refs: Vec<String>,
    pub n_scenes: u32,
    pub k_variations: u32,
    pub seed: u64,
}

impl ControlSpace {
    pub fn from_config(section: &ControlSection, seed: u64) -> Self {
        ControlSpace {
            prompts: section.prompts.clone(),
            pose_refs: section.pose_refs.clone(),
            edge_refs: section.edge_refs.clone(),
            n_scenes: section.n_scenes,
            k_variations: section.k_variations,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationJob {
    pub scene_index: u32,
    pub variation_index: u32,
    pub control: ControlSignal,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; a bijection on `u64`.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-job seed. Injective in `(scene, variation)` for a fixed base seed:
/// the packed key, the odd multiply, the offset and `mix` are all bijections.
pub fn job_seed(base: u64, scene: u32, variation: u32) -> u64 {
    let key = ((scene as u64) << 32) | variation as u64;
    mix(base.wrapping_add(key.wrapping_mul(GOLDEN)))
}

/// `draw`-th pseudo-random word of a job's counter stream.
fn draw(job_seed: u64, draw: u64) -> u64 {
    mix(job_seed ^ mix(draw.wrapping_add(1).wrapping_mul(GOLDEN)))
}

fn pick(r: u64, len: usize) -> usize {
    ((r as u128 * len as u128) >> 64) as usize
}

/// All `n_scenes * k_variations` jobs in `(scene, variation)` order.
///
/// Each job's prompt, pose and edge asset are uniform draws from the supplied
/// lists, keyed only by `(space.seed, scene, variation)`.
pub fn expand_plan(space: &ControlSpace) -> Vec<GenerationJob> {
    let mut jobs = Vec::with_capacity(space.n_scenes as usize * space.k_variations as usize);
    for i in 1..=space.n_scenes {
        for v in 1..=space.k_variations {
            let seed = job_seed(space.seed, i, v);
            let prompt = space.prompts[pick(draw(seed, 0), space.prompts.len())].clone();
            let pose_ref = (!space.pose_refs.is_empty())
                .then(|| space.pose_refs[pick(draw(seed, 1), space.pose_refs.len())].clone());
            let edge_ref = (!space.edge_refs.is_empty())
                .then(|| space.edge_refs[pick(draw(seed, 2), space.edge_refs.len())].clone());
            jobs.push(GenerationJob {
                scene_index: i,
                variation_index: v,
                control: ControlSignal {
                    prompt,
                    pose_ref,
                    edge_ref,
                    seed,
                },
            });
        }
    }
    jobs
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("plan has duplicate job ({0}, {1})")]
    DuplicateJob(u32, u32),
    #[error("generator output has no job for ({0}, {1})")]
    UnknownJob(u32, u32),
    #[error("generator output is missing images for jobs {0:?}")]
    MissingOutputs(Vec<(u32, u32)>),
    #[error("generator output lists ({0}, {1}) more than once")]
    DuplicateOutput(u32, u32),
    #[error("generated images for ({0}, {1}) and ({2}, {3}) have identical bytes")]
    IdenticalImages(u32, u32, u32, u32),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// Writes jobs as JSONL in canonical `(scene, variation)` order.
pub fn emit_plan(jobs: &[GenerationJob], path: &Path) -> Result<(), PlanError> {
    let mut sorted: Vec<&GenerationJob> = jobs.iter().collect();
    sorted.sort_by_key(|j| (j.scene_index, j.variation_index));
    atomic_write(path, &to_jsonl(sorted)).map_err(|source| PlanError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_plan(path: &Path) -> Result<Vec<GenerationJob>, PlanError> {
    let mut jobs: Vec<GenerationJob> = read_jsonl(path)?;
    jobs.sort_by_key(|j| (j.scene_index, j.variation_index));
    if let Some(w) = jobs
        .windows(2)
        .find(|w| (w[0].scene_index, w[0].variation_index) == (w[1].scene_index, w[1].variation_index))
    {
        return Err(PlanError::DuplicateJob(w[0].scene_index, w[0].variation_index));
    }
    Ok(jobs)
}

/// One generated image reported back by the generator adapter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedImage {
    pub scene_index: u32,
    pub variation_index: u32,
    pub image_path: String,
    #[serde(default)]
    pub label_path: Option<String>,
}

/// Checks that the generator produced exactly one image per planned job and
/// hashes the images (resolved against `root`) into a synthetic manifest.
pub fn collect_generated(
    task: &str,
    jobs: &[GenerationJob],
    outputs: &[GeneratedImage],
    root: &Path,
) -> Result<DatasetManifest, PlanError> {
    let by_key: BTreeMap<(u32, u32), &GenerationJob> = jobs
        .iter()
        .map(|j| ((j.scene_index, j.variation_index), j))
        .collect();
    let mut seen: BTreeMap<(u32, u32), &GeneratedImage> = BTreeMap::new();
    for out in outputs {
        let key = (out.scene_index, out.variation_index);
        if !by_key.contains_key(&key) {
            return Err(PlanError::UnknownJob(key.0, key.1));
        }
        if seen.insert(key, out).is_some() {
            return Err(PlanError::DuplicateOutput(key.0, key.1));
        }
    }
    let missing: Vec<(u32, u32)> = by_key.keys().filter(|k| !seen.contains_key(k)).copied().collect();
    if !missing.is_empty() {
        return Err(PlanError::MissingOutputs(missing));
    }

    let mut records = Vec::with_capacity(seen.len());
    let mut by_id: BTreeMap<SampleId, (u32, u32)> = BTreeMap::new();
    for (key, out) in &seen {
        let path = root.join(&out.image_path);
        let bytes = std::fs::read(&path).map_err(|source| PlanError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let id = SampleId::of_bytes(&bytes);
        if let Some(prev) = by_id.insert(id.clone(), *key) {
            return Err(PlanError::IdenticalImages(prev.0, prev.1, key.0, key.1));
        }
        records.push(SampleRecord {
            id,
            origin: Origin::Synthetic,
            scene_index: key.0,
            variation_index: key.1,
            control: Some(by_key[key].control.clone()),
            image_path: out.image_path.clone(),
            label_path: out.label_path.clone(),
        });
    }
    let prov = ProvenanceEntry::now("gen-collect", hash_json(&jobs));
    Ok(DatasetManifest::new(task, records, vec![prov])?)
}
