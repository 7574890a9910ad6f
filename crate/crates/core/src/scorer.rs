//! Ingest of external scorer output: embeddings (the encoder side) and
//! person detections (the pose/ROI side).
//!
//! Scorers run out of process. The engine writes one
//! `{"id":…,"image_path":…}` request per line to the adapter's stdin, sets
//! `ENGINE_SCORER_MODE` to `embed` or `detect`, and reads one record per line
//! back from stdout. Output must cover exactly the requested ids.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::hash::SampleId;
use crate::io::numbered_lines;
use crate::manifest::DatasetManifest;

pub const NUM_KEYPOINTS: usize = 17;
pub const MODE_ENV: &str = "ENGINE_SCORER_MODE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: SampleId,
    pub dim: usize,
    pub vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonDet {
    /// `[x, y, w, h]` in pixels, top-left origin.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub det_score: f64,
    /// `[x, y, conf]` per COCO body keypoint.
    pub keypoints: Vec<[f64; 3]>,
}

impl PersonDet {
    pub fn area(&self) -> f64 {
        self.bbox[2] * self.bbox[3]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub id: SampleId,
    pub image_w: u32,
    pub image_h: u32,
    pub persons: Vec<PersonDet>,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record {id}: dim {found} differs from first record's dim {expected}")]
    DimMismatch {
        id: SampleId,
        expected: usize,
        found: usize,
    },
    #[error("record {id}: vec has {len} components but dim is {dim}")]
    LengthMismatch { id: SampleId, dim: usize, len: usize },
    #[error("record {id}: dim must be >= 1")]
    ZeroDim { id: SampleId },
    #[error("record {id}: non-finite value")]
    NonFinite { id: String },
    #[error("duplicate record id {0}")]
    DuplicateId(SampleId),
    #[error("record {id}: person {person} has {found} keypoints, expected {NUM_KEYPOINTS}")]
    KeypointCount {
        id: SampleId,
        person: usize,
        found: usize,
    },
    #[error("record {id}: person {person} has invalid box: {reason}")]
    InvalidBox {
        id: SampleId,
        person: usize,
        reason: String,
    },
    #[error("record {id}: {what} out of [0, 1]")]
    OutOfRange { id: SampleId, what: String },
    #[error("record {id}: image dimensions must be positive")]
    InvalidImageSize { id: SampleId },
    #[error("failed to launch adapter {program:?}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("adapter exited with {status}: {stderr}")]
    AdapterFailed { status: String, stderr: String },
    #[error("adapter command is empty")]
    EmptyCommand,
    #[error("adapter output coverage mismatch: missing {missing:?}, extra {extra:?}")]
    Coverage {
        missing: Vec<String>,
        extra: Vec<String>,
    },
}

/// Finds bare `NaN` / `Infinity` tokens outside JSON strings and swaps them
/// for `null`. Returns `None` when the line has none.
fn neutralize_nonfinite(text: &str) -> Option<String> {
    const TOKENS: [&str; 4] = ["-Infinity", "Infinity", "NaN", "inf"];
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut found = false;
    let mut i = 0;
    'outer: while i < bytes.len() {
        let c = bytes[i];
        if in_string {
            if escaped {
                escaped = false;
            } else if c == b'\\' {
                escaped = true;
            } else if c == b'"' {
                in_string = false;
            }
        } else if c == b'"' {
            in_string = true;
        } else {
            for tok in TOKENS {
                if text[i..].starts_with(tok) {
                    out.push_str("null");
                    i += tok.len();
                    found = true;
                    continue 'outer;
                }
            }
        }
        out.push(c as char);
        i += 1;
    }
    found.then_some(out)
}

fn decode_line<T: DeserializeOwned>(line: usize, text: &str) -> Result<T, IngestError> {
    match serde_json::from_str::<serde_json::Value>(text) {
        Ok(value) => serde_json::from_value(value).map_err(|e| IngestError::Parse {
            line,
            message: e.to_string(),
        }),
        Err(e) => {
            if let Some(cleaned) = neutralize_nonfinite(text) {
                let id = serde_json::from_str::<serde_json::Value>(&cleaned)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|s| s.as_str()).map(str::to_owned))
                    .unwrap_or_else(|| format!("<line {line}>"));
                return Err(IngestError::NonFinite { id });
            }
            Err(IngestError::Parse {
                line,
                message: e.to_string(),
            })
        }
    }
}

fn check_unique<'a>(seen: &mut HashSet<&'a SampleId>, id: &'a SampleId) -> Result<(), IngestError> {
    if !seen.insert(id) {
        return Err(IngestError::DuplicateId(id.clone()));
    }
    Ok(())
}

pub fn validate_embedding(rec: &EmbeddingRecord) -> Result<(), IngestError> {
    if rec.dim == 0 {
        return Err(IngestError::ZeroDim { id: rec.id.clone() });
    }
    if rec.vec.len() != rec.dim {
        return Err(IngestError::LengthMismatch {
            id: rec.id.clone(),
            dim: rec.dim,
            len: rec.vec.len(),
        });
    }
    if rec.vec.iter().any(|x| !x.is_finite()) {
        return Err(IngestError::NonFinite {
            id: rec.id.to_string(),
        });
    }
    Ok(())
}

pub fn validate_detection(rec: &DetectionRecord) -> Result<(), IngestError> {
    let id = || rec.id.clone();
    if rec.image_w == 0 || rec.image_h == 0 {
        return Err(IngestError::InvalidImageSize { id: id() });
    }
    let (iw, ih) = (rec.image_w as f64, rec.image_h as f64);
    for (p, person) in rec.persons.iter().enumerate() {
        let [x, y, w, h] = person.bbox;
        let bad_box = |reason: &str| IngestError::InvalidBox {
            id: id(),
            person: p,
            reason: reason.to_owned(),
        };
        if person.bbox.iter().any(|v| !v.is_finite()) {
            return Err(bad_box("non-finite coordinate"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(bad_box("width and height must be positive"));
        }
        if x < 0.0 || y < 0.0 || x + w > iw || y + h > ih {
            return Err(bad_box("box extends outside the image"));
        }
        if !(0.0..=1.0).contains(&person.det_score) {
            return Err(IngestError::OutOfRange {
                id: id(),
                what: format!("person {p} det_score"),
            });
        }
        if person.keypoints.len() != NUM_KEYPOINTS {
            return Err(IngestError::KeypointCount {
                id: id(),
                person: p,
                found: person.keypoints.len(),
            });
        }
        for (k, kp) in person.keypoints.iter().enumerate() {
            if kp.iter().any(|v| !v.is_finite()) {
                return Err(IngestError::NonFinite { id: rec.id.to_string() });
            }
            if !(0.0..=1.0).contains(&kp[2]) {
                return Err(IngestError::OutOfRange {
                    id: id(),
                    what: format!("person {p} keypoint {k} conf"),
                });
            }
        }
    }
    Ok(())
}

/// Parses a stream of embedding lines. All records must share the first record's dim.
pub fn parse_embeddings<R: BufRead>(reader: R) -> Result<Vec<EmbeddingRecord>, IngestError> {
    let mut out: Vec<EmbeddingRecord> = Vec::new();
    for l in numbered_lines(reader)? {
        let rec: EmbeddingRecord = decode_line(l.line_no, &l.text)?;
        validate_embedding(&rec)?;
        if let Some(first) = out.first() {
            if rec.dim != first.dim {
                return Err(IngestError::DimMismatch {
                    id: rec.id,
                    expected: first.dim,
                    found: rec.dim,
                });
            }
        }
        out.push(rec);
    }
    let mut seen = HashSet::new();
    for r in &out {
        check_unique(&mut seen, &r.id)?;
    }
    Ok(out)
}

pub fn parse_detections<R: BufRead>(reader: R) -> Result<Vec<DetectionRecord>, IngestError> {
    let mut out = Vec::new();
    for l in numbered_lines(reader)? {
        let rec: DetectionRecord = decode_line(l.line_no, &l.text)?;
        validate_detection(&rec)?;
        out.push(rec);
    }
    let mut seen = HashSet::new();
    for r in &out {
        check_unique(&mut seen, &r.id)?;
    }
    Ok(out)
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>, IngestError> {
    Ok(std::io::BufReader::new(std::fs::File::open(path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
    })?))
}

/// Reads an embeddings file into an id-keyed map.
pub fn load_embeddings(path: &Path) -> Result<BTreeMap<SampleId, EmbeddingRecord>, IngestError> {
    Ok(parse_embeddings(open(path)?)?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect())
}

pub fn load_detections(path: &Path) -> Result<BTreeMap<SampleId, DetectionRecord>, IngestError> {
    Ok(parse_detections(open(path)?)?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Embed,
    Detect,
}

impl ScoreMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreMode::Embed => "embed",
            ScoreMode::Detect => "detect",
        }
    }
}

/// A single request line written to the adapter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub id: SampleId,
    pub image_path: String,
}

#[derive(Debug, Clone)]
pub struct ScorerJob {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub mode: ScoreMode,
    pub requests: Vec<AdapterRequest>,
}

impl ScorerJob {
    /// One request per manifest record, with image paths resolved against `image_root`.
    pub fn from_manifest(
        command: Vec<String>,
        mode: ScoreMode,
        manifest: &DatasetManifest,
        image_root: &Path,
    ) -> Self {
        let requests = manifest
            .records()
            .iter()
            .map(|r| AdapterRequest {
                id: r.id.clone(),
                image_path: resolve(image_root, &r.image_path).display().to_string(),
            })
            .collect();
        ScorerJob {
            command,
            mode,
            requests,
        }
    }
}

fn resolve(root: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreRecords {
    Embeddings(Vec<EmbeddingRecord>),
    Detections(Vec<DetectionRecord>),
}

impl ScoreRecords {
    pub fn len(&self) -> usize {
        match self {
            ScoreRecords::Embeddings(v) => v.len(),
            ScoreRecords::Detections(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<&SampleId> {
        match self {
            ScoreRecords::Embeddings(v) => v.iter().map(|r| &r.id).collect(),
            ScoreRecords::Detections(v) => v.iter().map(|r| &r.id).collect(),
        }
    }

    /// Sorts records by id so output files are canonical.
    pub fn sort(&mut self) {
        match self {
            ScoreRecords::Embeddings(v) => v.sort_by(|a, b| a.id.cmp(&b.id)),
            ScoreRecords::Detections(v) => v.sort_by(|a, b| a.id.cmp(&b.id)),
        }
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        match self {
            ScoreRecords::Embeddings(v) => crate::io::to_jsonl(v),
            ScoreRecords::Detections(v) => crate::io::to_jsonl(v),
        }
    }
}

/// Launches the adapter, streams requests to it and validates what comes back.
pub fn run_external_scorer(job: &ScorerJob) -> Result<ScoreRecords, IngestError> {
    let (program, args) = job.command.split_first().ok_or(IngestError::EmptyCommand)?;
    let mut child = Command::new(program)
        .args(args)
        .env(MODE_ENV, job.mode.as_str())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| IngestError::Spawn {
            program: program.clone(),
            source,
        })?;

    let payload = crate::io::to_jsonl(&job.requests);
    let mut stdin = child.stdin.take().expect("stdin piped");
    let mut stderr = child.stderr.take().expect("stderr piped");
    let mut stdout = child.stdout.take().expect("stdout piped");

    let (out_bytes, err_bytes) = std::thread::scope(|s| {
        s.spawn(move || {
            // An adapter that exits early closes the pipe; its exit status is reported instead.
            let _ = stdin.write_all(&payload);
        });
        let err = s.spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });
        let mut out = Vec::new();
        let read = stdout.read_to_end(&mut out);
        (read.map(|_| out), err.join().unwrap_or_default())
    });
    let out_bytes = out_bytes?;
    let status = child.wait()?;
    if !status.success() {
        return Err(IngestError::AdapterFailed {
            status: status.to_string(),
            stderr: String::from_utf8_lossy(&err_bytes).trim().to_owned(),
        });
    }

    let mut records = match job.mode {
        ScoreMode::Embed => ScoreRecords::Embeddings(parse_embeddings(out_bytes.as_slice())?),
        ScoreMode::Detect => ScoreRecords::Detections(parse_detections(out_bytes.as_slice())?),
    };
    check_coverage(&job.requests, &records.ids())?;
    records.sort();
    Ok(records)
}

fn check_coverage(requests: &[AdapterRequest], returned: &[&SampleId]) -> Result<(), IngestError> {
    let wanted: BTreeSet<&SampleId> = requests.iter().map(|r| &r.id).collect();
    let got: BTreeSet<&SampleId> = returned.iter().copied().collect();
    let missing: Vec<String> = wanted.difference(&got).map(|s| s.to_string()).collect();
    let extra: Vec<String> = got.difference(&wanted).map(|s| s.to_string()).collect();
    if missing.is_empty() && extra.is_empty() {
        Ok(())
    } else {
        Err(IngestError::Coverage { missing, extra })
    }
}

/// Runs the job as `shards` concurrent adapter processes over disjoint slices.
/// The merged result is canonical regardless of completion order.
pub fn run_sharded(job: &ScorerJob, shards: usize) -> Result<ScoreRecords, IngestError> {
    let shards = shards.max(1);
    if shards == 1 || job.requests.len() <= 1 {
        return run_external_scorer(job);
    }
    let chunk = job.requests.len().div_ceil(shards);
    let results: Vec<Result<ScoreRecords, IngestError>> = std::thread::scope(|s| {
        let handles: Vec<_> = job
            .requests
            .chunks(chunk)
            .map(|slice| {
                let sub = ScorerJob {
                    command: job.command.clone(),
                    mode: job.mode,
                    requests: slice.to_vec(),
                };
                s.spawn(move || run_external_scorer(&sub))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scorer shard thread panicked"))
            .collect()
    });
    let mut merged = match job.mode {
        ScoreMode::Embed => ScoreRecords::Embeddings(Vec::new()),
        ScoreMode::Detect => ScoreRecords::Detections(Vec::new()),
    };
    for r in results {
        match (&mut merged, r?) {
            (ScoreRecords::Embeddings(acc), ScoreRecords::Embeddings(v)) => acc.extend(v),
            (ScoreRecords::Detections(acc), ScoreRecords::Detections(v)) => acc.extend(v),
            _ => unreachable!("shards share the job's mode"),
        }
    }
    if let ScoreRecords::Embeddings(v) = &merged {
        if let Some(first) = v.first() {
            if let Some(bad) = v.iter().find(|r| r.dim != first.dim) {
                return Err(IngestError::DimMismatch {
                    id: bad.id.clone(),
                    expected: first.dim,
                    found: bad.dim,
                });
            }
        }
    }
    merged.sort();
    Ok(merged)
}
