//! The inter-stage artifact: an ordered, content-addressed list of samples.
//!
//! On disk a manifest is JSON Lines. Line 1 is a header carrying the format
//! version, task name and provenance; each following line is one
//! [`SampleRecord`]. Records are kept sorted ascending by id, so equal
//! manifests serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::hash::SampleId;
use crate::io::atomic_write;
use crate::model::{RecordError, SampleRecord};

pub const MANIFEST_VERSION: u32 = 1;

/// One pipeline stage that touched the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvenanceEntry {
    pub stage: String,
    pub config_hash: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl ProvenanceEntry {
    /// Entry stamped with [`provenance_timestamp`].
    pub fn now(stage: impl Into<String>, config_hash: impl Into<String>) -> Self {
        ProvenanceEntry {
            stage: stage.into(),
            config_hash: config_hash.into(),
            timestamp: provenance_timestamp(),
        }
    }
}

/// `SOURCE_DATE_EPOCH` when set (reproducible runs), wall-clock seconds otherwise.
pub fn provenance_timestamp() -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<u64>().ok())
    {
        return epoch;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    task: String,
    provenance: Vec<ProvenanceEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported manifest version {found} (expected {MANIFEST_VERSION})")]
    Version { found: u32 },
    #[error("manifest is truncated: {0}")]
    Truncated(&'static str),
    #[error("duplicate record id {0}")]
    DuplicateId(SampleId),
    #[error("record {0} appears in both manifests with conflicting fields")]
    ConflictingRecord(SampleId),
    #[error("task mismatch: {left:?} vs {right:?}")]
    TaskMismatch { left: String, right: String },
    #[error("invalid record at line {line}: {source}")]
    InvalidRecord {
        line: usize,
        #[source]
        source: RecordError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    task: String,
    records: Vec<SampleRecord>,
    provenance: Vec<ProvenanceEntry>,
}

impl DatasetManifest {
    pub fn empty(task: impl Into<String>) -> Self {
        DatasetManifest {
            task: task.into(),
            records: Vec::new(),
            provenance: Vec::new(),
        }
    }

    /// Builds a manifest in canonical order. Fails on duplicate ids.
    pub fn new(
        task: impl Into<String>,
        mut records: Vec<SampleRecord>,
        provenance: Vec<ProvenanceEntry>,
    ) -> Result<Self, ManifestError> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(ManifestError::DuplicateId(w[0].id.clone()));
        }
        Ok(DatasetManifest {
            task: task.into(),
            records,
            provenance,
        })
    }

    pub fn version(&self) -> u32 {
        MANIFEST_VERSION
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn provenance(&self) -> &[ProvenanceEntry] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &SampleId) -> Option<&SampleRecord> {
        self.records
            .binary_search_by(|r| r.id.cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn contains(&self, id: &SampleId) -> bool {
        self.get(id).is_some()
    }

    pub fn push_provenance(&mut self, entry: ProvenanceEntry) {
        self.provenance.push(entry);
    }

    /// Keeps only the records for which `keep` returns true. Provenance is preserved.
    pub fn filtered<F: FnMut(&SampleRecord) -> bool>(&self, mut keep: F) -> Self {
        DatasetManifest {
            task: self.task.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: MANIFEST_VERSION,
            task: self.task.clone(),
            provenance: self.provenance.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.extend(crate::io::to_jsonl(&self.records));
        out
    }

    /// Parses manifest bytes. Never returns a partial manifest.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ManifestError> {
        let text = std::str::from_utf8(bytes).map_err(|e| ManifestError::Parse {
            line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
            message: "invalid UTF-8".into(),
        })?;
        if text.is_empty() {
            return Err(ManifestError::Truncated("empty file"));
        }
        if !text.ends_with('\n') {
            return Err(ManifestError::Truncated("missing final newline"));
        }
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or(ManifestError::Truncated("no header"))?;

        // Peek at the version before strict decoding so future formats report a version error.
        let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| ManifestError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
            if v != MANIFEST_VERSION as u64 {
                return Err(ManifestError::Version { found: v as u32 });
            }
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| ManifestError::Parse {
            line: 1,
            message: e.to_string(),
        })?;

        let mut records = Vec::new();
        for (line, text) in lines {
            if text.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(text).map_err(|e| ManifestError::Parse {
                line,
                message: e.to_string(),
            })?;
            rec.validate()
                .map_err(|source| ManifestError::InvalidRecord { line, source })?;
            records.push(rec);
        }
        DatasetManifest::new(header.task, records, header.provenance)
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let bytes = fs::read(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    DatasetManifest::from_bytes(&bytes)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), ManifestError> {
    atomic_write(path, &manifest.to_bytes()).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Union of both record sets keyed by id, in canonical order.
///
/// Identical records are deduplicated; the same id with different fields is an
/// error. Provenance is concatenated, skipping entries already present.
pub fn merge_manifests(
    a: &DatasetManifest,
    b: &DatasetManifest,
) -> Result<DatasetManifest, ManifestError> {
    if a.task != b.task {
        return Err(ManifestError::TaskMismatch {
            left: a.task.clone(),
            right: b.task.clone(),
        });
    }
    let mut by_id: BTreeMap<&SampleId, &SampleRecord> = BTreeMap::new();
    for rec in a.records.iter().chain(&b.records) {
        match by_id.get(&rec.id) {
            Some(existing) if *existing != rec => {
                return Err(ManifestError::ConflictingRecord(rec.id.clone()))
            }
            Some(_) => {}
            None => {
                by_id.insert(&rec.id, rec);
            }
        }
    }
    let mut provenance = a.provenance.clone();
    for p in &b.provenance {
        if !provenance.contains(p) {
            provenance.push(p.clone());
        }
    }
    Ok(DatasetManifest {
        task: a.task.clone(),
        records: by_id.into_values().cloned().collect(),
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlSignal, Origin};

    fn real(n: u32) -> SampleRecord {
        SampleRecord {
            id: SampleId::of_bytes(format!("real-{n}").as_bytes()),
            origin: Origin::Real,
            scene_index: n,
            variation_index: 1,
            control: None,
            image_path: format!("real/{n}.png"),
            label_path: None,
        }
    }

    fn syn(i: u32, v: u32) -> SampleRecord {
        SampleRecord {
            id: SampleId::of_bytes(format!("syn-{i}-{v}").as_bytes()),
            origin: Origin::Synthetic,
            scene_index: i,
            variation_index: v,
            control: Some(ControlSignal {
                prompt: "a person walking".into(),
                pose_ref: Some("pose_03".into()),
                edge_ref: None,
                seed: 42,
            }),
            image_path: format!("syn/{i}_{v}.png"),
            label_path: Some(format!("syn/{i}_{v}.txt")),
        }
    }

    fn manifest(records: Vec<SampleRecord>) -> DatasetManifest {
        DatasetManifest::new("pose", records, vec![]).unwrap()
    }

    #[test]
    fn new_sorts_and_rejects_duplicates() {
        let m = manifest(vec![real(3), real(1), real(2)]);
        assert!(m.records().windows(2).all(|w| w[0].id < w[1].id));
        let err = DatasetManifest::new("pose", vec![real(1), real(1)], vec![]).unwrap_err();
        assert!(matches!(err, ManifestError::DuplicateId(_)));
    }

    #[test]
    fn merge_identity_and_idempotence() {
        let mut m = manifest(vec![real(1), syn(1, 1), syn(1, 2)]);
        m.push_provenance(ProvenanceEntry {
            stage: "register".into(),
            config_hash: "x".into(),
            timestamp: 5,
        });
        let empty = DatasetManifest::empty("pose");
        assert_eq!(merge_manifests(&m, &empty).unwrap(), m);
        assert_eq!(merge_manifests(&m, &m).unwrap(), m);
    }

    #[test]
    fn merge_disjoint_adds_counts() {
        let a = manifest((1..=15).map(real).collect());
        let b = manifest((1..=4).map(|i| syn(i, 1)).collect());
        assert_eq!(merge_manifests(&a, &b).unwrap().len(), 19);
    }

    #[test]
    fn merge_errors() {
        let a = manifest(vec![real(1)]);
        let b = DatasetManifest::new("seg", vec![real(2)], vec![]).unwrap();
        assert!(matches!(
            merge_manifests(&a, &b),
            Err(ManifestError::TaskMismatch { .. })
        ));

        let mut altered = real(1);
        altered.image_path = "elsewhere.png".into();
        let c = manifest(vec![altered]);
        match merge_manifests(&a, &c) {
            Err(ManifestError::ConflictingRecord(id)) => assert_eq!(id, real(1).id),
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn header_layout_is_exact() {
        let m = manifest(vec![real(1)]);
        let bytes = m.to_bytes();
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            r#"{"version":1,"task":"pose","provenance":[]}"#
        );
        let rec = lines.next().unwrap();
        assert!(rec.starts_with(r#"{"id":""#));
        assert!(rec.contains(r#""origin":"real","scene_index":1,"variation_index":1,"control":null,"image_path":"real/1.png","label_path":null}"#));
    }

    #[test]
    fn write_read_round_trip_and_byte_stability() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(vec![syn(2, 1), real(1), syn(1, 3)]);
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        write_manifest(&m, &p1).unwrap();
        let back = read_manifest(&p1).unwrap();
        assert_eq!(back, m);
        write_manifest(&back, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let m = manifest(vec![real(1), real(2), syn(1, 1)]);
        let bytes = m.to_bytes();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(DatasetManifest::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let m = manifest(vec![real(1), real(2)]);
        let mut text = String::from_utf8(m.to_bytes()).unwrap();
        text.push_str("{\"id\": nope}\n");
        match DatasetManifest::from_bytes(text.as_bytes()) {
            Err(ManifestError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = "{\"version\":2,\"task\":\"pose\",\"provenance\":[]}\n";
        assert!(matches!(
            DatasetManifest::from_bytes(text.as_bytes()),
            Err(ManifestError::Version { found: 2 })
        ));
    }

    #[test]
    fn invalid_record_invariants_are_rejected() {
        let mut bad = real(1);
        bad.control = syn(1, 1).control;
        let text = format!(
            "{{\"version\":1,\"task\":\"pose\",\"provenance\":[]}}\n{}\n",
            serde_json::to_string(&bad).unwrap()
        );
        assert!(matches!(
            DatasetManifest::from_bytes(text.as_bytes()),
            Err(ManifestError::InvalidRecord { line: 2, .. })
        ));
    }
}
