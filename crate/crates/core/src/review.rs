//! Human review queue for borderline and rejected samples.
//!
//! State lives in an append-only JSONL event log: `enqueue` events add
//! pending items, `verdict` events settle them. The in-memory queue is the
//! replay of that log, and every mutation is written and synced to the log
//! before it is applied, so anything acknowledged survives a crash.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::filter::{FilterDecision, Routing, Stage, StructScore};
use crate::hash::SampleId;
use crate::io::{atomic_write, read_jsonl, to_jsonl, JsonlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: SampleId,
    pub image_path: String,
    pub s_sem: f64,
    pub s_struct: Option<StructScore>,
    pub stage: Stage,
    /// Milliseconds since the Unix epoch.
    pub enqueued_at: u64,
    pub status: ReviewStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictDecision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: SampleId,
    pub decision: VerdictDecision,
    pub reviewer: String,
    /// Milliseconds since the Unix epoch, assigned by the queue.
    pub decided_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnqueuePolicy {
    BorderlineOnly,
    BorderlineAndRejected,
}

impl EnqueuePolicy {
    pub fn selects(&self, d: &FilterDecision) -> bool {
        matches!(
            (self, d.routing),
            (_, Routing::Borderline) | (EnqueuePolicy::BorderlineAndRejected, Routing::Reject)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogEvent {
    Enqueue { item: ReviewItem },
    Verdict { verdict: Verdict },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueueStats {
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub total: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("no review item with id {0}")]
    NotFound(SampleId),
    #[error("item {} already has a verdict", .existing.id)]
    Conflict { existing: Verdict },
    #[error("no image found for queued sample {0}")]
    MissingImage(SampleId),
    #[error("review log {path} line {line}: {message}")]
    CorruptLog {
        path: String,
        line: usize,
        message: String,
    },
    #[error("review log: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// Replayed queue contents. Equal logs replay to equal states.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReviewState {
    items: BTreeMap<SampleId, ReviewItem>,
    verdicts: BTreeMap<SampleId, Verdict>,
}

impl ReviewState {
    fn check(&self, event: &LogEvent) -> Result<(), ReviewError> {
        match event {
            LogEvent::Enqueue { .. } => Ok(()),
            LogEvent::Verdict { verdict } => {
                if let Some(existing) = self.verdicts.get(&verdict.id) {
                    return Err(ReviewError::Conflict {
                        existing: existing.clone(),
                    });
                }
                if !self.items.contains_key(&verdict.id) {
                    return Err(ReviewError::NotFound(verdict.id.clone()));
                }
                Ok(())
            }
        }
    }

    /// Applies an event that passed [`ReviewState::check`]. Enqueue of a known id is a no-op.
    fn apply(&mut self, event: LogEvent) {
        match event {
            LogEvent::Enqueue { item } => {
                self.items.entry(item.id.clone()).or_insert(item);
            }
            LogEvent::Verdict { verdict } => {
                if let Some(item) = self.items.get_mut(&verdict.id) {
                    item.status = match verdict.decision {
                        VerdictDecision::Accept => ReviewStatus::Accepted,
                        VerdictDecision::Reject => ReviewStatus::Rejected,
                    };
                }
                self.verdicts.insert(verdict.id.clone(), verdict);
            }
        }
    }

    /// Rebuilds state from a log file. A torn final line (no trailing newline)
    /// is an unacknowledged write and is ignored; `valid_len` reports where the
    /// intact prefix ends.
    fn replay_bytes(path: &Path, bytes: &[u8]) -> Result<(Self, u64), ReviewError> {
        let mut state = ReviewState::default();
        let mut offset = 0usize;
        let mut line_no = 0;
        while offset < bytes.len() {
            line_no += 1;
            let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
                break; // torn tail
            };
            let line = &bytes[offset..offset + nl];
            offset += nl + 1;
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let corrupt = |message: String| ReviewError::CorruptLog {
                path: path.display().to_string(),
                line: line_no,
                message,
            };
            let event: LogEvent = serde_json::from_slice(line).map_err(|e| corrupt(e.to_string()))?;
            state.check(&event).map_err(|e| corrupt(e.to_string()))?;
            state.apply(event);
        }
        Ok((state, offset as u64))
    }

    pub fn replay(path: &Path) -> Result<Self, ReviewError> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self::replay_bytes(path, &bytes)?.0)
    }

    pub fn item(&self, id: &SampleId) -> Option<&ReviewItem> {
        self.items.get(id)
    }

    pub fn items(&self) -> impl Iterator<Item = &ReviewItem> {
        self.items.values()
    }

    /// Oldest pending item; ties on `enqueued_at` go to the smaller id.
    pub fn next_item(&self) -> Option<&ReviewItem> {
        self.items
            .values()
            .filter(|i| i.status == ReviewStatus::Pending)
            .min_by(|a, b| a.enqueued_at.cmp(&b.enqueued_at).then_with(|| a.id.cmp(&b.id)))
    }

    pub fn stats(&self) -> QueueStats {
        let mut s = QueueStats {
            total: self.items.len(),
            ..Default::default()
        };
        for item in self.items.values() {
            match item.status {
                ReviewStatus::Pending => s.pending += 1,
                ReviewStatus::Accepted => s.accepted += 1,
                ReviewStatus::Rejected => s.rejected += 1,
            }
        }
        s
    }

    /// Verdicts in canonical id order.
    pub fn verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.values()
    }

    pub fn verdicts_jsonl(&self) -> Vec<u8> {
        to_jsonl(self.verdicts.values())
    }
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// The queue plus its write-ahead log. All mutations go through `&mut self`,
/// so wrapping it in a mutex gives the single-writer discipline.
#[derive(Debug)]
pub struct ReviewQueue {
    state: ReviewState,
    log: Option<(PathBuf, File)>,
}

impl ReviewQueue {
    /// Queue without persistence.
    pub fn in_memory() -> Self {
        ReviewQueue {
            state: ReviewState::default(),
            log: None,
        }
    }

    /// Opens (or creates) the log at `path` and replays it.
    pub fn open(path: &Path) -> Result<Self, ReviewError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (state, valid_len) = ReviewState::replay_bytes(path, &bytes)?;
        if valid_len < bytes.len() as u64 {
            file.set_len(valid_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(ReviewQueue {
            state,
            log: Some((path.to_path_buf(), file)),
        })
    }

    pub fn state(&self) -> &ReviewState {
        &self.state
    }

    fn commit(&mut self, event: LogEvent) -> Result<(), ReviewError> {
        self.state.check(&event)?;
        if let Some((_, file)) = &mut self.log {
            let mut line = serde_json::to_vec(&event).expect("events serialize");
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        self.state.apply(event);
        Ok(())
    }

    /// Adds selected decisions as pending items. Ids already queued (pending or
    /// adjudicated) are skipped, so repeated enqueues leave the queue unchanged.
    /// Returns how many items were added.
    pub fn enqueue<F>(
        &mut self,
        decisions: &[FilterDecision],
        policy: EnqueuePolicy,
        mut image_path: F,
        now: u64,
    ) -> Result<usize, ReviewError>
    where
        F: FnMut(&SampleId) -> Option<String>,
    {
        let mut fresh: Vec<&FilterDecision> = decisions
            .iter()
            .filter(|d| policy.selects(d) && self.state.item(&d.id).is_none())
            .collect();
        fresh.sort_by(|a, b| a.id.cmp(&b.id));
        fresh.dedup_by(|a, b| a.id == b.id);
        let mut items = Vec::with_capacity(fresh.len());
        for d in fresh {
            let path = image_path(&d.id).ok_or_else(|| ReviewError::MissingImage(d.id.clone()))?;
            items.push(ReviewItem {
                id: d.id.clone(),
                image_path: path,
                s_sem: d.s_sem,
                s_struct: d.s_struct,
                stage: d.stage,
                enqueued_at: now,
                status: ReviewStatus::Pending,
            });
        }
        let added = items.len();
        for item in items {
            self.commit(LogEvent::Enqueue { item })?;
        }
        Ok(added)
    }

    pub fn next_item(&self) -> Option<&ReviewItem> {
        self.state.next_item()
    }

    pub fn stats(&self) -> QueueStats {
        self.state.stats()
    }

    /// Records a verdict for a pending item. The verdict is durable when this returns `Ok`.
    pub fn submit_verdict(
        &mut self,
        id: SampleId,
        decision: VerdictDecision,
        reviewer: impl Into<String>,
        now: u64,
    ) -> Result<Verdict, ReviewError> {
        let verdict = Verdict {
            id,
            decision,
            reviewer: reviewer.into(),
            decided_at: now,
        };
        self.commit(LogEvent::Verdict {
            verdict: verdict.clone(),
        })?;
        Ok(verdict)
    }

    pub fn export_verdicts(&self, path: &Path) -> Result<(), ReviewError> {
        atomic_write(path, &self.state.verdicts_jsonl())?;
        Ok(())
    }
}

pub fn read_verdicts(path: &Path) -> Result<Vec<Verdict>, ReviewError> {
    Ok(read_jsonl(path)?)
}
