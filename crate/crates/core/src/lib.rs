//! Curation engine for synthetic training data anchored to a small real set.
//!
//! Stages exchange content-addressed [`manifest::DatasetManifest`] files:
//!
//! 1. [`plan`] expands a control space into generation jobs for an external generator.
//! 2. [`scorer`] ingests embeddings and detections from external model adapters.
//! 3. [`calibrate`] derives the semantic threshold from labeled real anchors.
//! 4. [`filter`] runs the semantic then structural cascade.
//! 5. [`review`] queues borderline samples for human verdicts.
//! 6. [`compose`] builds the ablation training pools and [`export`] writes them out.
//! 7. [`diagnostics`] measures the real/synthetic gap in embedding space.

pub mod calibrate;
pub mod compose;
pub mod config;
pub mod diagnostics;
pub mod export;
pub mod filter;
pub mod hash;
pub mod io;
pub mod manifest;
pub mod model;
pub mod plan;
pub mod review;
pub mod scorer;

pub use hash::{hash_content, SampleId};
pub use manifest::{merge_manifests, read_manifest, write_manifest, DatasetManifest, ProvenanceEntry};
pub use model::{ControlSignal, Origin, SampleRecord};
