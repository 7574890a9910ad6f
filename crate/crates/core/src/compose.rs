//! Training-pool composition for the five ablation conditions:
//!
//! | condition | pool                      |
//! |-----------|---------------------------|
//! | A         | real                      |
//! | B         | raw synthetic             |
//! | C         | filtered synthetic        |
//! | D         | real + raw synthetic      |
//! | E         | real + filtered synthetic |

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::hash::{hash_json, SampleId};
use crate::manifest::{merge_manifests, DatasetManifest, ManifestError, ProvenanceEntry};
use crate::review::{Verdict, VerdictDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    A,
    B,
    C,
    D,
    E,
}

impl Condition {
    pub const ALL: [Condition; 5] = [Condition::A, Condition::B, Condition::C, Condition::D, Condition::E];

    pub fn needs_real(self) -> bool {
        matches!(self, Condition::A | Condition::D | Condition::E)
    }

    pub fn needs_raw(self) -> bool {
        matches!(self, Condition::B | Condition::D)
    }

    pub fn needs_filtered(self) -> bool {
        matches!(self, Condition::C | Condition::E)
    }

    pub fn requirement(self) -> &'static str {
        match self {
            Condition::A => "real",
            Condition::B => "raw synthetic",
            Condition::C => "filtered synthetic",
            Condition::D => "real + raw synthetic",
            Condition::E => "real + filtered synthetic",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Condition {
    type Err = ComposeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Condition::A),
            "B" => Ok(Condition::B),
            "C" => Ok(Condition::C),
            "D" => Ok(Condition::D),
            "E" => Ok(Condition::E),
            _ => Err(ComposeError::UnknownCondition(s.to_owned())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error("unknown condition {0:?} (expected A-E)")]
    UnknownCondition(String),
    #[error("condition {condition} requires the {input} manifest ({requirement})")]
    MissingInput {
        condition: Condition,
        input: &'static str,
        requirement: &'static str,
    },
    #[error("review verdicts only apply to the filtered pool (conditions C and E), not {0}")]
    VerdictsNotApplicable(Condition),
    #[error("accepted sample {0} is not in the raw synthetic manifest")]
    AcceptedNotInRaw(SampleId),
    #[error("applying accepted verdicts requires the raw synthetic manifest")]
    RawNeededForVerdicts,
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Debug, Clone, Default)]
pub struct ConditionInputs {
    pub real: Option<DatasetManifest>,
    pub raw_syn: Option<DatasetManifest>,
    pub filtered_syn: Option<DatasetManifest>,
}

fn require<'a>(
    condition: Condition,
    input: &'static str,
    m: &'a Option<DatasetManifest>,
) -> Result<&'a DatasetManifest, ComposeError> {
    m.as_ref().ok_or(ComposeError::MissingInput {
        condition,
        input,
        requirement: condition.requirement(),
    })
}

/// Filtered pool with human verdicts applied: accepted ids are pulled in from
/// the raw pool, rejected ids are dropped.
pub fn apply_verdicts(
    filtered: &DatasetManifest,
    raw: Option<&DatasetManifest>,
    verdicts: &[Verdict],
) -> Result<DatasetManifest, ComposeError> {
    let rejected: BTreeSet<&SampleId> = verdicts
        .iter()
        .filter(|v| v.decision == VerdictDecision::Reject)
        .map(|v| &v.id)
        .collect();
    let accepted: Vec<&SampleId> = verdicts
        .iter()
        .filter(|v| v.decision == VerdictDecision::Accept)
        .map(|v| &v.id)
        .collect();

    let mut records: Vec<_> = filtered
        .records()
        .iter()
        .filter(|r| !rejected.contains(&r.id))
        .cloned()
        .collect();
    for id in &accepted {
        if filtered.contains(id) {
            continue;
        }
        let raw = raw.ok_or(ComposeError::RawNeededForVerdicts)?;
        let rec = raw
            .get(id)
            .ok_or_else(|| ComposeError::AcceptedNotInRaw((*id).clone()))?;
        records.push(rec.clone());
    }

    let mut applied: Vec<(&SampleId, VerdictDecision)> = verdicts.iter().map(|v| (&v.id, v.decision)).collect();
    applied.sort();
    let mut provenance = filtered.provenance().to_vec();
    provenance.push(ProvenanceEntry::now(
        format!("apply-verdicts:accepted={},rejected={}", accepted.len(), rejected.len()),
        hash_json(&applied),
    ));
    Ok(DatasetManifest::new(filtered.task(), records, provenance)?)
}

/// Builds the training manifest for one condition.
pub fn compose_condition(
    condition: Condition,
    inputs: &ConditionInputs,
    verdicts: Option<&[Verdict]>,
) -> Result<DatasetManifest, ComposeError> {
    if verdicts.is_some() && !condition.needs_filtered() {
        return Err(ComposeError::VerdictsNotApplicable(condition));
    }
    let real = || require(condition, "real", &inputs.real);
    let raw = || require(condition, "raw synthetic", &inputs.raw_syn);
    let filtered = || -> Result<DatasetManifest, ComposeError> {
        let f = require(condition, "filtered synthetic", &inputs.filtered_syn)?;
        match verdicts {
            Some(v) => apply_verdicts(f, inputs.raw_syn.as_ref(), v),
            None => Ok(f.clone()),
        }
    };

    let mut out = match condition {
        Condition::A => real()?.clone(),
        Condition::B => raw()?.clone(),
        Condition::C => filtered()?,
        Condition::D => merge_manifests(real()?, raw()?)?,
        Condition::E => merge_manifests(real()?, &filtered()?)?,
    };
    out.push_provenance(ProvenanceEntry::now(
        format!("compose:{condition}"),
        hash_json(&(condition, out.len())),
    ));
    Ok(out)
}
