//! Sample-level domain types.

use serde::{Deserialize, Serialize};

use crate::hash::SampleId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

/// Conditioning inputs handed to the external generator for one synthetic sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSignal {
    pub prompt: String,
    pub pose_ref: Option<String>,
    pub edge_ref: Option<String>,
    pub seed: u64,
}

/// One image-level unit flowing through the pipeline.
///
/// Real samples carry no control signal; synthetic samples always do, and their
/// `(scene_index, variation_index)` pair locates them in the generation grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: SampleId,
    pub origin: Origin,
    pub scene_index: u32,
    pub variation_index: u32,
    pub control: Option<ControlSignal>,
    pub image_path: String,
    pub label_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("record {id}: real samples must not carry a control signal")]
    RealWithControl { id: SampleId },
    #[error("record {id}: synthetic samples require a control signal")]
    SyntheticWithoutControl { id: SampleId },
    #[error("record {id}: scene_index and variation_index must be >= 1")]
    ZeroIndex { id: SampleId },
    #[error("record {id}: control prompt is empty")]
    EmptyPrompt { id: SampleId },
    #[error("record {id}: image_path is empty")]
    EmptyImagePath { id: SampleId },
}

impl SampleRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        let id = || self.id.clone();
        match (self.origin, &self.control) {
            (Origin::Real, Some(_)) => return Err(RecordError::RealWithControl { id: id() }),
            (Origin::Synthetic, None) => {
                return Err(RecordError::SyntheticWithoutControl { id: id() })
            }
            (Origin::Synthetic, Some(c)) if c.prompt.is_empty() => {
                return Err(RecordError::EmptyPrompt { id: id() })
            }
            _ => {}
        }
        if self.scene_index == 0 || self.variation_index == 0 {
            return Err(RecordError::ZeroIndex { id: id() });
        }
        if self.image_path.is_empty() {
            return Err(RecordError::EmptyImagePath { id: id() });
        }
        Ok(())
    }
}
