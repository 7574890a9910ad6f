#![allow(dead_code)]

use engine_core::model::{ControlSignal, Origin, SampleRecord};
use engine_core::SampleId;
use proptest::prelude::*;

pub fn sid(tag: &str) -> SampleId {
    SampleId::of_bytes(tag.as_bytes())
}

pub fn real_record(tag: &str, n: u32) -> SampleRecord {
    SampleRecord {
        id: sid(tag),
        origin: Origin::Real,
        scene_index: n.max(1),
        variation_index: 1,
        control: None,
        image_path: format!("real/{tag}.png"),
        label_path: Some(format!("real/{tag}.txt")),
    }
}

pub fn syn_record(tag: &str, scene: u32, variation: u32) -> SampleRecord {
    SampleRecord {
        id: sid(tag),
        origin: Origin::Synthetic,
        scene_index: scene.max(1),
        variation_index: variation.max(1),
        control: Some(ControlSignal {
            prompt: format!("a person, scene {scene}"),
            pose_ref: Some(format!("poses/{scene}.json")),
            edge_ref: None,
            seed: u64::from(scene) << 32 | u64::from(variation),
        }),
        image_path: format!("syn/{tag}.png"),
        label_path: None,
    }
}

prop_compose! {
    pub fn arb_record()(tag in "[a-z]{1,6}", synthetic in any::<bool>(), s in 1u32..50, v in 1u32..5) -> SampleRecord {
        if synthetic { syn_record(&tag, s, v) } else { real_record(&tag, s) }
    }
}

/// Finite value with a bounded magnitude.
pub fn finite() -> impl Strategy<Value = f64> {
    -1.0e3..1.0e3f64
}
