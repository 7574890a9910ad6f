mod common;

use common::*;
use engine_core::manifest::{merge_manifests, DatasetManifest, ManifestError, ProvenanceEntry};
use engine_core::{hash_content, read_manifest, write_manifest};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn build(records: Vec<engine_core::SampleRecord>) -> DatasetManifest {
    let mut seen = BTreeSet::new();
    let unique = records.into_iter().filter(|r| seen.insert(r.id.clone())).collect();
    DatasetManifest::new(
        "pose",
        unique,
        vec![ProvenanceEntry {
            stage: "register".into(),
            config_hash: hash_content(b"cfg"),
            timestamp: 1_700_000_000,
        }],
    )
    .unwrap()
}

proptest! {
    #[test]
    fn canonical_serialization(records in prop::collection::vec(arb_record(), 0..20)) {
        let m = build(records);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&m, &p).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = read_manifest(&p).unwrap();
        prop_assert_eq!(&back, &m);
        write_manifest(&back, &p).unwrap();
        prop_assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn construction_order_does_not_matter(records in prop::collection::vec(arb_record(), 0..20)) {
        let m = build(records.clone());
        let mut rev = m.records().to_vec();
        rev.reverse();
        let m2 = DatasetManifest::new("pose", rev, m.provenance().to_vec()).unwrap();
        prop_assert_eq!(m.to_bytes(), m2.to_bytes());
    }

    #[test]
    fn merge_never_duplicates_ids(
        a in prop::collection::vec(arb_record(), 0..15),
        b in prop::collection::vec(arb_record(), 0..15),
    ) {
        let ma = build(a);
        let mb = build(b);
        match merge_manifests(&ma, &mb) {
            Ok(m) => {
                let ids: BTreeSet<_> = m.records().iter().map(|r| &r.id).collect();
                prop_assert_eq!(ids.len(), m.len());
                for r in ma.records().iter().chain(mb.records()) {
                    prop_assert!(m.contains(&r.id));
                }
            }
            Err(ManifestError::ConflictingRecord(id)) => {
                prop_assert_ne!(ma.get(&id), mb.get(&id));
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
        prop_assert_eq!(merge_manifests(&ma, &ma).unwrap(), ma);
    }

    #[test]
    fn hash_is_pure(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let h = hash_content(&bytes);
        prop_assert_eq!(&h, &hash_content(&bytes.clone()));
        prop_assert_eq!(h.len(), 64);
    }

    #[test]
    fn truncated_file_is_rejected(records in prop::collection::vec(arb_record(), 1..10), cut in 1usize..200) {
        let bytes = build(records).to_bytes();
        let keep = bytes.len().saturating_sub(cut).max(1);
        let partial = &bytes[..keep];
        if !partial.ends_with(b"\n") {
            prop_assert!(DatasetManifest::from_bytes(partial).is_err());
        }
    }
}

#[test]
fn equal_manifests_write_identical_bytes() {
    let m = build((1..=5).map(|i| real_record(&format!("r{i}"), i)).collect());
    let dir = tempfile::tempdir().unwrap();
    write_manifest(&m, &dir.path().join("a")).unwrap();
    write_manifest(&m.clone(), &dir.path().join("b")).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("a")).unwrap(),
        std::fs::read(dir.path().join("b")).unwrap()
    );
}
