use engine_core::plan::{emit_plan, expand_plan, job_seed, read_plan, ControlSpace};
use proptest::prelude::*;
use std::collections::BTreeSet;

prop_compose! {
    fn arb_space()(
        prompts in prop::collection::btree_set("[a-z ]{3,12}", 1..5),
        pose_refs in prop::collection::btree_set("poses/[a-z]{2,5}\\.json", 0..4),
        edge_refs in prop::collection::btree_set("edges/[a-z]{2,5}\\.png", 0..3),
        n_scenes in 0u32..12,
        k_variations in 0u32..6,
        seed in any::<u64>(),
    ) -> ControlSpace {
        ControlSpace {
            prompts: prompts.into_iter().collect(),
            pose_refs: pose_refs.into_iter().collect(),
            edge_refs: edge_refs.into_iter().collect(),
            n_scenes,
            k_variations,
            seed,
        }
    }
}

proptest! {
    #[test]
    fn plan_has_n_times_k_jobs_in_order(space in arb_space()) {
        let jobs = expand_plan(&space);
        prop_assert_eq!(jobs.len(), (space.n_scenes * space.k_variations) as usize);
        let keys: Vec<(u32, u32)> = jobs.iter().map(|j| (j.scene_index, j.variation_index)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(keys, sorted);
        for j in &jobs {
            prop_assert!(space.prompts.contains(&j.control.prompt));
            prop_assert_eq!(j.control.pose_ref.is_some(), !space.pose_refs.is_empty());
            prop_assert_eq!(j.control.edge_ref.is_some(), !space.edge_refs.is_empty());
        }
    }

    #[test]
    fn plan_is_pure(space in arb_space()) {
        prop_assert_eq!(expand_plan(&space), expand_plan(&space.clone()));
    }

    #[test]
    fn seeds_are_distinct_within_a_plan(space in arb_space()) {
        let jobs = expand_plan(&space);
        let seeds: BTreeSet<u64> = jobs.iter().map(|j| j.control.seed).collect();
        prop_assert_eq!(seeds.len(), jobs.len());
    }

    #[test]
    fn seed_injective_on_arbitrary_pairs(base in any::<u64>(), a in any::<(u32, u32)>(), b in any::<(u32, u32)>()) {
        prop_assume!(a != b);
        prop_assert_ne!(job_seed(base, a.0, a.1), job_seed(base, b.0, b.1));
    }

    #[test]
    fn emit_read_round_trip(space in arb_space()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.jsonl");
        let jobs = expand_plan(&space);
        emit_plan(&jobs, &p).unwrap();
        let first = std::fs::read(&p).unwrap();
        prop_assert_eq!(read_plan(&p).unwrap(), jobs.clone());
        emit_plan(&jobs, &p).unwrap();
        prop_assert_eq!(std::fs::read(&p).unwrap(), first);
    }
}

#[test]
fn prompts_are_roughly_uniform() {
    let space = ControlSpace {
        prompts: (0..4).map(|i| format!("prompt {i}")).collect(),
        pose_refs: vec![],
        edge_refs: vec![],
        n_scenes: 400,
        k_variations: 10,
        seed: 7,
    };
    let mut counts = [0usize; 4];
    for j in expand_plan(&space) {
        counts[space.prompts.iter().position(|p| *p == j.control.prompt).unwrap()] += 1;
    }
    // 4000 draws, expected 1000 each; 5 sigma is about 137
    assert!(counts.iter().all(|&c| (860..=1140).contains(&c)), "{counts:?}");
}
