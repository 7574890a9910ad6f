mod common;

use common::sid;
use engine_core::scorer::{
    parse_detections, parse_embeddings, run_external_scorer, run_sharded, AdapterRequest,
    DetectionRecord, EmbeddingRecord, IngestError, PersonDet, ScoreMode, ScoreRecords, ScorerJob,
};
use proptest::prelude::*;

fn to_lines<T: serde::Serialize>(items: &[T]) -> Vec<u8> {
    engine_core::io::to_jsonl(items)
}

prop_compose! {
    fn arb_embeddings()(dim in 1usize..8, n in 0usize..12)
        (vecs in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, dim), n), dim in Just(dim))
        -> Vec<EmbeddingRecord> {
        vecs.into_iter()
            .enumerate()
            .map(|(i, vec)| EmbeddingRecord { id: sid(&format!("e{i}")), dim, vec })
            .collect()
    }
}

prop_compose! {
    fn arb_person(w: u32, h: u32)(
        fx in 0.0..0.5f64, fy in 0.0..0.5f64, fw in 0.01..0.5f64, fh in 0.01..0.5f64,
        det_score in 0.0..=1.0f64,
        kpts in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..=1.0f64), 17),
    ) -> PersonDet {
        let (w, h) = (w as f64, h as f64);
        PersonDet {
            bbox: [fx * w, fy * h, fw * w, fh * h],
            det_score,
            keypoints: kpts.into_iter().map(|(x, y, c)| [x * w, y * h, c]).collect(),
        }
    }
}

fn arb_detection(i: usize) -> impl Strategy<Value = DetectionRecord> {
    (32u32..2000, 32u32..2000).prop_flat_map(move |(w, h)| {
        prop::collection::vec(arb_person(w, h), 0..3).prop_map(move |persons| DetectionRecord {
            id: sid(&format!("d{i}")),
            image_w: w,
            image_h: h,
            persons,
        })
    })
}

fn arb_detections() -> impl Strategy<Value = Vec<DetectionRecord>> {
    (0usize..8).prop_flat_map(|n| (0..n).map(arb_detection).collect::<Vec<_>>())
}

proptest! {
    #[test]
    fn embeddings_round_trip(recs in arb_embeddings()) {
        prop_assert_eq!(parse_embeddings(to_lines(&recs).as_slice()).unwrap(), recs);
    }

    #[test]
    fn detections_round_trip(recs in arb_detections()) {
        prop_assert_eq!(parse_detections(to_lines(&recs).as_slice()).unwrap(), recs);
    }

    #[test]
    fn parse_is_order_independent(recs in arb_embeddings(), seed in any::<u64>()) {
        let mut shuffled = recs.clone();
        let n = shuffled.len();
        if n > 1 {
            shuffled.rotate_left((seed % n as u64) as usize);
            shuffled.swap(0, n - 1);
        }
        let mut a = ScoreRecords::Embeddings(parse_embeddings(to_lines(&recs).as_slice()).unwrap());
        let mut b = ScoreRecords::Embeddings(parse_embeddings(to_lines(&shuffled).as_slice()).unwrap());
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }
}

const ECHO_ZERO: &str = r#"sed 's/.*"id":"\([0-9a-f]*\)".*/{"id":"\1","dim":3,"vec":[0.0,0.0,0.0]}/'"#;

fn job(script: &str, n: usize) -> ScorerJob {
    ScorerJob {
        command: vec!["sh".into(), "-c".into(), script.into()],
        mode: ScoreMode::Embed,
        requests: (0..n)
            .map(|i| AdapterRequest {
                id: sid(&format!("img{i}")),
                image_path: format!("/data/img{i}.png"),
            })
            .collect(),
    }
}

#[test]
fn adapter_happy_path_returns_one_record_per_id() {
    let out = run_external_scorer(&job(ECHO_ZERO, 3)).unwrap();
    assert_eq!(out.len(), 3);
    let mut want: Vec<_> = (0..3).map(|i| sid(&format!("img{i}"))).collect();
    want.sort();
    assert_eq!(out.ids(), want.iter().collect::<Vec<_>>());
}

#[test]
fn adapter_dropping_an_id_is_a_coverage_error() {
    let j = job(&format!("{ECHO_ZERO} | head -n 2"), 3);
    match run_external_scorer(&j) {
        Err(IngestError::Coverage { missing, extra }) => {
            assert_eq!(missing.len(), 1);
            assert!(extra.is_empty());
            assert!(j.requests.iter().any(|r| r.id.to_string() == missing[0]));
        }
        other => panic!("expected coverage error, got {other:?}"),
    }
}

#[test]
fn adapter_inventing_an_id_is_a_coverage_error() {
    let extra = sid("not-requested");
    let script = format!(r#"{ECHO_ZERO}; echo '{{"id":"{extra}","dim":3,"vec":[1,2,3]}}'"#);
    match run_external_scorer(&job(&script, 2)) {
        Err(IngestError::Coverage { missing, extra: e }) => {
            assert!(missing.is_empty());
            assert_eq!(e, vec![extra.to_string()]);
        }
        other => panic!("expected coverage error, got {other:?}"),
    }
}

#[test]
fn adapter_failure_reports_stderr() {
    match run_external_scorer(&job("echo boom >&2; exit 3", 1)) {
        Err(IngestError::AdapterFailed { stderr, .. }) => assert_eq!(stderr, "boom"),
        other => panic!("expected failure, got {other:?}"),
    }
}

#[test]
fn mode_is_passed_in_environment() {
    let script = r#"test "$ENGINE_SCORER_MODE" = detect || exit 9; sed 's/.*"id":"\([0-9a-f]*\)".*/{"id":"\1","image_w":10,"image_h":10,"persons":[]}/'"#;
    let mut j = job(script, 2);
    j.mode = ScoreMode::Detect;
    assert_eq!(run_external_scorer(&j).unwrap().len(), 2);
}

#[test]
fn sharded_run_matches_single_run() {
    let j = job(ECHO_ZERO, 25);
    let single = run_external_scorer(&j).unwrap();
    for shards in [2, 4, 7, 40] {
        assert_eq!(run_sharded(&j, shards).unwrap(), single);
    }
}
