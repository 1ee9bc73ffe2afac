mod common;

use std::path::PathBuf;

use proptest::prelude::*;
use social_sandbox::agent::{ActionKind, Backend};
use social_sandbox::dataprep::{self, Candidate, DpoRecord, PoolSampler, SftRecord};
use social_sandbox::embed::HashEmbedder;

use common::brute_force_negatives;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn tuples() -> Vec<dataprep::Tuple> {
    dataprep::read_tuples(&std::fs::read_to_string(fixtures().join("tuples.jsonl")).unwrap()).unwrap()
}

#[test]
fn ingest_counts_match_the_fixture() {
    let ing = dataprep::ingest(&fixtures().join("metadata"), &Backend::Scripted).unwrap();
    let r = &ing.report;
    assert_eq!(r.files, 5);
    assert_eq!(r.users, 5);
    assert_eq!(r.edges, 7);
    assert_eq!(r.skipped.len(), 1);
    assert!(r.skipped[0].0.ends_with("broken.json"));
    assert_eq!(r.dangling_neighbors, 1);
    assert_eq!(r.truncated_tweets, 1);
    assert_eq!(ing.history.len(), 27);
    let ids: Vec<_> = ing.profiles.iter().map(|p| p.user_id.as_str()).collect();
    assert_eq!(ids, ["101", "102", "103", "104", "105"]);
    assert_eq!(ing.graph.ids(), ids.iter().map(|s| s.to_string()).collect::<Vec<_>>());
}

#[test]
fn sft_export_round_trips() {
    let ing = dataprep::ingest(&fixtures().join("metadata"), &Backend::Scripted).unwrap();
    let export = dataprep::export_sft(&tuples(), &ing.profiles);
    assert_eq!(export.records.len(), 7);
    assert_eq!(export.skipped, 1);
    for r in &export.records {
        dataprep::validate_sft(r).unwrap();
    }
    let mut buf = Vec::new();
    dataprep::write_jsonl(&mut buf, "sft", &export.records).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let back: Vec<SftRecord> = dataprep::read_jsonl(&text, "sft").unwrap();
    assert_eq!(back, export.records);
    assert!(dataprep::read_jsonl::<SftRecord>(&text, "dpo").is_err());
}

#[test]
fn dpo_export_keeps_three_distinct_negatives() {
    let ing = dataprep::ingest(&fixtures().join("metadata"), &Backend::Scripted).unwrap();
    let t = tuples();
    let sampler = PoolSampler::new(&t, 12, 0);
    let emb = HashEmbedder::new(64, 0);
    let export = dataprep::export_dpo(&t, &ing.profiles, &sampler, &emb, 3, 0.8).unwrap();
    assert_eq!(export.records.len(), 7);
    assert_eq!(export.skipped, 1);
    for r in &export.records {
        assert_eq!(r.rejected.len(), 3);
        assert!(!r.rejected.contains(&r.chosen));
    }
    let mut buf = Vec::new();
    dataprep::write_jsonl(&mut buf, "dpo", &export.records).unwrap();
    let back: Vec<DpoRecord> = dataprep::read_jsonl(&String::from_utf8(buf).unwrap(), "dpo").unwrap();
    assert_eq!(back, export.records);
}

const WORDS: [&str; 8] = ["registry", "no", "yes", "data", "overreach", "council", "safety", "rights"];

fn candidate() -> impl Strategy<Value = Candidate> {
    (0usize..4, prop::collection::vec(0usize..WORDS.len(), 0..4)).prop_map(|(k, words)| {
        let kind = [ActionKind::Reply, ActionKind::Like, ActionKind::Tweet, ActionKind::Retweet][k];
        let content = (!words.is_empty() && kind != ActionKind::Like)
            .then(|| words.iter().map(|w| WORDS[*w]).collect::<Vec<_>>().join(" "));
        Candidate { kind, content }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn negative_selection_matches_brute_force(
        pos in candidate(),
        cands in prop::collection::vec(candidate(), 0..10),
        j in 1usize..5,
        threshold in 0.3f64..0.95,
    ) {
        let emb = HashEmbedder::new(32, 7);
        let got = dataprep::select_negatives(&pos, &cands, &emb, j, threshold).unwrap();
        prop_assert_eq!(got, brute_force_negatives(&pos, &cands, &emb, j, threshold));
    }
}
