use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use social_sandbox::sim::checkpoint::{checkpoint_path, EVENTS_FILE};
use social_sandbox::sim::config::PopulationSource;
use social_sandbox::sim::events::{Channel, PostSource};
use social_sandbox::sim::{
    replay_file, replay_records, run, run_in_dir, Event, EventRecord, Objective, ReplayOptions, RunConfig, Services, SimState, Simulation,
};

fn cfg(seed: u64, rounds: u32, agents: usize) -> RunConfig {
    RunConfig {
        seed,
        rounds,
        agents,
        ..RunConfig::default()
    }
}

fn lines(events: &[EventRecord]) -> Vec<String> {
    events.iter().map(EventRecord::to_line).collect()
}

#[test]
fn same_seed_same_log() {
    let a = run(cfg(11, 6, 30)).unwrap();
    let b = run(cfg(11, 6, 30)).unwrap();
    assert_eq!(lines(&a.events), lines(&b.events));
    let c = run(cfg(12, 6, 30)).unwrap();
    assert_ne!(lines(&a.events), lines(&c.events));
}

#[test]
fn thread_count_does_not_change_the_log() {
    let mut one = cfg(5, 4, 25);
    one.max_concurrency = 1;
    let mut many = one.clone();
    many.max_concurrency = 8;
    assert_eq!(lines(&run(one).unwrap().events), lines(&run(many).unwrap().events));
}

#[test]
fn replay_rebuilds_state_and_metrics() {
    let mut c = cfg(3, 8, 40);
    c.objective = Objective::CrossView;
    let out = run(c).unwrap();
    let r = replay_records(&out.events, ReplayOptions::default()).unwrap();
    assert_eq!(r.round, 8);
    assert!(r.mismatched.is_empty());
    assert_eq!(r.metrics, out.metrics);
    assert_eq!(r.graph.edge_set(), out.state.graph.edge_set());
    let smoothed: Vec<f64> = out.state.agents.iter().map(|a| a.trace.smoothed()).collect();
    assert_eq!(r.smoothed, smoothed);
}

#[test]
fn tampered_stance_is_reported() {
    let out = run(cfg(3, 2, 10)).unwrap();
    let mut events = out.events.clone();
    let k = events
        .iter()
        .rposition(|e| matches!(e.event, Event::StanceUpdate { .. }))
        .unwrap();
    if let Event::StanceUpdate { smoothed, .. } = &mut events[k].event {
        *smoothed += 0.5;
    }
    let err = replay_records(&events, ReplayOptions::default()).unwrap_err();
    assert!(err.to_string().contains("disagrees"), "{err}");
}

#[test]
fn resume_from_serialized_state_continues_identically() {
    let c = cfg(9, 7, 30);
    let straight = run(c.clone()).unwrap();

    let mut sim = Simulation::new(c.clone(), Services::offline(&c)).unwrap();
    let mut events = sim.drain_events();
    for _ in 0..3 {
        sim.step().unwrap();
        events.extend(sim.drain_events());
    }
    let json = serde_json::to_string(sim.state()).unwrap();
    drop(sim);
    let state: SimState = serde_json::from_str(&json).unwrap();
    let mut sim = Simulation::resume(c.clone(), Services::offline(&c), state).unwrap();
    while !sim.finished() {
        sim.step().unwrap();
        events.extend(sim.drain_events());
    }
    assert_eq!(lines(&events), lines(&straight.events));
}

#[test]
fn run_in_dir_resumes_after_a_crash() {
    let mut c = cfg(21, 6, 20);
    c.checkpoint_every = 3;
    let clean = tempfile::tempdir().unwrap();
    run_in_dir(c.clone(), Services::offline(&c), clean.path(), false).unwrap();
    let full = fs::read_to_string(clean.path().join(EVENTS_FILE)).unwrap();

    // Simulate a crash during round 5: the round-6 checkpoint never landed
    // and the log holds part of round 4 onward plus a torn line.
    let crashed = tempfile::tempdir().unwrap();
    copy_dir(clean.path(), crashed.path());
    fs::remove_file(checkpoint_path(crashed.path(), 6)).unwrap();
    let mut kept: Vec<&str> = full
        .lines()
        .filter(|l| serde_json::from_str::<EventRecord>(l).unwrap().round <= 4)
        .collect();
    kept.push("{\"v\":1,\"seq\":");
    fs::write(crashed.path().join(EVENTS_FILE), kept.join("\n")).unwrap();

    let resumed = run_in_dir(c.clone(), Services::offline(&c), crashed.path(), true).unwrap();
    assert_eq!(resumed.resumed_from, Some(3));
    assert_eq!(resumed.round, 6);
    assert_eq!(fs::read_to_string(crashed.path().join(EVENTS_FILE)).unwrap(), full);

    let mut other = c.clone();
    other.seed = 22;
    assert!(run_in_dir(other.clone(), Services::offline(&other), crashed.path(), true).is_err());
    let r = replay_file(&crashed.path().join(EVENTS_FILE), ReplayOptions::default()).unwrap();
    assert_eq!(r.round, 6);
}

fn copy_dir(from: &Path, to: &Path) {
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dest = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            fs::create_dir_all(&dest).unwrap();
            copy_dir(&e.path(), &dest);
        } else {
            fs::copy(e.path(), dest).unwrap();
        }
    }
}

/// Post id -> round created.
fn post_rounds(events: &[EventRecord]) -> BTreeMap<u64, u32> {
    events
        .iter()
        .filter_map(|e| match &e.event {
            Event::Post { post_id, .. } => Some((*post_id, e.round)),
            _ => None,
        })
        .collect()
}

fn same_round_reactions(events: &[EventRecord]) -> usize {
    let rounds = post_rounds(events);
    events
        .iter()
        .filter(|e| match &e.event {
            Event::Reaction { post_id: Some(p), .. } => rounds.get(p).is_none_or(|r| *r >= e.round),
            _ => false,
        })
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn no_reaction_sees_its_own_round(seed in 0u64..10_000, agents in 5usize..30, objective in 0usize..3) {
        let mut c = cfg(seed, 4, agents);
        c.objective = [Objective::None, Objective::CrossView, Objective::Misinfo][objective];
        c.misinfo_fraction = 0.2;
        let out = run(c).unwrap();
        prop_assert_eq!(same_round_reactions(&out.events), 0);
    }
}

fn arm_conservation(objective: Objective) {
    let mut c = cfg(8, 6, 30);
    c.objective = objective;
    c.misinfo_fraction = 0.2;
    let out = run(c).unwrap();
    let mut announced: BTreeMap<u64, u32> = BTreeMap::new();
    let mut rewarded = BTreeSet::new();
    for e in &out.events {
        match &e.event {
            Event::Recommendation { arm_id, .. } | Event::ExposureChange { arm_id: Some(arm_id), .. } => {
                assert!(announced.insert(*arm_id, e.round).is_none(), "arm {arm_id} announced twice");
            }
            Event::Reward { arm_id, value } => {
                let at = announced.get(arm_id).unwrap_or_else(|| panic!("reward for unknown arm {arm_id}"));
                assert_eq!(*at + 1, e.round);
                assert!((0.0..=1.0).contains(value));
                assert!(rewarded.insert(*arm_id), "arm {arm_id} rewarded twice");
            }
            _ => {}
        }
    }
    assert!(!rewarded.is_empty());
    let last = out.state.round;
    for (id, r) in &announced {
        assert_eq!(rewarded.contains(id), *r < last, "arm {id} from round {r}");
    }
}

#[test]
fn every_recommendation_is_rewarded_once() {
    arm_conservation(Objective::CrossView);
}

#[test]
fn every_exposure_arm_is_rewarded_once() {
    arm_conservation(Objective::Misinfo);
}

#[test]
fn zero_exposure_hides_an_author_from_feeds() {
    let base = run(cfg(2, 5, 25)).unwrap();
    // Pick the author most reacted to in the unrestricted run.
    let authors: BTreeMap<u64, String> = base
        .events
        .iter()
        .filter_map(|e| match &e.event {
            Event::Post { post_id, author, .. } => Some((*post_id, author.clone())),
            _ => None,
        })
        .collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &base.events {
        if let Event::Reaction { post_id: Some(p), .. } = &e.event {
            *counts.entry(authors[p].clone()).or_default() += 1;
        }
    }
    let (target, n) = counts.into_iter().max_by_key(|(_, n)| *n).unwrap();
    assert!(n > 0);

    let mut c = cfg(2, 5, 25);
    c.exposure.overrides.insert(target.clone(), 0.0);
    let out = run(c).unwrap();
    let authors: BTreeMap<u64, String> = out
        .events
        .iter()
        .filter_map(|e| match &e.event {
            Event::Post { post_id, author, .. } => Some((*post_id, author.clone())),
            _ => None,
        })
        .collect();
    for e in &out.events {
        if let Event::Reaction { post_id: Some(p), channel, .. } = &e.event {
            if authors[p] == target {
                assert_eq!(*channel, Some(Channel::Recommendation));
            }
        }
    }
}

#[test]
fn misinformation_seeding_posts_every_round() {
    let mut c = cfg(4, 3, 50);
    c.misinfo_fraction = 0.2;
    let out = run(c.clone()).unwrap();
    for round in 0..=3 {
        let seeded: Vec<_> = out
            .events
            .iter()
            .filter(|e| e.round == round && matches!(e.event, Event::Post { source: PostSource::Seed, misinfo: true, .. }))
            .collect();
        assert_eq!(seeded.len(), 10, "round {round}");
    }
    for e in &out.events {
        if let Event::Post { misinfo, content, source: PostSource::Seed, .. } = &e.event {
            assert!(*misinfo);
            assert_eq!(content, &c.misinfo_message);
        }
    }
    // Authoring alone does not make anyone misinformed.
    let r = replay_records(&out.events, ReplayOptions::default()).unwrap();
    assert_eq!(r.misinformed.len(), 50);
    assert!(out.metrics[0].misinformation_ratio < c.misinfo_fraction);
}

#[test]
fn metadata_population_runs() {
    let mut c = cfg(1, 2, 0);
    c.population.source = PopulationSource::Metadata;
    c.population.metadata_dir = Some(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/metadata"));
    let out = run(c).unwrap();
    assert_eq!(out.state.agents.len(), 5);
    assert_eq!(out.state.graph.ids()[0], "101");
    assert_eq!(out.metrics.len(), 2);
}

#[test]
fn news_reaches_the_log_in_its_round() {
    let text = r#"
seed = 2
rounds = 3
agents = 10

[[news]]
round = 2
text = "A court blocks the registry"
stance = -1
"#;
    let c = RunConfig::from_toml(text).unwrap();
    let out = run(c).unwrap();
    let news: Vec<u32> = out
        .events
        .iter()
        .filter(|e| matches!(e.event, Event::NewsInjection { .. }))
        .map(|e| e.round)
        .collect();
    assert_eq!(news, vec![2]);
}
