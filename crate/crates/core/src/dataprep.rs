//! Metadata ingestion and training-corpus export.
//!
//! Input records look like
//!
//! ```json
//! {"ID": "34209", "profile": {"name": "...", "screen_name": "...",
//!   "description": "...", "created_at": "...", "followers_count": "8856 ",
//!   "friends_count": "1182 "}, "tweet": ["..."],
//!  "neighbor": {"following": ["746"], "follower": ["2006"]}}
//! ```
//!
//! A file holds one record or an array of them. Counts may be numbers or
//! padded strings, and trailing commas are tolerated.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::agent::{synthesize_profile, Action, ActionBundle, ActionKind, AgentProfile, Backend};
use crate::embed::{cosine, EmbeddingProvider};
use crate::graph::{RelationKind, SocialGraph};
use crate::{seed, Error, Result};

pub const MAX_TWEETS: usize = 20;
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProfileMeta {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub screen_name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub created_at: String,
    #[serde(default, deserialize_with = "lenient_count")]
    pub followers_count: u64,
    #[serde(default, deserialize_with = "lenient_count")]
    pub friends_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Neighbor {
    #[serde(default)]
    pub following: Vec<String>,
    #[serde(default)]
    pub follower: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserMetadata {
    #[serde(rename = "ID", alias = "id", deserialize_with = "lenient_id")]
    pub id: String,
    #[serde(default)]
    pub profile: ProfileMeta,
    #[serde(rename = "tweet", alias = "tweets", default)]
    pub tweets: Vec<String>,
    #[serde(default)]
    pub neighbor: Neighbor,
}

fn lenient_count<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    match Value::deserialize(d)? {
        Value::Number(n) => n
            .as_u64()
            .or_else(|| n.as_f64().filter(|f| *f >= 0.0).map(|f| f as u64))
            .ok_or_else(|| serde::de::Error::custom("count must be non-negative")),
        Value::String(s) if s.trim().is_empty() => Ok(0),
        Value::String(s) => s
            .trim()
            .replace(',', "")
            .parse()
            .map_err(|_| serde::de::Error::custom(format!("bad count `{s}`"))),
        Value::Null => Ok(0),
        other => Err(serde::de::Error::custom(format!("bad count {other}"))),
    }
}

fn lenient_id<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!("bad ID {other}"))),
    }
}

/// Removes commas that directly precede `}` or `]` outside strings.
fn strip_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_str = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_str {
            out.push(c);
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        if c == '"' {
            in_str = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

pub fn parse_metadata(text: &str) -> Result<Vec<UserMetadata>> {
    let value: Value = serde_json::from_str(&strip_trailing_commas(text))?;
    let records = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        other => return Err(Error::Parse(format!("expected object or array, got {other}"))),
    };
    records
        .into_iter()
        .map(|r| serde_json::from_value(r).map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: usize,
    pub users: usize,
    pub edges: usize,
    /// (file, reason) for each file or record that was skipped.
    pub skipped: Vec<(PathBuf, String)>,
    pub dangling_neighbors: usize,
    pub truncated_tweets: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalPost {
    pub author: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub profiles: Vec<AgentProfile>,
    pub graph: SocialGraph,
    pub history: Vec<HistoricalPost>,
    pub report: IngestReport,
}

/// Reads every `*.json` file of `dir` in name order.
pub fn ingest(dir: &Path, backend: &Backend) -> Result<Ingested> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut report = IngestReport {
        files: paths.len(),
        ..IngestReport::default()
    };
    let mut records: Vec<UserMetadata> = Vec::new();
    for path in &paths {
        let parsed = std::fs::read_to_string(path).map_err(Error::from).and_then(|t| parse_metadata(&t));
        match parsed {
            Ok(rs) => records.extend(rs),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push((path.clone(), e.to_string()));
            }
        }
    }
    build_population(records, backend, report)
}

pub fn build_population(records: Vec<UserMetadata>, backend: &Backend, mut report: IngestReport) -> Result<Ingested> {
    let mut by_id: BTreeMap<String, UserMetadata> = BTreeMap::new();
    for mut r in records {
        if by_id.contains_key(&r.id) {
            report.warnings.push(format!("duplicate user {} ignored", r.id));
            continue;
        }
        if r.tweets.len() > MAX_TWEETS {
            r.tweets.truncate(MAX_TWEETS);
            report.truncated_tweets += 1;
        }
        by_id.insert(r.id.clone(), r);
    }
    let mut profiles = Vec::with_capacity(by_id.len());
    let mut kept: Vec<UserMetadata> = Vec::with_capacity(by_id.len());
    for (id, meta) in by_id {
        match synthesize_profile(&meta, backend) {
            Ok(p) => {
                profiles.push(p);
                kept.push(meta);
            }
            Err(e) => report.skipped.push((PathBuf::from(&id), e.to_string())),
        }
    }
    if kept.is_empty() {
        log::warn!("ingest produced an empty population");
        report.warnings.push("empty population".into());
    }
    let mut graph = SocialGraph::new(kept.iter().map(|m| m.id.clone()));
    let mut history = Vec::new();
    for meta in &kept {
        let me = graph.index_of(&meta.id)?;
        let links = meta
            .neighbor
            .following
            .iter()
            .map(|f| (f, true))
            .chain(meta.neighbor.follower.iter().map(|f| (f, false)));
        for (other, i_follow) in links {
            match graph.index_of(other.trim()) {
                Ok(o) if o != me => {
                    let (a, b) = if i_follow { (me, o) } else { (o, me) };
                    graph.apply_by_index(a, b, RelationKind::Follow)?;
                }
                Ok(_) => {}
                Err(_) => report.dangling_neighbors += 1,
            }
        }
        history.extend(meta.tweets.iter().filter(|t| !t.trim().is_empty()).map(|t| HistoricalPost {
            author: meta.id.clone(),
            content: t.clone(),
        }));
    }
    if report.dangling_neighbors > 0 {
        log::warn!("dropped {} neighbor ids outside the population", report.dangling_neighbors);
    }
    report.users = kept.len();
    report.edges = graph.edge_count();
    Ok(Ingested {
        profiles,
        graph,
        history,
        report,
    })
}

/// One observed (event, user, response) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuple {
    pub event: String,
    pub user: String,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub x: String,
    pub y: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoRecord {
    pub x: String,
    pub chosen: String,
    pub rejected: Vec<String>,
}

/// Instruction text: event followed by the four profile attributes.
pub fn instruction(event: &str, profile: &AgentProfile) -> String {
    format!("Event: {event}\nUser profile:\n{}", profile.to_text())
}

/// Response text: the action in the agent reply format.
pub fn response(action: &Action) -> String {
    let mut a = action.clone();
    a.target_post = None;
    a.target_user = None;
    ActionBundle {
        actions: vec![a],
        round: 0,
    }
    .to_json()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Export<T> {
    pub records: Vec<T>,
    pub skipped: usize,
}

impl<T> Default for Export<T> {
    fn default() -> Self {
        Self {
            records: Vec::new(),
            skipped: 0,
        }
    }
}

pub fn export_sft(tuples: &[Tuple], profiles: &[AgentProfile]) -> Export<SftRecord> {
    let by_id: BTreeMap<&str, &AgentProfile> = profiles.iter().map(|p| (p.user_id.as_str(), p)).collect();
    let mut out = Export::default();
    for t in tuples {
        match by_id.get(t.user.as_str()) {
            Some(p) => out.records.push(SftRecord {
                x: instruction(&t.event, p),
                y: response(&t.action),
            }),
            None => out.skipped += 1,
        }
    }
    if out.skipped > 0 {
        log::warn!("export-sft skipped {} tuples with unknown users", out.skipped);
    }
    out
}

/// Checks a record against the published schema: non-empty instruction and
/// a response that parses as exactly one known action.
pub fn validate_sft(record: &SftRecord) -> Result<()> {
    if record.x.trim().is_empty() {
        return Err(Error::Parse("empty instruction".into()));
    }
    let parsed = crate::agent::parse_actions(&record.y, 0)?;
    if parsed.bundle.actions.len() != 1 || !parsed.warnings.is_empty() {
        return Err(Error::Parse(format!("response `{}` is not a single action", record.y)));
    }
    Ok(())
}

/// Candidate response for a DPO negative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub kind: ActionKind,
    pub content: Option<String>,
}

impl Candidate {
    pub fn of(action: &Action) -> Self {
        Self {
            kind: action.kind,
            content: action.content.clone(),
        }
    }

    fn text(&self) -> &str {
        self.content.as_deref().unwrap_or(self.kind.label())
    }

    fn action(&self) -> Action {
        Action {
            kind: self.kind,
            content: self.content.clone(),
            target_post: None,
            target_user: None,
        }
    }
}

/// Produces negatives for tuple `idx`.
pub trait CandidateGenerator {
    fn generate(&self, idx: usize, tuple: &Tuple) -> Result<Vec<Candidate>>;
}

/// Draws alternatives from the responses of other tuples.
pub struct PoolSampler {
    pool: Vec<Candidate>,
    per_tuple: usize,
    seed: u64,
}

impl PoolSampler {
    pub fn new(tuples: &[Tuple], per_tuple: usize, seed_value: u64) -> Self {
        Self {
            pool: tuples.iter().map(|t| Candidate::of(&t.action)).collect(),
            per_tuple,
            seed: seed_value,
        }
    }
}

impl CandidateGenerator for PoolSampler {
    fn generate(&self, idx: usize, _tuple: &Tuple) -> Result<Vec<Candidate>> {
        let mut others: Vec<usize> = (0..self.pool.len()).filter(|&i| i != idx).collect();
        others.shuffle(&mut seed::rng(self.seed, &[seed::site::DPO, idx as u64]));
        others.truncate(self.per_tuple);
        Ok(others.into_iter().map(|i| self.pool[i].clone()).collect())
    }
}

/// Asks an LLM backend for alternative reactions, one request each.
pub struct BackendGenerator<'a> {
    pub backend: &'a crate::agent::LlmBackend,
    pub profiles: BTreeMap<String, AgentProfile>,
    pub per_tuple: usize,
}

impl CandidateGenerator for BackendGenerator<'_> {
    fn generate(&self, _idx: usize, tuple: &Tuple) -> Result<Vec<Candidate>> {
        let profile = self
            .profiles
            .get(&tuple.user)
            .ok_or_else(|| Error::UnknownUser(tuple.user.clone()))?;
        let fields = BTreeMap::from([
            ("profile", profile.to_text()),
            ("topic", tuple.event.clone()),
            ("news", "none".to_string()),
            ("memory_digest", "nothing yet".to_string()),
            ("message", tuple.event.clone()),
            ("followed", "False".to_string()),
        ]);
        let mut out = Vec::new();
        for _ in 0..self.per_tuple {
            let raw = self.backend.ask(crate::agent::prompt::ACTIONS_CALLING, &fields)?;
            if let Ok(parsed) = crate::agent::parse_actions(&raw, 0) {
                out.extend(parsed.bundle.actions.iter().map(Candidate::of));
            }
        }
        Ok(out)
    }
}

/// Admissible iff the label differs or the content similarity is below
/// `threshold`.
pub fn admissible(positive: &Candidate, cand: &Candidate, similarity: f64, threshold: f64) -> bool {
    cand.kind != positive.kind || similarity < threshold
}

/// Indices of the `j` negatives to keep: admissible candidates ordered by
/// different label first, then ascending similarity, then position. `None`
/// when fewer than `j` are admissible.
pub fn select_negatives(
    positive: &Candidate,
    candidates: &[Candidate],
    embedder: &dyn EmbeddingProvider,
    j: usize,
    threshold: f64,
) -> Result<Option<Vec<usize>>> {
    let pos = embedder.embed(positive.text())?;
    let mut ranked = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let sim = cosine(&pos, &embedder.embed(c.text())?);
        if admissible(positive, c, sim, threshold) {
            ranked.push((c.kind == positive.kind, sim, i));
        }
    }
    if ranked.len() < j {
        return Ok(None);
    }
    ranked.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(Some(ranked.into_iter().take(j).map(|r| r.2).collect()))
}

pub fn export_dpo(
    tuples: &[Tuple],
    profiles: &[AgentProfile],
    generator: &dyn CandidateGenerator,
    embedder: &dyn EmbeddingProvider,
    j: usize,
    threshold: f64,
) -> Result<Export<DpoRecord>> {
    let by_id: BTreeMap<&str, &AgentProfile> = profiles.iter().map(|p| (p.user_id.as_str(), p)).collect();
    let mut out = Export::default();
    for (idx, t) in tuples.iter().enumerate() {
        let Some(profile) = by_id.get(t.user.as_str()) else {
            out.skipped += 1;
            continue;
        };
        let positive = Candidate::of(&t.action);
        let cands = generator.generate(idx, t)?;
        match select_negatives(&positive, &cands, embedder, j, threshold)? {
            Some(sel) => out.records.push(DpoRecord {
                x: instruction(&t.event, profile),
                chosen: response(&t.action),
                rejected: sel.into_iter().map(|i| response(&cands[i].action())).collect(),
            }),
            None => out.skipped += 1,
        }
    }
    if out.skipped > 0 {
        log::warn!("export-dpo dropped {} tuples", out.skipped);
    }
    Ok(out)
}

/// Hyperparameters recorded for downstream trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub records: usize,
    pub skipped: usize,
    pub dpo_beta: f64,
    pub dpo_negatives: usize,
    pub similarity_threshold: f64,
    pub sft_learning_rate: f64,
    pub dpo_learning_rate: f64,
    pub lora_rank: u32,
    pub batch_size: u32,
    pub max_epochs: u32,
}

impl Manifest {
    pub fn new(kind: &str, records: usize, skipped: usize, j: usize, threshold: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            records,
            skipped,
            dpo_beta: 0.1,
            dpo_negatives: j,
            similarity_threshold: threshold,
            sft_learning_rate: 1e-6,
            dpo_learning_rate: 5e-7,
            lora_rank: 64,
            batch_size: 256,
            max_epochs: 10,
        }
    }
}

/// Writes a header line `{"schema": kind, "version": 1}` then one record
/// per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, kind: &str, records: &[T]) -> Result<()> {
    writeln!(w, "{}", serde_json::json!({ "schema": kind, "version": SCHEMA_VERSION }))?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a file written by [`write_jsonl`], checking the header.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(text: &str, kind: &str) -> Result<Vec<T>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Value = serde_json::from_str(lines.next().ok_or_else(|| Error::Parse("empty file".into()))?)?;
    if header.get("schema").and_then(Value::as_str) != Some(kind)
        || header.get("version").and_then(Value::as_u64) != Some(u64::from(SCHEMA_VERSION))
    {
        return Err(Error::Parse(format!("expected a `{kind}` v{SCHEMA_VERSION} header, got {header}")));
    }
    lines.map(|l| serde_json::from_str(l).map_err(Error::from)).collect()
}

/// Reads tuples: JSON lines of `{"event", "user", "action": {...}}`.
pub fn read_tuples(text: &str) -> Result<Vec<Tuple>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Distinct user ids referenced by a population's follow lists, for
/// diagnostics.
pub fn referenced_ids(records: &[UserMetadata]) -> BTreeSet<String> {
    records
        .iter()
        .flat_map(|r| r.neighbor.following.iter().chain(&r.neighbor.follower).cloned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;

    #[test]
    fn parses_appendix_shape() {
        let text = r#"{
            "ID": "34209",
            "profile": {"name": "A", "screen_name": "a_b", "description": "d ",
                        "created_at": "Thu Aug 13 21:38:42 2015 ",
                        "followers_count": "8856 ", "friends_count": "1182 ",},
            "tweet": ["hello"],
            "neighbor": {"following": ["1"], "follower": ["2"]}
        }"#;
        let r = parse_metadata(text).unwrap();
        assert_eq!(r[0].id, "34209");
        assert_eq!(r[0].profile.followers_count, 8856);
        assert_eq!(r[0].tweets, vec!["hello"]);
        assert!(parse_metadata("[1, 2]").is_err());
    }

    #[test]
    fn trailing_commas_only_outside_strings() {
        assert_eq!(strip_trailing_commas(r#"{"a": ",}", "b": [1,2,],}"#), r#"{"a": ",}", "b": [1,2]}"#);
    }

    fn tuple(user: &str, kind: ActionKind, content: Option<&str>) -> Tuple {
        Tuple {
            event: "news".into(),
            user: user.into(),
            action: Action {
                kind,
                content: content.map(str::to_string),
                target_post: None,
                target_user: None,
            },
        }
    }

    #[test]
    fn identical_negative_rejected() {
        let e = HashEmbedder::new(32, 0);
        let pos = Candidate { kind: ActionKind::Reply, content: Some("no way".into()) };
        let cands = vec![pos.clone(), Candidate { kind: ActionKind::Like, content: None }];
        assert_eq!(select_negatives(&pos, &cands, &e, 1, 0.8).unwrap(), Some(vec![1]));
        assert_eq!(select_negatives(&pos, &cands, &e, 2, 0.8).unwrap(), None);
    }

    #[test]
    fn sft_records_validate() {
        let p = crate::agent::profile::heuristic_profile(&UserMetadata {
            id: "u".into(),
            profile: ProfileMeta {
                description: "teacher".into(),
                ..ProfileMeta::default()
            },
            tweets: vec![],
            neighbor: Neighbor::default(),
        })
        .unwrap();
        let tuples = vec![tuple("u", ActionKind::Reply, Some("hi")), tuple("x", ActionKind::Like, None)];
        let out = export_sft(&tuples, &[p]);
        assert_eq!((out.records.len(), out.skipped), (1, 1));
        validate_sft(&out.records[0]).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, "sft", &out.records).unwrap();
        let back: Vec<SftRecord> = read_jsonl(std::str::from_utf8(&buf).unwrap(), "sft").unwrap();
        assert_eq!(back, out.records);
    }
}
