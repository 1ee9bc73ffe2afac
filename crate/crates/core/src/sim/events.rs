//! Event log records and the metrics tracker that consumes them.
//!
//! A run's observable history is its event stream. Live metrics are produced
//! by feeding emitted events through [`Tracker`], and replay feeds the logged
//! events through the same tracker, so both sides compute metrics with the
//! same arithmetic in the same order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agent::ActionKind;
use crate::graph::{RelationKind, SocialGraph};
use crate::stance::{update_ema, Stance};
use crate::{Error, NodeIdx, PostId, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostSource {
    History,
    Seed,
    Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Relational,
    Personalized,
    Headline,
    Recommendation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    Post {
        post_id: PostId,
        author: String,
        content: String,
        stance: Stance,
        misinfo: bool,
        corrective: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parent: Option<PostId>,
        source: PostSource,
    },
    Reaction {
        actor: String,
        action: ActionKind,
        /// Message the action responds to.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        post_id: Option<PostId>,
        /// Author of that message, or the target of a relationship action.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sender: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        channel: Option<Channel>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        content: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        toxicity: Option<f64>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        toxicity_fallback: bool,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        parse_failed: bool,
    },
    Follow {
        actor: String,
        target: String,
    },
    Unfollow {
        actor: String,
        target: String,
    },
    Recommendation {
        arm_id: u64,
        user: String,
        post_id: PostId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        score: Option<f64>,
    },
    ExposureChange {
        /// Absent for configured (non-bandit) settings.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arm_id: Option<u64>,
        author: String,
        level: f64,
        previous: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        score: Option<f64>,
    },
    Reward {
        arm_id: u64,
        value: f64,
    },
    StanceUpdate {
        user: String,
        discrete: Stance,
        smoothed: f64,
        alpha: f64,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        fallback: bool,
    },
    NewsInjection {
        text: String,
        stance: Stance,
    },
    Metric(RoundMetrics),
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Post { .. } => "post",
            Event::Reaction { .. } => "reaction",
            Event::Follow { .. } => "follow",
            Event::Unfollow { .. } => "unfollow",
            Event::Recommendation { .. } => "recommendation",
            Event::ExposureChange { .. } => "exposure_change",
            Event::Reward { .. } => "reward",
            Event::StanceUpdate { .. } => "stance_update",
            Event::NewsInjection { .. } => "news_injection",
            Event::Metric(_) => "metric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub v: u32,
    pub seq: u64,
    pub round: u32,
    #[serde(flatten)]
    pub event: Event,
}

impl EventRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event records always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub stance_mean: f64,
    pub stance_std: f64,
    pub mean_toxicity: f64,
    pub cross_interaction_ratio: f64,
    pub misinformation_ratio: f64,
    pub interactions: u64,
    pub cross_interactions: u64,
    /// Count per action label, all eight labels present.
    pub actions: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PostMeta {
    author: NodeIdx,
    misinfo: bool,
    corrective: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct RoundAcc {
    tox_sum: f64,
    tox_n: u64,
    cross: u64,
    interactions: u64,
    actions: BTreeMap<String, u64>,
}

/// Event-sourced view of a run: population, graph, smoothed stances,
/// misinformation status and the running round's metric accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    ids: Vec<String>,
    index: BTreeMap<String, NodeIdx>,
    edges: BTreeSet<(NodeIdx, NodeIdx)>,
    smoothed: Vec<f64>,
    discrete: Vec<Stance>,
    posts: BTreeMap<PostId, PostMeta>,
    /// Round of the latest adoption of misinformation, if not yet corrected.
    last_mis: Vec<Option<u32>>,
    window: u32,
    round: u32,
    acc: RoundAcc,
}

impl Tracker {
    /// `window`: rounds an adoption keeps a user misinformed.
    pub fn new(window: u32) -> Self {
        Self {
            ids: Vec::new(),
            index: BTreeMap::new(),
            edges: BTreeSet::new(),
            smoothed: Vec::new(),
            discrete: Vec::new(),
            posts: BTreeMap::new(),
            last_mis: Vec::new(),
            window,
            round: 0,
            acc: RoundAcc::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn smoothed(&self) -> &[f64] {
        &self.smoothed
    }

    pub fn discrete(&self) -> &[Stance] {
        &self.discrete
    }

    pub fn graph(&self) -> SocialGraph {
        let mut g = SocialGraph::new(self.ids.iter().cloned());
        for &(a, b) in &self.edges {
            g.apply_by_index(a, b, RelationKind::Follow).expect("tracked edges are valid");
        }
        g
    }

    pub fn edge_set(&self) -> &BTreeSet<(NodeIdx, NodeIdx)> {
        &self.edges
    }

    fn idx(&self, id: &str) -> Result<NodeIdx> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::CorruptLog(format!("event references unknown user `{id}`")))
    }

    /// mis(u) as of `round`.
    pub fn mis_flags(&self, round: u32) -> Vec<bool> {
        self.last_mis
            .iter()
            .map(|m| m.is_some_and(|r| round - r.min(round) < self.window))
            .collect()
    }

    fn mark_adoption(&mut self, user: NodeIdx, post: &PostMeta, round: u32) {
        if post.misinfo {
            self.last_mis[user] = Some(round);
        } else if post.corrective {
            self.last_mis[user] = None;
        }
    }

    pub fn apply(&mut self, rec: &EventRecord) -> Result<Option<RoundMetrics>> {
        if rec.round != self.round {
            if rec.round < self.round {
                return Err(Error::CorruptLog(format!("round went backwards at seq {}", rec.seq)));
            }
            self.round = rec.round;
            self.acc = RoundAcc::default();
        }
        match &rec.event {
            Event::StanceUpdate {
                user,
                discrete,
                smoothed,
                alpha,
                ..
            } => {
                let value = match self.index.get(user) {
                    Some(&i) => {
                        let v = update_ema(self.smoothed[i], *discrete, *alpha)?;
                        self.smoothed[i] = v;
                        self.discrete[i] = *discrete;
                        v
                    }
                    None if rec.round == 0 => {
                        if self.ids.last().is_some_and(|last| last.as_str() >= user.as_str()) {
                            return Err(Error::CorruptLog(format!("population not in id order at `{user}`")));
                        }
                        self.index.insert(user.clone(), self.ids.len());
                        self.ids.push(user.clone());
                        self.smoothed.push(discrete.as_f64());
                        self.discrete.push(*discrete);
                        self.last_mis.push(None);
                        discrete.as_f64()
                    }
                    None => return Err(Error::CorruptLog(format!("stance update for unknown user `{user}`"))),
                };
                if value != *smoothed {
                    return Err(Error::CorruptLog(format!(
                        "seq {}: smoothed stance {smoothed} disagrees with recomputed {value}",
                        rec.seq
                    )));
                }
            }
            Event::Follow { actor, target } => {
                let e = (self.idx(actor)?, self.idx(target)?);
                self.edges.insert(e);
            }
            Event::Unfollow { actor, target } => {
                let e = (self.idx(actor)?, self.idx(target)?);
                self.edges.remove(&e);
            }
            Event::Post {
                post_id,
                author,
                misinfo,
                corrective,
                ..
            } => {
                let meta = PostMeta {
                    author: self.idx(author)?,
                    misinfo: *misinfo,
                    corrective: *corrective,
                };
                self.posts.insert(*post_id, meta);
            }
            Event::Reaction {
                actor,
                action,
                post_id,
                sender,
                toxicity,
                ..
            } => {
                let me = self.idx(actor)?;
                *self.acc.actions.entry(action.label().to_string()).or_default() += 1;
                if action.needs_content() {
                    if let Some(t) = toxicity {
                        self.acc.tox_sum += t;
                        self.acc.tox_n += 1;
                    }
                }
                if let (Some(s), true) = (sender, is_interaction(*action)) {
                    let other = self.idx(s)?;
                    self.acc.interactions += 1;
                    let (a, b) = (self.smoothed[me], self.smoothed[other]);
                    if (a > 0.0 && b < 0.0) || (a < 0.0 && b > 0.0) {
                        self.acc.cross += 1;
                    }
                }
                if action.is_adoption() {
                    if let Some(meta) = post_id.and_then(|p| self.posts.get(&p)).cloned() {
                        self.mark_adoption(me, &meta, rec.round);
                    }
                }
            }
            Event::Metric(_) => return Ok(Some(self.finish_round())),
            Event::Recommendation { .. } | Event::ExposureChange { .. } | Event::Reward { .. } | Event::NewsInjection { .. } => {}
        }
        Ok(None)
    }

    /// Metrics of the running round without closing it.
    pub fn metrics(&self) -> RoundMetrics {
        let n = self.smoothed.len();
        let (mean, std) = if n == 0 {
            (0.0, 0.0)
        } else {
            let mean = self.smoothed.iter().sum::<f64>() / n as f64;
            let var = self.smoothed.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
            (mean, var.sqrt())
        };
        let mis = self.mis_flags(self.round).iter().filter(|m| **m).count();
        let mut actions: BTreeMap<String, u64> = ActionKind::ALL.iter().map(|k| (k.label().to_string(), 0)).collect();
        for (k, v) in &self.acc.actions {
            actions.insert(k.clone(), *v);
        }
        RoundMetrics {
            round: self.round,
            stance_mean: mean,
            stance_std: std,
            mean_toxicity: if self.acc.tox_n == 0 { 0.0 } else { self.acc.tox_sum / self.acc.tox_n as f64 },
            cross_interaction_ratio: if self.acc.interactions == 0 {
                0.0
            } else {
                self.acc.cross as f64 / self.acc.interactions as f64
            },
            misinformation_ratio: if n == 0 { 0.0 } else { mis as f64 / n as f64 },
            interactions: self.acc.interactions,
            cross_interactions: self.acc.cross,
            actions,
        }
    }

    fn finish_round(&mut self) -> RoundMetrics {
        let m = self.metrics();
        self.acc = RoundAcc::default();
        m
    }
}

/// Actions between two users that count toward the cross-interaction ratio.
pub fn is_interaction(kind: ActionKind) -> bool {
    !matches!(kind, ActionKind::Tweet | ActionKind::DoNothing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seq: u64, round: u32, event: Event) -> EventRecord {
        EventRecord {
            v: SCHEMA_VERSION,
            seq,
            round,
            event,
        }
    }

    fn stance(user: &str, s: Stance, smoothed: f64) -> Event {
        Event::StanceUpdate {
            user: user.into(),
            discrete: s,
            smoothed,
            alpha: 0.8,
            fallback: false,
        }
    }

    fn reaction(actor: &str, action: ActionKind, post: Option<PostId>, sender: Option<&str>) -> Event {
        Event::Reaction {
            actor: actor.into(),
            action,
            post_id: post,
            sender: sender.map(String::from),
            channel: None,
            content: None,
            toxicity: None,
            toxicity_fallback: false,
            parse_failed: false,
        }
    }

    #[test]
    fn wire_format() {
        let r = rec(3, 1, Event::Reward { arm_id: 9, value: 0.5 });
        assert_eq!(r.to_line(), r#"{"v":1,"seq":3,"round":1,"kind":"reward","payload":{"arm_id":9,"value":0.5}}"#);
        let back: EventRecord = serde_json::from_str(&r.to_line()).unwrap();
        assert_eq!(back, r);
        let r = rec(4, 2, reaction("a", ActionKind::Like, Some(1), Some("b")));
        assert_eq!(serde_json::from_str::<EventRecord>(&r.to_line()).unwrap(), r);
    }

    fn two_users(sa: Stance, sb: Stance) -> Tracker {
        let mut t = Tracker::new(3);
        t.apply(&rec(0, 0, stance("a", sa, sa.as_f64()))).unwrap();
        t.apply(&rec(1, 0, stance("b", sb, sb.as_f64()))).unwrap();
        t
    }

    #[test]
    fn uniform_population_has_no_spread_or_cross() {
        let mut t = two_users(Stance::Positive, Stance::Positive);
        t.apply(&rec(2, 1, reaction("a", ActionKind::Like, None, Some("b")))).unwrap();
        let m = t.metrics();
        assert_eq!((m.stance_std, m.cross_interaction_ratio), (0.0, 0.0));
        assert_eq!(m.stance_mean, 1.0);
    }

    #[test]
    fn one_cross_reply_of_two() {
        let mut t = two_users(Stance::Positive, Stance::Negative);
        t.apply(&rec(2, 1, reaction("a", ActionKind::Reply, Some(0), Some("b")))).unwrap();
        t.apply(&rec(3, 1, reaction("a", ActionKind::Like, Some(1), Some("a")))).unwrap();
        t.apply(&rec(4, 1, reaction("b", ActionKind::Tweet, None, None))).unwrap();
        let m = t.metrics();
        assert_eq!(m.cross_interaction_ratio, 0.5);
        assert_eq!(m.interactions, 2);
        assert_eq!(m.actions["tweet"], 1);
        assert_eq!(m.actions["unfollow"], 0);
    }

    #[test]
    fn no_interactions_means_zero_ratio() {
        let t = two_users(Stance::Positive, Stance::Negative);
        assert_eq!(t.metrics().cross_interaction_ratio, 0.0);
    }

    #[test]
    fn misinformation_window_and_correction() {
        let mut t = two_users(Stance::Neutral, Stance::Neutral);
        let post = |id, misinfo, corrective| Event::Post {
            post_id: id,
            author: "b".into(),
            content: "x".into(),
            stance: Stance::Neutral,
            misinfo,
            corrective,
            parent: None,
            source: PostSource::History,
        };
        t.apply(&rec(2, 0, post(0, true, false))).unwrap();
        t.apply(&rec(3, 0, post(1, false, true))).unwrap();
        t.apply(&rec(4, 1, reaction("a", ActionKind::Retweet, Some(0), Some("b")))).unwrap();
        assert_eq!(t.mis_flags(1), vec![true, false]);
        assert_eq!(t.mis_flags(3), vec![true, false]);
        assert_eq!(t.mis_flags(4), vec![false, false]);
        t.apply(&rec(5, 2, reaction("a", ActionKind::Like, Some(1), Some("b")))).unwrap();
        assert_eq!(t.mis_flags(2), vec![false, false]);
    }

    #[test]
    fn smoothed_mismatch_is_corrupt() {
        let mut t = two_users(Stance::Positive, Stance::Positive);
        let bad = rec(2, 1, stance("a", Stance::Negative, 0.5));
        assert!(matches!(t.apply(&bad), Err(Error::CorruptLog(_))));
    }
}
