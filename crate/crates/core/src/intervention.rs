//! Platform interventions: the three-channel feed and per-author exposure
//! control.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embed::cosine;
use crate::graph::SocialGraph;
use crate::stance::Stance;
use crate::{seed, Error, NodeIdx, PostId, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Engagement {
    pub likes: u64,
    pub retweets: u64,
    pub replies: u64,
    pub dislikes: u64,
}

impl Engagement {
    /// Headline score: likes + retweets + replies.
    pub fn score(&self) -> u64 {
        self.likes + self.retweets + self.replies
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: PostId,
    pub author: NodeIdx,
    pub content: String,
    pub round: u32,
    pub stance: Stance,
    pub misinfo: bool,
    pub corrective: bool,
    /// Post this one retweets or replies to.
    pub parent: Option<PostId>,
    pub engagement: Engagement,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedConfig {
    pub quota_relational: usize,
    pub quota_personalized: usize,
    pub quota_headline: usize,
    /// Rounds of history the headline and personalized channels look back.
    pub headline_window: u32,
}

impl Default for FeedConfig {
    fn default() -> Self {
        Self {
            quota_relational: 2,
            quota_personalized: 2,
            quota_headline: 1,
            headline_window: 3,
        }
    }
}

impl FeedConfig {
    pub fn total(&self) -> usize {
        self.quota_relational + self.quota_personalized + self.quota_headline
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Config("feed quotas must sum to at least 1".into()));
        }
        if self.headline_window == 0 {
            return Err(Error::Config("headline_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-author delivery probability, 1.0 unless set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureTable {
    probs: Vec<f64>,
}

impl ExposureTable {
    pub fn new(n: usize) -> Self {
        Self { probs: vec![1.0; n] }
    }

    pub fn get(&self, author: NodeIdx) -> f64 {
        self.probs.get(author).copied().unwrap_or(1.0)
    }

    pub fn set(&mut self, author: NodeIdx, p: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("exposure probability {p} outside [0,1]")));
        }
        if author >= self.probs.len() {
            self.probs.resize(author + 1, 1.0);
        }
        self.probs[author] = p;
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.probs
    }
}

/// Posts by `user`'s followees among `prev_round_posts` (the posts created
/// in the previous round). Posts of one round count as simultaneous, so
/// their order is a seeded shuffle per receiver rather than id order.
pub fn relational_feed<'a>(graph: &SocialGraph, prev_round_posts: &'a [Post], user: NodeIdx, quota: usize, order_seed: u64) -> Vec<&'a Post> {
    let mut out: Vec<&Post> = prev_round_posts
        .iter()
        .filter(|p| p.author != user && graph.has_edge(user, p.author))
        .collect();
    out.sort_by_cached_key(|p| (std::cmp::Reverse(p.round), seed::derive(order_seed, &[seed::site::FEED_ORDER, p.id, user as u64]), p.id));
    out.truncate(quota);
    out
}

/// Top `quota` candidates by cosine similarity to `user_context`, ties by
/// ascending post id.
pub fn personalized_feed<'a>(user_context: &[f64], candidates: &[&'a Post], quota: usize) -> Vec<&'a Post> {
    if quota == 0 {
        return Vec::new();
    }
    let mut scored: Vec<(f64, &Post)> = candidates.iter().map(|p| (cosine(user_context, &p.embedding), *p)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
    scored.into_iter().take(quota).map(|(_, p)| p).collect()
}

/// Posts from rounds `[now - window, now)` by engagement, then most recent
/// round, then ascending id.
pub fn headline_feed(all_posts: &[Post], now: u32, window: u32, quota: usize) -> Vec<&Post> {
    let from = now.saturating_sub(window);
    let mut out: Vec<&Post> = all_posts.iter().filter(|p| p.round >= from && p.round < now).collect();
    out.sort_by(|a, b| {
        b.engagement
            .score()
            .cmp(&a.engagement.score())
            .then(b.round.cmp(&a.round))
            .then(a.id.cmp(&b.id))
    });
    out.truncate(quota);
    out
}

/// Bernoulli(`p`) keyed by (run seed, round, post, receiver), so the same
/// delivery always resolves the same way.
pub fn exposure_filter(p: f64, run_seed: u64, round: u32, post_id: PostId, receiver: NodeIdx) -> bool {
    if p >= 1.0 {
        return true;
    }
    if p <= 0.0 {
        return false;
    }
    use rand::Rng;
    let mut rng = seed::rng(run_seed, &[seed::site::EXPOSURE, u64::from(round), post_id, receiver as u64]);
    rng.random::<f64>() < p
}

/// Concatenates channels in order, keeping the first occurrence of each
/// post and at most `cfg.total()` posts.
pub fn compose_feed<'a>(channels: &[Vec<&'a Post>], cfg: &FeedConfig) -> Vec<&'a Post> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for p in channels.iter().flatten() {
        if out.len() == cfg.total() {
            break;
        }
        if seen.insert(p.id) {
            out.push(*p);
        }
    }
    out
}
