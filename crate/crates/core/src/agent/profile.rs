//! Four-attribute user profiles.
//!
//! The scripted path derives the attributes with keyword heuristics over the
//! description and historical posts. The LLM path fills them from the
//! `profile_synthesis` template and falls back to the heuristics (flagged)
//! when the backend fails or answers off-format.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::backend::{first_json_object, Backend};
use super::prompt::PROFILE_SYNTHESIS;
use crate::dataprep::UserMetadata;
use crate::{toxicity, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub user_id: String,
    pub likely_identity: String,
    pub interested_areas: Vec<String>,
    pub posting_style: String,
    pub interaction_behavior: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_metadata: Option<UserMetadata>,
    /// Set when an LLM backend was asked but the heuristics answered.
    #[serde(default)]
    pub synthetic_fallback: bool,
}

impl AgentProfile {
    /// Prompt and embedding text for the profile.
    pub fn to_text(&self) -> String {
        format!(
            "Likely identity: {}\nInterested areas: {}\nPosting style: {}\nInteraction behavior: {}",
            self.likely_identity,
            self.interested_areas.join(", "),
            self.posting_style,
            self.interaction_behavior
        )
    }

    fn is_complete(&self) -> bool {
        !self.likely_identity.trim().is_empty()
            && !self.interested_areas.is_empty()
            && self.interested_areas.iter().all(|a| !a.trim().is_empty())
            && !self.posting_style.trim().is_empty()
            && !self.interaction_behavior.trim().is_empty()
    }
}

const AREAS: &[(&str, &[&str])] = &[
    (
        "politics",
        &[
            "politic", "election", "vote", "voting", "congress", "senate", "democrat", "republican", "gop", "maga",
            "president", "government", "policy", "liberal", "conservative", "law", "legislat", "registry", "campaign",
            "trump", "biden", "obama", "gun", "abortion", "immigration",
        ],
    ),
    (
        "environment",
        &["climate", "environment", "green", "sustainab", "carbon", "forest", "planet", "renewable", "pollution"],
    ),
    ("technology", &["tech", "software", "coding", "startup", "crypto", "data", "robot", "internet"]),
    ("health", &["health", "covid", "vaccine", "medic", "doctor", "nurse", "hospital", "fitness"]),
    ("economy", &["econom", "market", "stock", "business", "finance", "invest", "tax", "inflation", "jobs"]),
    ("sports", &["sport", "football", "soccer", "nba", "nfl", "baseball", "game day", "team"]),
    ("entertainment", &["music", "movie", "film", "tv", "celebrity", "concert", "album", "gaming"]),
    ("religion", &["faith", "god", "church", "pray", "bible", "blessed"]),
    ("education", &["school", "student", "teacher", "education", "university", "college"]),
    ("news and media", &["news", "breaking", "journalis", "report", "media", "press"]),
];

const ROLES: &[(&str, &str)] = &[
    ("journalist", "journalist or news writer"),
    ("reporter", "journalist or news writer"),
    ("editor", "journalist or news writer"),
    ("professor", "academic"),
    ("researcher", "academic"),
    ("scientist", "scientist"),
    ("teacher", "educator"),
    ("student", "student"),
    ("veteran", "military veteran"),
    ("lawyer", "legal professional"),
    ("attorney", "legal professional"),
    ("nurse", "health worker"),
    ("doctor", "health worker"),
    ("pastor", "religious leader"),
    ("activist", "activist"),
    ("organizer", "activist"),
    ("engineer", "engineer"),
    ("developer", "software developer"),
    ("artist", "artist"),
    ("musician", "musician"),
    ("founder", "entrepreneur"),
    ("ceo", "business leader"),
    ("entrepreneur", "entrepreneur"),
    ("author", "writer"),
    ("writer", "writer"),
    ("senator", "politician"),
    ("candidate", "politician"),
    ("mom", "parent"),
    ("dad", "parent"),
    ("mother", "parent"),
    ("father", "parent"),
    ("retired", "retiree"),
];

const POSITIVE: &[&str] = &[
    "love", "great", "proud", "support", "thank", "thanks", "happy", "good", "best", "hope", "amazing", "congrat",
    "protect", "back",
];
const NEGATIVE: &[&str] = &[
    "bad", "wrong", "against", "oppose", "reject", "angry", "worst", "fail", "sad", "stop", "harm", "hurt", "never",
];

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn hits(words: &[String], keys: &[&str]) -> usize {
    words.iter().filter(|w| keys.iter().any(|k| w.starts_with(k))).count()
}

/// Deterministic profile from metadata alone.
pub fn heuristic_profile(meta: &UserMetadata) -> Result<AgentProfile> {
    let desc = meta.profile.description.trim();
    if desc.is_empty() && meta.tweets.iter().all(|t| t.trim().is_empty()) {
        return Err(Error::Config(format!(
            "user {} has neither a description nor historical posts",
            meta.id
        )));
    }
    let all_text = std::iter::once(desc)
        .chain(meta.tweets.iter().map(String::as_str))
        .collect::<Vec<_>>()
        .join(" ");
    let all_words = words(&all_text);
    let desc_words = words(desc);

    let mut scored: Vec<(usize, &str)> = AREAS
        .iter()
        .map(|(area, keys)| (hits(&all_words, keys), *area))
        .filter(|(n, _)| *n > 0)
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
    let mut interested_areas: Vec<String> = scored.iter().take(4).map(|(_, a)| a.to_string()).collect();
    let hashtags: Vec<String> = all_text
        .split_whitespace()
        .filter(|w| w.starts_with('#') && w.len() > 1)
        .map(|w| w.trim_end_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .collect();
    let mut tags: Vec<String> = Vec::new();
    for h in hashtags {
        if !tags.contains(&h) {
            tags.push(h);
        }
    }
    if interested_areas.is_empty() {
        interested_areas.push("general news".to_string());
    }
    interested_areas.extend(tags.into_iter().take(3));

    let role = ROLES
        .iter()
        .find(|(k, _)| desc_words.iter().any(|w| w == k || w.strip_suffix('s') == Some(k)))
        .map(|(_, r)| r.to_string())
        .unwrap_or_else(|| format!("ordinary user interested in {}", interested_areas[0]));
    let likely_identity = if desc.is_empty() {
        role
    } else {
        let snippet: String = desc.chars().take(80).collect();
        format!("{role}; bio: \"{snippet}\"")
    };

    let posting_style = posting_style(meta, &all_words);
    let interaction_behavior = interaction_behavior(meta);
    Ok(AgentProfile {
        user_id: meta.id.clone(),
        likely_identity,
        interested_areas,
        posting_style,
        interaction_behavior,
        raw_metadata: Some(meta.clone()),
        synthetic_fallback: false,
    })
}

fn posting_style(meta: &UserMetadata, all_words: &[String]) -> String {
    let tweets: Vec<&str> = meta.tweets.iter().map(String::as_str).filter(|t| !t.trim().is_empty()).collect();
    let mut parts = Vec::new();
    if tweets.is_empty() {
        parts.push("rarely posts".to_string());
    } else {
        let n = tweets.len() as f64;
        let avg_len = tweets.iter().map(|t| t.chars().count()).sum::<usize>() as f64 / n;
        parts.push(if avg_len < 60.0 { "short posts" } else if avg_len < 140.0 { "medium-length posts" } else { "long posts" }.to_string());
        let tags = tweets.iter().filter(|t| t.contains('#')).count() as f64 / n;
        if tags >= 0.5 {
            parts.push("heavy hashtag use".to_string());
        }
        let bangs = tweets.iter().filter(|t| t.contains('!')).count() as f64 / n;
        if bangs >= 0.3 {
            parts.push("emphatic".to_string());
        }
        let tox = tweets.iter().map(|t| toxicity::lexicon_score(t)).sum::<f64>() / n;
        if tox > 0.1 {
            parts.push("confrontational, often insulting tone".to_string());
        }
    }
    let pos = hits(all_words, POSITIVE);
    let neg = hits(all_words, NEGATIVE);
    parts.push(
        match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => "mostly positive sentiment",
            std::cmp::Ordering::Less => "mostly negative sentiment",
            std::cmp::Ordering::Equal => "neutral sentiment",
        }
        .to_string(),
    );
    parts.join(", ")
}

fn interaction_behavior(meta: &UserMetadata) -> String {
    let tweets = &meta.tweets;
    let mut parts = Vec::new();
    if !tweets.is_empty() {
        let n = tweets.len() as f64;
        let rts = tweets.iter().filter(|t| t.trim_start().starts_with("RT @")).count() as f64 / n;
        let mentions = tweets.iter().filter(|t| t.contains('@')).count() as f64 / n;
        parts.push(if rts >= 0.5 { "mostly retweets others" } else { "mostly writes original posts" }.to_string());
        if mentions - rts >= 0.3 {
            parts.push("frequently replies to or mentions other accounts".to_string());
        }
    }
    let followers = meta.profile.followers_count as f64;
    let friends = meta.profile.friends_count as f64;
    parts.push(
        if followers > 2.0 * friends.max(1.0) {
            "broadcaster with a larger audience than it follows"
        } else if friends > 2.0 * followers.max(1.0) {
            "follows many more accounts than follow it back"
        } else {
            "balanced follower and following counts"
        }
        .to_string(),
    );
    parts.join(", ")
}

/// Builds a profile with the chosen backend.
pub fn synthesize_profile(meta: &UserMetadata, backend: &Backend) -> Result<AgentProfile> {
    let heuristic = heuristic_profile(meta)?;
    let Some(llm) = backend.llm() else {
        return Ok(heuristic);
    };
    let p = &meta.profile;
    let user_info = format!(
        "name: {}, screen_name: {}, description: {}, created_at: {}, followers: {}, following: {}",
        p.name, p.screen_name, p.description, p.created_at, p.followers_count, p.friends_count
    );
    let tweets = meta
        .tweets
        .iter()
        .enumerate()
        .map(|(i, t)| format!("Tweet{}: {t}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let fields = BTreeMap::from([
        ("agent_id", meta.id.clone()),
        ("user_info", user_info),
        ("tweets", tweets),
    ]);
    let parsed = llm
        .ask(PROFILE_SYNTHESIS, &fields)
        .and_then(|raw| parse_profile_reply(&meta.id, &raw));
    match parsed {
        Ok(mut profile) => {
            profile.raw_metadata = Some(meta.clone());
            Ok(profile)
        }
        Err(e) => {
            log::warn!("profile synthesis for {} fell back to heuristics: {e}", meta.id);
            Ok(AgentProfile {
                synthetic_fallback: true,
                ..heuristic
            })
        }
    }
}

fn parse_profile_reply(user_id: &str, raw: &str) -> Result<AgentProfile> {
    let obj = first_json_object(raw).ok_or_else(|| Error::Parse("no JSON object in profile reply".into()))?;
    let inner = match obj.get("synthetic_profile") {
        Some(Value::Object(m)) => m.clone(),
        _ => obj,
    };
    let text = |key: &str| -> String {
        match inner.get(key) {
            Some(Value::String(s)) => s.trim().to_string(),
            Some(Value::Array(a)) => a.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(", "),
            _ => String::new(),
        }
    };
    let interested_areas = match inner.get("interested_areas") {
        Some(Value::Array(a)) => a.iter().filter_map(Value::as_str).map(|s| s.trim().to_string()).collect(),
        Some(Value::String(s)) => s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
        _ => Vec::new(),
    };
    let profile = AgentProfile {
        user_id: user_id.to_string(),
        likely_identity: text("likely_identity"),
        interested_areas,
        posting_style: text("posting_style"),
        interaction_behavior: text("interaction_behavior"),
        raw_metadata: None,
        synthetic_fallback: false,
    };
    if profile.is_complete() {
        Ok(profile)
    } else {
        Err(Error::Parse("profile reply is missing attributes".into()))
    }
}
