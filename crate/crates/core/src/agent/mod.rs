//! User agents: action vocabulary, profiles, prompts, and decision backends.

pub mod action;
pub mod backend;
pub mod profile;
pub mod prompt;
pub mod scripted;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use action::{parse_actions, Action, ActionBundle, ActionKind, MAX_ACTIONS_PER_ROUND};
pub use backend::{Backend, ChatMessage, ChatModel, ChatRequest, HttpChatModel, LlmBackend};
pub use profile::{synthesize_profile, AgentProfile};
pub use scripted::ScriptedAgentParams;

use crate::stance::{self, Stance};
use crate::{seed, Error, PostId, Result};

/// A delivered message as the agent sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedMessage {
    pub post_id: PostId,
    pub author: String,
    pub content: String,
    pub stance: Stance,
    /// Flagged misinformation. Only the scripted policy reads this.
    #[serde(default)]
    pub misinfo: bool,
}

/// Everything the actions-calling prompt needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionContext {
    pub topic: String,
    pub news: Option<String>,
    pub memory_digest: String,
    pub message: Option<FeedMessage>,
    pub followed: bool,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub bundle: ActionBundle,
    /// The backend reply could not be parsed even after the repair prompt.
    pub parse_failed: bool,
    /// Free text the model wrote before its JSON answer. Logged only.
    pub reasoning: Option<String>,
    pub warnings: Vec<String>,
}

/// Runs one decision. Scripted agents need `params`; the outcome is a pure
/// function of the arguments. Backend transport failures are returned as
/// errors so the caller can checkpoint and stop.
pub fn decide(
    agent: &AgentProfile,
    params: Option<&ScriptedAgentParams>,
    ctx: &DecisionContext,
    backend: &Backend,
    rng_seed: u64,
) -> Result<Decision> {
    let mut warnings = Vec::new();
    let (raw_bundle, parse_failed, reasoning) = match backend {
        Backend::Scripted => {
            let params = params.ok_or_else(|| Error::Config(format!("agent {} has no scripted parameters", agent.user_id)))?;
            let signal = ctx.message.as_ref().map(|m| scripted::MessageSignal {
                stance: m.stance,
                followed: ctx.followed,
                sensational: m.misinfo,
            });
            let mut rng = seed::rng(rng_seed, &[]);
            (scripted::scripted_bundle(params, &ctx.topic, signal, ctx.round, &mut rng), false, None)
        }
        Backend::Llm(llm) => llm_decide(agent, ctx, llm, &mut warnings)?,
    };
    let bundle = bind(raw_bundle, agent, ctx.message.as_ref(), &mut warnings);
    Ok(Decision {
        bundle,
        parse_failed,
        reasoning,
        warnings,
    })
}

fn llm_decide(
    agent: &AgentProfile,
    ctx: &DecisionContext,
    llm: &LlmBackend,
    warnings: &mut Vec<String>,
) -> Result<(ActionBundle, bool, Option<String>)> {
    let message = match &ctx.message {
        Some(m) => format!("\"{}\" (posted by {})", m.content, m.author),
        None => "(your feed is empty this round)".to_string(),
    };
    let fields = BTreeMap::from([
        ("profile", agent.to_text()),
        ("topic", ctx.topic.clone()),
        ("news", ctx.news.clone().unwrap_or_else(|| "none".to_string())),
        ("memory_digest", if ctx.memory_digest.is_empty() { "nothing yet".to_string() } else { ctx.memory_digest.clone() }),
        ("message", message),
        ("followed", if ctx.followed { "True" } else { "False" }.to_string()),
    ]);
    let prompt = llm.templates().render(prompt::ACTIONS_CALLING, &fields)?;
    let mut request = llm.request(prompt);
    let raw = llm.complete(&request)?;
    if let Ok(parsed) = parse_actions(&raw, ctx.round) {
        warnings.extend(parsed.warnings);
        return Ok((parsed.bundle, false, reasoning_of(&raw)));
    }
    log::warn!("agent {}: unparseable reply, sending repair prompt", agent.user_id);
    request.messages.push(ChatMessage::new("assistant", raw));
    let repair = llm.templates().render(prompt::REPAIR, &BTreeMap::new())?;
    request.messages.push(ChatMessage::new("user", repair));
    let raw = llm.complete(&request)?;
    match parse_actions(&raw, ctx.round) {
        Ok(parsed) => {
            warnings.extend(parsed.warnings);
            Ok((parsed.bundle, false, reasoning_of(&raw)))
        }
        Err(e) => {
            log::warn!("agent {}: reply still unparseable after repair ({e}); doing nothing", agent.user_id);
            warnings.push(format!("parse failure: {e}"));
            Ok((ActionBundle::idle(ctx.round), true, None))
        }
    }
}

fn reasoning_of(raw: &str) -> Option<String> {
    let head = raw[..raw.find('[').unwrap_or(0)].trim().trim_end_matches("```json").trim();
    if head.is_empty() {
        None
    } else {
        log::debug!("reasoning: {head}");
        Some(head.to_string())
    }
}

/// Points message-dependent actions at the delivered message and its author.
/// Without a message they are dropped; so is any relationship action aimed
/// at the agent itself.
fn bind(bundle: ActionBundle, agent: &AgentProfile, message: Option<&FeedMessage>, warnings: &mut Vec<String>) -> ActionBundle {
    let round = bundle.round;
    let mut out = Vec::with_capacity(bundle.actions.len());
    for mut a in bundle.actions {
        if a.kind.needs_post() {
            match message {
                Some(m) => a.target_post = Some(m.post_id),
                None => {
                    warnings.push(format!("dropped `{}` with no message to act on", a.kind));
                    continue;
                }
            }
        }
        if a.kind.is_relationship() {
            match message {
                Some(m) if m.author != agent.user_id => a.target_user = Some(m.author.clone()),
                _ => {
                    warnings.push(format!("dropped `{}` with no valid target", a.kind));
                    continue;
                }
            }
        }
        if a.kind == ActionKind::Retweet && a.content.as_deref().is_none_or(|c| c.trim().is_empty()) {
            a.content = message.map(|m| m.content.clone());
        }
        if a.is_valid() {
            out.push(a);
        } else {
            warnings.push(format!("dropped invalid `{}`", a.kind));
        }
    }
    ActionBundle::normalized(out, round, warnings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StanceInference {
    pub stance: Stance,
    /// The backend failed and the previous value was carried forward.
    pub fallback: bool,
}

/// Discrete stance for this round. `history` holds the agent's recent
/// action texts, newest last.
pub fn infer_stance(
    agent: &AgentProfile,
    params: Option<&ScriptedAgentParams>,
    topic: &str,
    history: &[String],
    prev: Stance,
    backend: &Backend,
) -> StanceInference {
    match backend {
        Backend::Scripted => match params {
            Some(p) => StanceInference {
                stance: stance::scripted_discrete(p.latent_stance),
                fallback: false,
            },
            None => StanceInference { stance: prev, fallback: true },
        },
        Backend::Llm(llm) => {
            let fields = BTreeMap::from([
                ("profile", agent.to_text()),
                ("topic", topic.to_string()),
                ("history", if history.is_empty() { "(no activity yet)".to_string() } else { history.join("\n") }),
            ]);
            match llm.ask(prompt::STANCE, &fields).map(|r| stance::parse_stance_reply(&r)) {
                Ok(Some(s)) => StanceInference { stance: s, fallback: false },
                Ok(None) => {
                    log::warn!("agent {}: stance reply unparseable, keeping {}", agent.user_id, prev.value());
                    StanceInference { stance: prev, fallback: true }
                }
                Err(e) => {
                    log::warn!("agent {}: stance inference failed ({e}), keeping {}", agent.user_id, prev.value());
                    StanceInference { stance: prev, fallback: true }
                }
            }
        }
    }
}
