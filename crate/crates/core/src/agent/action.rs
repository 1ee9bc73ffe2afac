//! The eight-action vocabulary and tolerant parsing of backend replies.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, PostId, Result};

/// Upper bound on actions an agent takes per decision.
pub const MAX_ACTIONS_PER_ROUND: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Tweet,
    Retweet,
    Reply,
    Like,
    Dislike,
    DoNothing,
    Follow,
    Unfollow,
}

impl ActionKind {
    pub const ALL: [ActionKind; 8] = [
        ActionKind::Tweet,
        ActionKind::Retweet,
        ActionKind::Reply,
        ActionKind::Like,
        ActionKind::Dislike,
        ActionKind::DoNothing,
        ActionKind::Follow,
        ActionKind::Unfollow,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ActionKind::Tweet => "tweet",
            ActionKind::Retweet => "retweet",
            ActionKind::Reply => "reply",
            ActionKind::Like => "like",
            ActionKind::Dislike => "dislike",
            ActionKind::DoNothing => "do_nothing",
            ActionKind::Follow => "follow",
            ActionKind::Unfollow => "unfollow",
        }
    }

    pub fn needs_content(self) -> bool {
        matches!(self, ActionKind::Tweet | ActionKind::Retweet | ActionKind::Reply)
    }

    pub fn needs_post(self) -> bool {
        matches!(
            self,
            ActionKind::Retweet | ActionKind::Reply | ActionKind::Like | ActionKind::Dislike
        )
    }

    pub fn is_relationship(self) -> bool {
        matches!(self, ActionKind::Follow | ActionKind::Unfollow)
    }

    /// Retweets and likes count as taking up a post's message.
    pub fn is_adoption(self) -> bool {
        matches!(self, ActionKind::Retweet | ActionKind::Like)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ActionKind {
    type Err = Error;

    /// Accepts the canonical labels plus a few spellings chat models emit
    /// (`post`, `do nothing`, `do_nothing()`).
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .trim_end_matches("()")
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        Ok(match norm.as_str() {
            "tweet" | "post" => ActionKind::Tweet,
            "retweet" | "repost" => ActionKind::Retweet,
            "reply" | "comment" => ActionKind::Reply,
            "like" => ActionKind::Like,
            "dislike" => ActionKind::Dislike,
            "do_nothing" | "nothing" | "none" => ActionKind::DoNothing,
            "follow" => ActionKind::Follow,
            "unfollow" => ActionKind::Unfollow,
            other => return Err(Error::Parse(format!("unknown action `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    #[serde(rename = "action")]
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_post: Option<PostId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_user: Option<String>,
}

impl Action {
    pub fn new(kind: ActionKind) -> Self {
        Self {
            kind,
            content: None,
            target_post: None,
            target_user: None,
        }
    }

    pub fn do_nothing() -> Self {
        Self::new(ActionKind::DoNothing)
    }

    pub fn with_content(mut self, content: impl Into<String>) -> Self {
        self.content = Some(content.into());
        self
    }

    pub fn on_post(mut self, post: PostId) -> Self {
        self.target_post = Some(post);
        self
    }

    pub fn on_user(mut self, user: impl Into<String>) -> Self {
        self.target_user = Some(user.into());
        self
    }

    /// Field requirements of a fully bound action.
    pub fn is_valid(&self) -> bool {
        let has_content = self.content.as_deref().is_some_and(|c| !c.trim().is_empty());
        match self.kind {
            ActionKind::Tweet => has_content,
            ActionKind::Retweet | ActionKind::Reply => has_content && self.target_post.is_some(),
            ActionKind::Like | ActionKind::Dislike => self.target_post.is_some(),
            ActionKind::Follow | ActionKind::Unfollow => self.target_user.is_some(),
            ActionKind::DoNothing => {
                self.content.is_none() && self.target_post.is_none() && self.target_user.is_none()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionBundle {
    pub actions: Vec<Action>,
    pub round: u32,
}

impl ActionBundle {
    pub fn idle(round: u32) -> Self {
        Self {
            actions: vec![Action::do_nothing()],
            round,
        }
    }

    /// Applies the bundle invariants: drops `do_nothing` when other actions
    /// exist, keeps one relationship action per target, caps the length, and
    /// falls back to a single `do_nothing` when nothing is left.
    pub fn normalized(actions: Vec<Action>, round: u32, warnings: &mut Vec<String>) -> Self {
        let mut seen_targets = BTreeSet::new();
        let mut kept: Vec<Action> = Vec::new();
        let active = actions.iter().any(|a| a.kind != ActionKind::DoNothing);
        for a in actions {
            if a.kind == ActionKind::DoNothing {
                if active || !kept.is_empty() {
                    continue;
                }
                kept.push(Action::do_nothing());
                continue;
            }
            if a.kind.is_relationship() {
                // Unbound targets share one slot: the message sender.
                let key = a.target_user.clone().unwrap_or_default();
                if !seen_targets.insert(key) {
                    warnings.push(format!("dropped duplicate relationship action `{}`", a.kind));
                    continue;
                }
            }
            kept.push(a);
        }
        if kept.len() > MAX_ACTIONS_PER_ROUND {
            warnings.push(format!(
                "truncated {} actions to {MAX_ACTIONS_PER_ROUND}",
                kept.len()
            ));
            kept.truncate(MAX_ACTIONS_PER_ROUND);
        }
        if kept.is_empty() {
            kept.push(Action::do_nothing());
        }
        Self { actions: kept, round }
    }

    pub fn kinds(&self) -> Vec<ActionKind> {
        self.actions.iter().map(|a| a.kind).collect()
    }

    pub fn is_idle(&self) -> bool {
        self.actions.iter().all(|a| a.kind == ActionKind::DoNothing)
    }

    /// The JSON array form accepted by [`parse_actions`].
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.actions).expect("actions serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub bundle: ActionBundle,
    pub warnings: Vec<String>,
}

/// Extracts the first JSON array from `raw` (code fences and surrounding
/// prose are ignored), reads each element as an action, and normalizes the
/// result. Elements with unknown kinds or missing required content are
/// dropped with a warning.
pub fn parse_actions(raw: &str, round: u32) -> Result<Parsed> {
    let array = first_json_array(raw).ok_or_else(|| Error::Parse("no JSON array found".into()))?;
    let mut warnings = Vec::new();
    let mut actions = Vec::new();
    for item in array {
        match action_from_value(&item) {
            Ok(a) => actions.push(a),
            Err(e) => warnings.push(e.to_string()),
        }
    }
    for w in &warnings {
        log::warn!("parse_actions: {w}");
    }
    let bundle = ActionBundle::normalized(actions, round, &mut warnings);
    Ok(Parsed { bundle, warnings })
}

fn action_from_value(v: &Value) -> Result<Action> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse(format!("action entry is not an object: {v}")))?;
    let label = obj
        .get("action")
        .or_else(|| obj.get("type"))
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Parse("action entry without `action` field".into()))?;
    let kind: ActionKind = label.parse()?;
    let content = obj
        .get("content")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    if matches!(kind, ActionKind::Tweet | ActionKind::Reply) && content.is_none() {
        return Err(Error::Parse(format!("`{kind}` without content")));
    }
    let target_post = obj.get("target_post").and_then(Value::as_u64);
    let target_user = obj
        .get("target_user")
        .and_then(Value::as_str)
        .map(str::to_string);
    let mut a = Action::new(kind);
    if kind != ActionKind::DoNothing {
        a.content = content;
        a.target_post = target_post;
        a.target_user = target_user;
    }
    Ok(a)
}

/// Finds and parses the first balanced `[...]` that is valid JSON.
fn first_json_array(raw: &str) -> Option<Vec<Value>> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(off) = raw[start..].find('[') {
        let open = start + off;
        if let Some(close) = matching_bracket(bytes, open) {
            if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(&raw[open..=close]) {
                return Some(items);
            }
        }
        start = open + 1;
    }
    None
}

fn matching_bracket(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'[' => depth += 1,
            b']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_do_nothing() {
        let p = parse_actions(r#"[{"action":"do_nothing"}]"#, 2).unwrap();
        assert_eq!(p.bundle, ActionBundle::idle(2));
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn fenced_reply_with_reasoning() {
        let raw = "Reasoning: the post matches my views.\n```json\n{\n  [\n    {\"action\": \"retweet\", \"content\": \"So true!\"},\n    {\"action\": \"follow\"}\n  ]\n}\n```";
        let p = parse_actions(raw, 0).unwrap();
        assert_eq!(p.bundle.kinds(), vec![ActionKind::Retweet, ActionKind::Follow]);
        assert_eq!(p.bundle.actions[0].content.as_deref(), Some("So true!"));
    }

    #[test]
    fn caps_at_three() {
        let items: Vec<String> = (0..10)
            .map(|i| format!(r#"{{"action":"tweet","content":"t{i}"}}"#))
            .collect();
        let p = parse_actions(&format!("[{}]", items.join(",")), 0).unwrap();
        assert_eq!(p.bundle.actions.len(), 3);
        assert_eq!(p.bundle.actions[2].content.as_deref(), Some("t2"));
        assert!(p.warnings.iter().any(|w| w.contains("truncated")));
    }

    #[test]
    fn unknown_kinds_dropped() {
        let p = parse_actions(r#"[{"action":"teleport"},{"action":"like"}]"#, 0).unwrap();
        assert_eq!(p.bundle.kinds(), vec![ActionKind::Like]);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn no_array_is_error() {
        assert!(matches!(parse_actions("I'd rather not.", 0), Err(Error::Parse(_))));
        assert!(matches!(parse_actions("[not json", 0), Err(Error::Parse(_))));
    }

    #[test]
    fn skips_non_json_brackets() {
        let p = parse_actions(r#"[thinking] then [{"action":"post","content":"hi"}]"#, 0).unwrap();
        assert_eq!(p.bundle.kinds(), vec![ActionKind::Tweet]);
    }

    #[test]
    fn relationship_once_per_target() {
        let p = parse_actions(r#"[{"action":"follow"},{"action":"unfollow"},{"action":"like"}]"#, 0).unwrap();
        assert_eq!(p.bundle.kinds(), vec![ActionKind::Follow, ActionKind::Like]);
    }

    #[test]
    fn empty_array_becomes_idle() {
        assert!(parse_actions("[]", 0).unwrap().bundle.is_idle());
    }

    #[test]
    fn label_aliases() {
        assert_eq!("post".parse::<ActionKind>().unwrap(), ActionKind::Tweet);
        assert_eq!("do_nothing()".parse::<ActionKind>().unwrap(), ActionKind::DoNothing);
        assert_eq!("Do Nothing".parse::<ActionKind>().unwrap(), ActionKind::DoNothing);
    }

    fn valid_action() -> impl Strategy<Value = Action> {
        let text = "[a-zA-Z0-9 ,.!?\"\\\\]{1,30}".prop_filter("non-blank", |s: &String| !s.trim().is_empty())
            .prop_map(|s| s.trim().to_string());
        let user = "u[0-9]{1,4}";
        prop_oneof![
            text.clone().prop_map(|c| Action::new(ActionKind::Tweet).with_content(c)),
            (text.clone(), any::<u32>()).prop_map(|(c, p)| Action::new(ActionKind::Retweet).with_content(c).on_post(p.into())),
            (text, any::<u32>()).prop_map(|(c, p)| Action::new(ActionKind::Reply).with_content(c).on_post(p.into())),
            any::<u32>().prop_map(|p| Action::new(ActionKind::Like).on_post(p.into())),
            any::<u32>().prop_map(|p| Action::new(ActionKind::Dislike).on_post(p.into())),
            user.prop_map(|u| Action::new(ActionKind::Follow).on_user(u)),
        ]
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(actions in proptest::collection::vec(valid_action(), 1..=3)) {
            let mut w = Vec::new();
            let bundle = ActionBundle::normalized(actions, 5, &mut w);
            prop_assume!(w.is_empty());
            prop_assert!(bundle.actions.iter().all(Action::is_valid));
            let parsed = parse_actions(&bundle.to_json(), 5).unwrap();
            prop_assert_eq!(parsed.bundle, bundle);
        }
    }
}
