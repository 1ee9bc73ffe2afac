//! Prompt templates: plain text with `{placeholder}` markers.
//!
//! Only identifier-shaped braces (`{topic}`, `{memory_digest}`) are
//! placeholders, so JSON examples inside a template pass through untouched.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

pub const PROFILE_SYNTHESIS: &str = "profile_synthesis";
pub const SHORT_MEMORY: &str = "short_memory";
pub const LONG_MEMORY: &str = "long_memory";
pub const ACTIONS_CALLING: &str = "actions_calling";
pub const STANCE: &str = "stance";
pub const REPAIR: &str = "repair";

const BUILTIN: [(&str, &str); 6] = [
    (PROFILE_SYNTHESIS, include_str!("../../templates/profile_synthesis.txt")),
    (SHORT_MEMORY, include_str!("../../templates/short_memory.txt")),
    (LONG_MEMORY, include_str!("../../templates/long_memory.txt")),
    (ACTIONS_CALLING, include_str!("../../templates/actions_calling.txt")),
    (STANCE, include_str!("../../templates/stance.txt")),
    (REPAIR, include_str!("../../templates/repair.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateStore {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateStore {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateStore {
    /// The templates shipped in `templates/`, compiled in.
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    /// Starts from the builtin set and overrides it with every `*.txt` in
    /// `dir`; the file stem is the template id.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut store = Self::builtin();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        for p in paths {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                store.insert(stem, std::fs::read_to_string(&p)?);
            }
        }
        Ok(store)
    }

    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) {
        self.templates.insert(id.into(), text.into());
    }

    pub fn get(&self, id: &str) -> Result<&str> {
        self.templates
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn render(&self, id: &str, fields: &BTreeMap<&str, String>) -> Result<String> {
        render_template(id, self.get(id)?, fields)
    }
}

/// Substitutes every `{name}` in `text`. Unused fields are ignored; a
/// placeholder without a field is an error naming it.
pub fn render_template(id: &str, text: &str, fields: &BTreeMap<&str, String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match placeholder_at(after) {
            Some(name) => {
                let value = fields.get(name).ok_or_else(|| Error::MissingPlaceholder {
                    template: id.to_string(),
                    placeholder: name.to_string(),
                })?;
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Placeholder names present in a template, in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        if let Some(name) = placeholder_at(after) {
            if !names.iter().any(|n| n == name) {
                names.push(name.to_string());
            }
        }
        rest = after;
    }
    names
}

fn placeholder_at(s: &str) -> Option<&str> {
    let close = s.find('}')?;
    let name = &s[..close];
    let mut chars = name.chars();
    let first = chars.next()?;
    if (first.is_ascii_lowercase() || first == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
    {
        Some(name)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn no_placeholders_verbatim() {
        let text = "Plain text with {\"json\": 1} braces.";
        assert_eq!(render_template("t", text, &BTreeMap::new()).unwrap(), text);
    }

    #[test]
    fn missing_placeholder_named() {
        let err = render_template("t", "Hi {name}", &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::MissingPlaceholder { ref placeholder, .. } if placeholder == "name"));
    }

    #[test]
    fn unknown_template() {
        assert!(matches!(
            TemplateStore::builtin().render("nope", &BTreeMap::new()),
            Err(Error::UnknownTemplate(_))
        ));
    }

    #[test]
    fn actions_calling_contains_fields() {
        let store = TemplateStore::builtin();
        let f = fields(&[
            ("profile", "PROFILE-X"),
            ("topic", "TOPIC-X"),
            ("news", "NEWS-X"),
            ("memory_digest", "MEMORY-X"),
            ("message", "MESSAGE-X"),
            ("followed", "True"),
        ]);
        let out = store.render(ACTIONS_CALLING, &f).unwrap();
        for v in ["TOPIC-X", "NEWS-X", "MEMORY-X", "MESSAGE-X"] {
            assert!(out.contains(v), "{v} missing");
        }
        assert!(!out.contains("{topic}"));
    }

    #[test]
    fn builtin_templates_declare_expected_fields() {
        let store = TemplateStore::builtin();
        let expect: [(&str, &[&str]); 5] = [
            (PROFILE_SYNTHESIS, &["agent_id", "user_info", "tweets"]),
            (SHORT_MEMORY, &["profile", "message", "memory"]),
            (LONG_MEMORY, &["profile", "message", "short_memory"]),
            (ACTIONS_CALLING, &["profile", "topic", "news", "memory_digest", "message", "followed"]),
            (STANCE, &["profile", "topic", "history"]),
        ];
        for (id, names) in expect {
            let mut got = placeholders(store.get(id).unwrap());
            got.sort();
            let mut want: Vec<String> = names.iter().map(|s| s.to_string()).collect();
            want.sort();
            assert_eq!(got, want, "{id}");
        }
    }

    #[test]
    fn dir_overrides_builtin() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("stance.txt"), "custom {topic}").unwrap();
        std::fs::write(dir.path().join("extra.txt"), "x").unwrap();
        let store = TemplateStore::from_dir(dir.path()).unwrap();
        assert_eq!(store.get(STANCE).unwrap(), "custom {topic}");
        assert_eq!(store.get("extra").unwrap(), "x");
        assert!(store.get(ACTIONS_CALLING).is_ok());
    }
}
