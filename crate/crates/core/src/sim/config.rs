//! Run configuration, read from TOML.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bandit::BanditConfig;
use crate::http::RetryPolicy;
use crate::intervention::FeedConfig;
use crate::stance::{check_alpha, Stance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    None,
    CrossView,
    Misinfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub round: u32,
    pub text: String,
    /// Stance of the news toward the topic, -1, 0 or 1.
    #[serde(default = "neutral")]
    pub stance: Stance,
}

fn neutral() -> Stance {
    Stance::Neutral
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSource {
    #[default]
    Synthetic,
    Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub source: PopulationSource,
    /// Directory of metadata files when `source = "metadata"`.
    pub metadata_dir: Option<PathBuf>,
    /// Initial latent stances are uniform in `[-spread, spread]`.
    pub latent_spread: f64,
    /// Expected number of accounts each synthetic user follows.
    pub mean_following: f64,
    /// Follow probability multiplier for same-stance pairs; opposite pairs
    /// get its reciprocal.
    pub homophily_bias: f64,
    /// Historical posts generated per synthetic user.
    pub history_posts: usize,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            source: PopulationSource::Synthetic,
            metadata_dir: None,
            latent_spread: 0.6,
            mean_following: 6.0,
            homophily_bias: 2.0,
            history_posts: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry: RetryPolicy,
    /// Directory whose `*.txt` files override the builtin templates.
    pub templates_dir: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: None,
            temperature: 0.7,
            max_tokens: 512,
            retry: RetryPolicy::default(),
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Hash,
            dim: 64,
            url: "http://127.0.0.1:8000/v1/embeddings".into(),
            model: "default".into(),
            api_key_env: None,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToxicityKind {
    #[default]
    Lexicon,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToxicityConfig {
    pub kind: ToxicityKind,
    pub url: String,
    pub api_key_env: Option<String>,
    pub retry: RetryPolicy,
}

impl Default for ToxicityConfig {
    fn default() -> Self {
        Self {
            kind: ToxicityKind::Lexicon,
            url: "http://127.0.0.1:8000/score".into(),
            api_key_env: None,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExposureConfig {
    /// Probability for authors without an override.
    pub default: f64,
    pub overrides: BTreeMap<String, f64>,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        Self {
            default: 1.0,
            overrides: BTreeMap::new(),
        }
    }
}

pub const DEFAULT_TOPIC: &str = "a proposed national gun registry";
pub const DEFAULT_MISINFO: &str =
    "BREAKING: insiders say the new gun registry database was already handed to foreign hackers #wakeup #registry";
pub const DEFAULT_CORRECTIVE: &str =
    "Fact check: there is no evidence the registry database was leaked, the claim traces back to a parody account";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: u32,
    pub agents: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub hops: usize,
    pub mu: f64,
    pub topic: String,
    pub objective: Objective,
    pub misinfo_fraction: f64,
    pub misinfo_message: String,
    pub misinfo_stance: Stance,
    pub corrective_fraction: f64,
    pub corrective_message: String,
    /// Rounds an adoption of a misinformation post keeps a user misinformed.
    pub misinfo_window: u32,
    pub memory_capacity: usize,
    pub memory_samples: usize,
    pub max_concurrency: usize,
    pub checkpoint_every: u32,
    pub feed: FeedConfig,
    pub exposure: ExposureConfig,
    pub bandit: BanditConfig,
    pub population: PopulationConfig,
    pub backend: BackendConfig,
    pub embedding: EmbeddingConfig,
    pub toxicity: ToxicityConfig,
    pub news: Vec<NewsItem>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 10,
            agents: 50,
            alpha: 0.8,
            lambda: 1.0,
            gamma: 0.5,
            hops: 1,
            mu: 4.0,
            topic: DEFAULT_TOPIC.into(),
            objective: Objective::None,
            misinfo_fraction: 0.0,
            misinfo_message: DEFAULT_MISINFO.into(),
            misinfo_stance: Stance::Negative,
            corrective_fraction: 0.0,
            corrective_message: DEFAULT_CORRECTIVE.into(),
            misinfo_window: 3,
            memory_capacity: crate::memory::DEFAULT_CAPACITY,
            memory_samples: crate::memory::DEFAULT_SAMPLES,
            max_concurrency: 8,
            checkpoint_every: 10,
            feed: FeedConfig::default(),
            exposure: ExposureConfig::default(),
            bandit: BanditConfig::default(),
            population: PopulationConfig::default(),
            backend: BackendConfig::default(),
            embedding: EmbeddingConfig::default(),
            toxicity: ToxicityConfig::default(),
            news: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        let bad = |m: String| Err(Error::Config(m));
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0,1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.misinfo_fraction) || !(0.0..=1.0).contains(&self.corrective_fraction) {
            return bad("seeding fractions must lie in [0,1]".into());
        }
        if self.misinfo_fraction + self.corrective_fraction > 1.0 {
            return bad("misinformation and corrective fractions exceed the population".into());
        }
        if self.mu.is_nan() || self.mu < 0.0 {
            return bad(format!("mu must be non-negative, got {}", self.mu));
        }
        if !(0.0..=1.0).contains(&self.exposure.default) || self.exposure.overrides.values().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("exposure probabilities must lie in [0,1]".into());
        }
        if self.memory_capacity == 0 || self.memory_samples == 0 {
            return bad("memory capacity and sample count must be positive".into());
        }
        if self.embedding.dim == 0 {
            return bad("embedding dimension must be positive".into());
        }
        if self.bandit.budget == 0 || self.bandit.hidden == 0 {
            return bad("bandit budget and hidden size must be positive".into());
        }
        if self.population.source == PopulationSource::Metadata && self.population.metadata_dir.is_none() {
            return bad("population.metadata_dir is required for metadata populations".into());
        }
        if self.misinfo_window == 0 {
            return bad("misinfo_window must be at least 1".into());
        }
        self.feed.validate()
    }

    /// News scheduled for `round`, in config order.
    pub fn news_at(&self, round: u32) -> Vec<&NewsItem> {
        self.news.iter().filter(|n| n.round == round).collect()
    }
}
