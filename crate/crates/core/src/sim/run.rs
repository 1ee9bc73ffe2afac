//! The round loop.
//!
//! Each round has a read-only decision phase, where every delivered message
//! gets one `decide` call (concurrently when the `parallel` feature is on),
//! followed by a serial barrier that applies all actions in agent-id order.
//! Every state change is emitted as an event and mirrored into the
//! [`Tracker`], which produces the round's metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use rand::seq::SliceRandom;

use super::config::{BackendKind, EmbeddingKind, NewsItem, Objective, RunConfig, ToxicityKind};
use super::events::{Channel, Event, EventRecord, PostSource, RoundMetrics, Tracker, SCHEMA_VERSION};
use super::population;
use crate::agent::prompt::TemplateStore;
use crate::agent::{decide, infer_stance, ActionKind, AgentProfile, Backend, Decision, DecisionContext, FeedMessage, HttpChatModel, LlmBackend, ScriptedAgentParams};
use crate::bandit::{
    build_candidates, exposure_context, recommend_context, reward_cross_view, reward_misinfo_group, select_arms, select_random, user_contexts, Arm,
    ArmKind, NeuralBandit, PolicyKind, EXPOSURE_LEVELS,
};
use crate::embed::{HashEmbedder, RemoteEmbedder, SharedEmbedder};
use crate::graph::{PropagationConfig, RelationKind, SocialGraph};
use crate::intervention::{compose_feed, exposure_filter, headline_feed, personalized_feed, relational_feed, Engagement, ExposureTable, Post};
use crate::memory::{consolidate_long_term, encode_short_term, MemoryPool};
use crate::stance::{Stance, StanceTrace};
use crate::toxicity::ToxicityScorer;
use crate::{seed, Error, NodeIdx, PostId, Result};

/// Own-action lines kept for stance inference.
const HISTORY_LEN: usize = 10;

/// Backends a run talks to. None of them is part of the persisted state.
pub struct Services {
    pub backend: Backend,
    pub embedder: SharedEmbedder,
    pub scorer: ToxicityScorer,
}

impl Services {
    /// Scripted agents, hash embeddings and the lexicon scorer.
    pub fn offline(cfg: &RunConfig) -> Self {
        Self {
            backend: Backend::Scripted,
            embedder: Arc::new(HashEmbedder::new(cfg.embedding.dim, 0)),
            scorer: ToxicityScorer::Lexicon,
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let key = |var: &Option<String>| var.as_ref().and_then(|v| std::env::var(v).ok());
        let backend = match cfg.backend.kind {
            BackendKind::Scripted => Backend::Scripted,
            BackendKind::Llm => {
                let b = &cfg.backend;
                let model = HttpChatModel::new(&b.url, &b.model, b.retry, key(&b.api_key_env))?;
                let templates = match &b.templates_dir {
                    Some(dir) => TemplateStore::from_dir(dir)?,
                    None => TemplateStore::builtin(),
                };
                let mut llm = LlmBackend::new(Arc::new(model), templates);
                llm.temperature = b.temperature;
                llm.max_tokens = b.max_tokens;
                Backend::Llm(Arc::new(llm))
            }
        };
        let e = &cfg.embedding;
        let embedder: SharedEmbedder = match e.kind {
            EmbeddingKind::Hash => Arc::new(HashEmbedder::new(e.dim, 0)),
            EmbeddingKind::Remote => Arc::new(RemoteEmbedder::new(&e.url, &e.model, e.dim, e.retry, key(&e.api_key_env))?),
        };
        let t = &cfg.toxicity;
        let scorer = match t.kind {
            ToxicityKind::Lexicon => ToxicityScorer::Lexicon,
            ToxicityKind::Remote => ToxicityScorer::remote(&t.url, t.retry, key(&t.api_key_env))?,
        };
        Ok(Self { backend, embedder, scorer })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub profile: AgentProfile,
    pub params: Option<ScriptedAgentParams>,
    pub trace: StanceTrace,
    pub memory: MemoryPool,
    pub history: Vec<String>,
}

impl AgentState {
    fn remember(&mut self, line: String) {
        self.history.push(line);
        if self.history.len() > HISTORY_LEN {
            self.history.remove(0);
        }
    }
}

/// Seeded accounts keep posting their assigned message whenever they tweet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Ordinary,
    Misinfo,
    Corrective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingArm {
    pub id: u64,
    pub arm: Arm,
}

/// Everything needed to continue a run, apart from the services.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Last completed round.
    pub round: u32,
    pub graph: SocialGraph,
    pub agents: Vec<AgentState>,
    pub roles: Vec<Role>,
    /// Indexed by post id.
    pub posts: Vec<Post>,
    pub exposure: ExposureTable,
    pub contexts: Vec<Vec<f64>>,
    pub digests: Vec<String>,
    pub bandit: Option<NeuralBandit>,
    /// Arms chosen last round, rewarded from this round's reactions.
    pub pending: Vec<PendingArm>,
    pub recommended: BTreeSet<PostId>,
    pub mis_prev: Vec<bool>,
    pub tracker: Tracker,
    pub metrics: Vec<RoundMetrics>,
    pub next_seq: u64,
    pub next_arm: u64,
    #[serde(skip)]
    buffer: Vec<EventRecord>,
}

impl SimState {
    fn emit(&mut self, round: u32, event: Event) -> Result<()> {
        let rec = EventRecord {
            v: SCHEMA_VERSION,
            seq: self.next_seq,
            round,
            event,
        };
        self.next_seq += 1;
        self.tracker.apply(&rec)?;
        self.buffer.push(rec);
        Ok(())
    }

    fn id(&self, i: NodeIdx) -> String {
        self.graph.id(i).to_string()
    }

    /// Posts with `lo <= round < hi`.
    fn posts_between(&self, lo: u32, hi: u32) -> &[Post] {
        let a = self.posts.partition_point(|p| p.round < lo);
        let b = self.posts.partition_point(|p| p.round < hi);
        &self.posts[a..b]
    }

    #[allow(clippy::too_many_arguments)]
    fn add_post(
        &mut self,
        embedder: &SharedEmbedder,
        round: u32,
        author: NodeIdx,
        content: String,
        stance: Stance,
        (misinfo, corrective): (bool, bool),
        parent: Option<PostId>,
        source: PostSource,
    ) -> Result<PostId> {
        let id = self.posts.len() as PostId;
        let embedding = embedder.embed(&content)?;
        self.emit(
            round,
            Event::Post {
                post_id: id,
                author: self.id(author),
                content: content.clone(),
                stance,
                misinfo,
                corrective,
                parent,
                source,
            },
        )?;
        self.posts.push(Post {
            id,
            author,
            content,
            round,
            stance,
            misinfo,
            corrective,
            parent,
            engagement: Engagement::default(),
            embedding,
        });
        Ok(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Delivery {
    post: PostId,
    channel: Channel,
}

pub struct Simulation {
    cfg: RunConfig,
    services: Services,
    state: SimState,
    /// False once a round has started mutating state.
    clean: bool,
    pool: Pool,
}

fn par_map<T, F>(sim_pool: &Pool, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        sim_pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = sim_pool;
        (0..n).map(f).collect()
    }
}

#[cfg(feature = "parallel")]
type Pool = rayon::ThreadPool;
/// Stand-in when built without rayon: everything runs on the caller.
#[cfg(not(feature = "parallel"))]
struct Pool;

fn make_pool(threads: usize) -> Result<Pool> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(Pool)
    }
}

impl Simulation {
    /// Builds the population and runs round 0: initial stances, follow
    /// edges, historical and seeded posts, memories, and the first arm
    /// selection.
    pub fn new(cfg: RunConfig, services: Services) -> Result<Self> {
        cfg.validate()?;
        if cfg.objective == Objective::Misinfo && cfg.embedding.dim < 2 + EXPOSURE_LEVELS.len() {
            return Err(Error::Config("exposure arms need an embedding dimension of at least 7".into()));
        }
        let pop = population::build(&cfg, &services.backend)?;
        let n = pop.profiles.len();
        if n == 0 {
            return Err(Error::Config("population is empty".into()));
        }
        let mut state = SimState {
            round: 0,
            graph: pop.graph,
            agents: Vec::with_capacity(n),
            roles: vec![Role::Ordinary; n],
            posts: Vec::new(),
            exposure: ExposureTable::new(n),
            contexts: Vec::new(),
            digests: vec![String::new(); n],
            bandit: None,
            pending: Vec::new(),
            recommended: BTreeSet::new(),
            mis_prev: vec![false; n],
            tracker: Tracker::new(cfg.misinfo_window),
            metrics: Vec::new(),
            next_seq: 0,
            next_arm: 0,
            buffer: Vec::new(),
        };
        let mut history_by_author: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for h in &pop.history {
            history_by_author.entry(h.author.clone()).or_default().push(h.content.clone());
        }
        for (i, (profile, params)) in pop.profiles.into_iter().zip(pop.params).enumerate() {
            let s0 = match (&services.backend, &params) {
                (Backend::Scripted, Some(p)) => p.stance(),
                _ => {
                    let tweets = history_by_author.get(&profile.user_id).cloned().unwrap_or_default();
                    infer_stance(&profile, params.as_ref(), &cfg.topic, &tweets, Stance::Neutral, &services.backend).stance
                }
            };
            state.emit(
                0,
                Event::StanceUpdate {
                    user: state.id(i),
                    discrete: s0,
                    smoothed: s0.as_f64(),
                    alpha: cfg.alpha,
                    fallback: false,
                },
            )?;
            state.agents.push(AgentState {
                profile,
                params,
                trace: StanceTrace::start(s0, cfg.alpha)?,
                memory: MemoryPool::new(cfg.memory_capacity),
                history: Vec::new(),
            });
        }
        for (a, b) in state.graph.edges() {
            let (actor, target) = (state.id(a), state.id(b));
            state.emit(0, Event::Follow { actor, target })?;
        }
        for i in 0..n {
            let p = cfg.exposure.overrides.get(state.graph.id(i)).copied().unwrap_or(cfg.exposure.default);
            if p != 1.0 {
                state.exposure.set(i, p)?;
                let author = state.id(i);
                state.emit(
                    0,
                    Event::ExposureChange {
                        arm_id: None,
                        author,
                        level: p,
                        previous: 1.0,
                        score: None,
                    },
                )?;
            }
        }
        for id in cfg.exposure.overrides.keys() {
            state.graph.index_of(id)?;
        }

        let mut own: Vec<Vec<String>> = vec![Vec::new(); n];
        for h in &pop.history {
            let author = state.graph.index_of(&h.author)?;
            let stance = state.agents[author].trace.last();
            state.add_post(&services.embedder, 0, author, h.content.clone(), stance, (false, false), None, PostSource::History)?;
            own[author].push(format!("I posted: {}", h.content));
        }
        let mut order: Vec<NodeIdx> = (0..n).collect();
        {
            order.shuffle(&mut seed::rng(cfg.seed, &[seed::site::SEEDING]));
        }
        let n_mis = (cfg.misinfo_fraction * n as f64).round() as usize;
        let n_cor = ((cfg.corrective_fraction * n as f64).round() as usize).min(n - n_mis);
        let mut seeded: Vec<(NodeIdx, bool)> = order[..n_mis]
            .iter()
            .map(|&i| (i, true))
            .chain(order[n_mis..n_mis + n_cor].iter().map(|&i| (i, false)))
            .collect();
        seeded.sort_unstable();
        for (i, misinfo) in seeded {
            state.roles[i] = if misinfo { Role::Misinfo } else { Role::Corrective };
        }
        for (i, text) in post_seeded(&cfg, &services, &mut state, 0)? {
            own[i].push(format!("I posted: {text}"));
        }
        for (i, lines) in own.iter().enumerate() {
            if let Some(last) = lines.last() {
                state.agents[i].remember(last.clone());
            }
        }

        let pool = make_pool(cfg.max_concurrency)?;
        update_memories(&cfg, &services, &pool, &mut state.agents, &own, 0)?;
        refresh_contexts(&cfg, &services, &mut state, 0)?;
        if cfg.objective != Objective::None && cfg.bandit.policy == PolicyKind::Ee {
            state.bandit = Some(NeuralBandit::new(2 * cfg.embedding.dim, cfg.bandit.hidden, cfg.bandit.lr, cfg.seed));
        }
        select_new_arms(&cfg, &pool, &mut state, 0)?;
        state.mis_prev = state.tracker.mis_flags(0);
        Ok(Self {
            cfg,
            services,
            state,
            clean: true,
            pool,
        })
    }

    /// Continues from a saved state.
    pub fn resume(cfg: RunConfig, services: Services, state: SimState) -> Result<Self> {
        cfg.validate()?;
        let pool = make_pool(cfg.max_concurrency)?;
        Ok(Self {
            cfg,
            services,
            state,
            clean: true,
            pool,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn into_state(self) -> SimState {
        self.state
    }

    pub fn round(&self) -> u32 {
        self.state.round
    }

    pub fn finished(&self) -> bool {
        self.state.round >= self.cfg.rounds
    }

    /// True when the last failed step left the state at the previous round.
    pub fn is_clean(&self) -> bool {
        self.clean
    }

    /// Events emitted since the last call.
    pub fn drain_events(&mut self) -> Vec<EventRecord> {
        std::mem::take(&mut self.state.buffer)
    }

    fn pool(&self) -> &Pool {
        &self.pool
    }

    fn feeds(&self, t: u32) -> Vec<Vec<Delivery>> {
        let st = &self.state;
        let fc = &self.cfg.feed;
        let n = st.agents.len();
        let prev = st.posts_between(t - 1, t);
        let window: Vec<&Post> = st.posts_between(t.saturating_sub(fc.headline_window), t).iter().collect();
        let headline = headline_feed(&st.posts, t, fc.headline_window, usize::MAX);
        let mut recs: BTreeMap<NodeIdx, Vec<PostId>> = BTreeMap::new();
        for pa in &st.pending {
            if pa.arm.kind == ArmKind::Recommend {
                recs.entry(pa.arm.user).or_default().push(pa.arm.payload);
            }
        }
        (0..n)
            .map(|i| {
                let pass = |p: &&Post| p.author != i && exposure_filter(st.exposure.get(p.author), self.cfg.seed, t, p.id, i);
                let take = |v: Vec<&'_ Post>, q: usize| -> Vec<PostId> { v.into_iter().filter(pass).take(q).map(|p| p.id).collect() };
                let rel = take(relational_feed(&st.graph, prev, i, usize::MAX, seed::derive(self.cfg.seed, &[u64::from(t)])), fc.quota_relational);
                let others: Vec<&Post> = window.iter().copied().filter(|p| p.author != i).collect();
                let pers = take(personalized_feed(&st.contexts[i], &others, others.len()), fc.quota_personalized);
                let head = take(headline.clone(), fc.quota_headline);
                let lookup = |ids: Vec<PostId>| ids.into_iter().map(|id| &st.posts[id as usize]).collect::<Vec<_>>();
                let composed = compose_feed(&[lookup(rel.clone()), lookup(pers.clone()), lookup(head)], fc);
                let mut out: Vec<Delivery> = composed
                    .into_iter()
                    .map(|p| Delivery {
                        post: p.id,
                        channel: if rel.contains(&p.id) {
                            Channel::Relational
                        } else if pers.contains(&p.id) {
                            Channel::Personalized
                        } else {
                            Channel::Headline
                        },
                    })
                    .collect();
                for &post in recs.get(&i).into_iter().flatten() {
                    if !out.iter().any(|d| d.post == post) {
                        out.push(Delivery {
                            post,
                            channel: Channel::Recommendation,
                        });
                    }
                }
                out
            })
            .collect()
    }

    fn decisions(&self, t: u32, feeds: &[Vec<Delivery>], news: &Option<String>) -> Result<Vec<Vec<Decision>>> {
        let st = &self.state;
        let cfg = &self.cfg;
        let results = par_map(self.pool(), feeds.len(), |i| -> Result<Vec<Decision>> {
            let agent = &st.agents[i];
            let base = DecisionContext {
                topic: cfg.topic.clone(),
                news: news.clone(),
                memory_digest: st.digests[i].clone(),
                message: None,
                followed: false,
                round: t,
            };
            let seed_for = |k: usize| seed::derive(cfg.seed, &[seed::site::DECIDE, u64::from(t), i as u64, k as u64]);
            if feeds[i].is_empty() {
                return Ok(vec![decide(&agent.profile, agent.params.as_ref(), &base, &self.services.backend, seed_for(0))?]);
            }
            feeds[i]
                .iter()
                .enumerate()
                .map(|(k, d)| {
                    let p = &st.posts[d.post as usize];
                    let ctx = DecisionContext {
                        message: Some(FeedMessage {
                            post_id: p.id,
                            author: st.id(p.author),
                            content: p.content.clone(),
                            stance: p.stance,
                            misinfo: p.misinfo,
                        }),
                        followed: st.graph.has_edge(i, p.author),
                        ..base.clone()
                    };
                    decide(&agent.profile, agent.params.as_ref(), &ctx, &self.services.backend, seed_for(k))
                })
                .collect()
        });
        results.into_iter().collect()
    }

    /// Runs the next round and returns its metrics.
    pub fn step(&mut self) -> Result<RoundMetrics> {
        if self.finished() {
            return Err(Error::Config(format!("run already finished at round {}", self.state.round)));
        }
        let t = self.state.round + 1;
        let news_items: Vec<NewsItem> = self.cfg.news_at(t).into_iter().cloned().collect();
        let news = if news_items.is_empty() {
            None
        } else {
            Some(news_items.iter().map(|n| n.text.as_str()).collect::<Vec<_>>().join("\n"))
        };
        let feeds = self.feeds(t);
        let decisions = self.decisions(t, &feeds, &news)?;

        self.clean = false;
        let cfg = &self.cfg;
        let services = &self.services;
        let st = &mut self.state;
        st.graph.set_round(t);
        for item in &news_items {
            st.emit(
                t,
                Event::NewsInjection {
                    text: item.text.clone(),
                    stance: item.stance,
                },
            )?;
        }

        let n = st.agents.len();
        let mut outcomes: BTreeMap<(NodeIdx, PostId), (f64, f64)> = BTreeMap::new();
        let mut contents: Vec<Vec<String>> = vec![Vec::new(); n];
        for (i, text) in post_seeded(cfg, &self.services, st, t)? {
            contents[i].push(format!("I posted: {text}"));
        }
        let mut relation_done: BTreeSet<(NodeIdx, NodeIdx)> = BTreeSet::new();
        for (i, (feed, decs)) in feeds.iter().zip(decisions).enumerate() {
            for d in feed {
                let p = &st.posts[d.post as usize];
                contents[i].push(format!("{}: {}", st.graph.id(p.author), p.content));
            }
            for (k, dec) in decs.into_iter().enumerate() {
                let delivery = feed.get(k).copied();
                let mut bundle_h = 0.0f64;
                let mut bundle_tau = 0.0f64;
                for action in dec.bundle.actions {
                    let kind = action.kind;
                    let target = action.target_post.filter(|_| kind.needs_post());
                    let mut toxicity = None;
                    let mut fallback = false;
                    if let Some(text) = action.content.as_deref().filter(|_| kind.needs_content()) {
                        let s = services.scorer.score(text);
                        toxicity = Some(s.value);
                        fallback = s.fallback;
                        bundle_tau = bundle_tau.max(s.value);
                    }
                    bundle_h = bundle_h.max(cfg.bandit.engagement.h(kind));
                    let sender = match (kind.is_relationship(), &action.target_user, target) {
                        (true, Some(u), _) => Some(u.clone()),
                        (false, _, Some(p)) => Some(st.id(st.posts[p as usize].author)),
                        _ => None,
                    };
                    st.emit(
                        t,
                        Event::Reaction {
                            actor: st.id(i),
                            action: kind,
                            post_id: target,
                            sender: sender.clone(),
                            channel: delivery.map(|d| d.channel),
                            content: action.content.clone().filter(|_| kind.needs_content()),
                            toxicity,
                            toxicity_fallback: fallback,
                            parse_failed: dec.parse_failed,
                        },
                    )?;
                    match kind {
                        ActionKind::Tweet => {
                            let text = action.content.clone().unwrap_or_default();
                            let stance = st.agents[i].trace.last();
                            st.add_post(&services.embedder, t, i, text.clone(), stance, (false, false), None, PostSource::Action)?;
                            contents[i].push(format!("I posted: {text}"));
                            st.agents[i].remember(format!("posted: {text}"));
                        }
                        ActionKind::Retweet | ActionKind::Reply | ActionKind::Like | ActionKind::Dislike => {
                            let Some(pid) = target else { continue };
                            let parent = st.posts[pid as usize].clone();
                            let eng = &mut st.posts[pid as usize].engagement;
                            match kind {
                                ActionKind::Retweet => eng.retweets += 1,
                                ActionKind::Reply => eng.replies += 1,
                                ActionKind::Like => eng.likes += 1,
                                _ => eng.dislikes += 1,
                            }
                            if kind.is_adoption() {
                                if let Some(p) = st.agents[i].params.as_mut() {
                                    p.absorb_adoption(parent.stance);
                                }
                            }
                            let verb = match kind {
                                ActionKind::Retweet => "retweeted",
                                ActionKind::Reply => "replied to",
                                ActionKind::Like => "liked",
                                _ => "disliked",
                            };
                            match kind {
                                ActionKind::Retweet => {
                                    st.add_post(
                                        &services.embedder,
                                        t,
                                        i,
                                        parent.content.clone(),
                                        parent.stance,
                                        (parent.misinfo, parent.corrective),
                                        Some(pid),
                                        PostSource::Action,
                                    )?;
                                    contents[i].push(format!("I retweeted: {}", parent.content));
                                }
                                ActionKind::Reply => {
                                    let text = action.content.clone().unwrap_or_default();
                                    let stance = st.agents[i].trace.last();
                                    st.add_post(&services.embedder, t, i, text.clone(), stance, (false, false), Some(pid), PostSource::Action)?;
                                    contents[i].push(format!("I replied: {text}"));
                                }
                                _ => {}
                            }
                            st.agents[i].remember(format!("{verb}: {}", parent.content));
                        }
                        ActionKind::Follow | ActionKind::Unfollow => {
                            let Some(who) = action.target_user.as_deref() else { continue };
                            let j = st.graph.index_of(who)?;
                            if !relation_done.insert((i, j)) {
                                continue;
                            }
                            let rel = if kind == ActionKind::Follow { RelationKind::Follow } else { RelationKind::Unfollow };
                            if st.graph.apply_by_index(i, j, rel)? {
                                let (actor, target) = (st.id(i), who.to_string());
                                st.emit(
                                    t,
                                    if kind == ActionKind::Follow {
                                        Event::Follow { actor, target }
                                    } else {
                                        Event::Unfollow { actor, target }
                                    },
                                )?;
                            }
                            st.agents[i].remember(format!("{}ed {who}", kind.label()));
                        }
                        ActionKind::DoNothing => {}
                    }
                }
                if let Some(d) = delivery {
                    let e = outcomes.entry((i, d.post)).or_insert((0.0, 0.0));
                    e.0 = e.0.max(bundle_h);
                    e.1 = e.1.max(bundle_tau);
                }
            }
        }

        // Rewards for last round's arms, then the bandit update.
        let mis_now = st.tracker.mis_flags(t);
        let pending = std::mem::take(&mut st.pending);
        let mut observed = Vec::with_capacity(pending.len());
        for pa in pending {
            let u = pa.arm.user;
            let value = match pa.arm.kind {
                ArmKind::Recommend => {
                    let post = &st.posts[pa.arm.payload as usize];
                    let (h, tau) = outcomes.get(&(u, post.id)).copied().unwrap_or((0.0, 0.0));
                    reward_cross_view(st.agents[post.author].trace.smoothed(), st.agents[u].trace.smoothed(), h, tau, cfg.mu)
                }
                ArmKind::Exposure => {
                    let mut group = st.graph.followers(u);
                    if group.is_empty() {
                        group.push(u);
                    }
                    let prev: Vec<bool> = group.iter().map(|&f| st.mis_prev[f]).collect();
                    let now: Vec<bool> = group.iter().map(|&f| mis_now[f]).collect();
                    reward_misinfo_group(&prev, &now)
                }
            };
            st.emit(t, Event::Reward { arm_id: pa.id, value })?;
            observed.push((pa.arm.context, value));
        }
        if let Some(b) = st.bandit.as_mut() {
            for (x, r) in &observed {
                b.observe(x, *r)?;
            }
        }

        let pool = &self.pool;
        update_memories(cfg, services, pool, &mut st.agents, &contents, t)?;

        for a in st.agents.iter_mut() {
            if let Some(p) = a.params.as_mut() {
                for item in &news_items {
                    p.absorb_news(item.stance);
                }
                p.polarize();
            }
        }
        let inferred = {
            let agents = &st.agents;
            par_map(pool, n, |i| {
                let a = &agents[i];
                infer_stance(&a.profile, a.params.as_ref(), &cfg.topic, &a.history, a.trace.last(), &services.backend)
            })
        };
        for (i, inf) in inferred.into_iter().enumerate() {
            let smoothed = st.agents[i].trace.observe(inf.stance);
            st.emit(
                t,
                Event::StanceUpdate {
                    user: st.id(i),
                    discrete: inf.stance,
                    smoothed,
                    alpha: cfg.alpha,
                    fallback: inf.fallback,
                },
            )?;
        }

        refresh_contexts(cfg, services, st, t)?;
        select_new_arms(cfg, pool, st, t)?;
        st.mis_prev = mis_now;

        let m = st.tracker.metrics();
        st.emit(t, Event::Metric(m.clone()))?;
        st.metrics.push(m.clone());
        st.round = t;
        self.clean = true;
        Ok(m)
    }
}

fn opposite(s: Stance) -> Stance {
    match s {
        Stance::Positive => Stance::Negative,
        Stance::Negative => Stance::Positive,
        Stance::Neutral => Stance::Neutral,
    }
}

/// Stores each agent's new contents as short-term entries, then writes one
/// long-term entry from a similarity-and-recency sample of the pool.
fn update_memories(cfg: &RunConfig, services: &Services, pool: &Pool, agents: &mut [AgentState], contents: &[Vec<String>], t: u32) -> Result<()> {
    let update = |i: usize, a: &mut AgentState| -> Result<()> {
        let items = &contents[i];
        for c in items {
            let enc = encode_short_term(c, &a.profile, a.memory.latest_short(), &services.backend, services.embedder.as_ref(), t)?;
            a.memory.insert(enc.entry);
        }
        let Some(last) = items.last() else { return Ok(()) };
        let query = a.memory.latest_short().map(|e| e.embedding.clone()).unwrap_or_default();
        let mut rng = seed::rng(cfg.seed, &[seed::site::MEMORY, u64::from(t), i as u64]);
        let enc = {
            let samples = a.memory.sample(&query, cfg.lambda, t, cfg.memory_samples, &mut rng)?;
            consolidate_long_term(last, &a.profile, &samples, &services.backend, services.embedder.as_ref(), t)?
        };
        a.memory.insert(enc.entry);
        Ok(())
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pool.install(|| agents.par_iter_mut().enumerate().map(|(i, a)| update(i, a)).collect::<Result<Vec<()>>>())?;
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = pool;
        for (i, a) in agents.iter_mut().enumerate() {
            update(i, a)?;
        }
    }
    Ok(())
}

/// Memory digests and propagated user contexts for the next round.
fn refresh_contexts(cfg: &RunConfig, services: &Services, st: &mut SimState, t: u32) -> Result<()> {
    let mut texts = Vec::with_capacity(st.agents.len());
    for (i, a) in st.agents.iter().enumerate() {
        let digest = match a.memory.latest_short() {
            None => String::new(),
            Some(latest) => {
                let mut rng = seed::rng(cfg.seed, &[seed::site::MEMORY, u64::from(t), i as u64, 1]);
                let picked = a.memory.sample(&latest.embedding, cfg.lambda, t, cfg.memory_samples, &mut rng)?;
                picked.iter().map(|e| e.content.as_str()).collect::<Vec<_>>().join(" / ")
            }
        };
        texts.push(format!("{}\nRecent memory: {digest}", a.profile.to_text()));
        st.digests[i] = digest;
    }
    st.contexts = user_contexts(services.embedder.as_ref(), &texts, &st.graph, PropagationConfig::new(cfg.gamma, cfg.hops)?)?;
    Ok(())
}

/// Seeded accounts post their assigned message once per round, in id order.
fn post_seeded(cfg: &RunConfig, services: &Services, st: &mut SimState, t: u32) -> Result<Vec<(NodeIdx, String)>> {
    let mut out = Vec::new();
    for i in 0..st.roles.len() {
        let (text, stance, flags) = match st.roles[i] {
            Role::Ordinary => continue,
            Role::Misinfo => (cfg.misinfo_message.clone(), cfg.misinfo_stance, (true, false)),
            Role::Corrective => (cfg.corrective_message.clone(), opposite(cfg.misinfo_stance), (false, true)),
        };
        st.add_post(&services.embedder, t, i, text.clone(), stance, flags, None, PostSource::Seed)?;
        out.push((i, text));
    }
    Ok(out)
}

/// Builds candidate arms, picks this round's arms and applies exposure
/// changes. Recommendations are delivered next round.
fn select_new_arms(cfg: &RunConfig, pool: &Pool, st: &mut SimState, t: u32) -> Result<()> {
    if cfg.objective == Objective::None || cfg.bandit.policy == PolicyKind::None {
        return Ok(());
    }
    let n = st.agents.len();
    let mut rng = seed::rng(cfg.seed, &[seed::site::CANDIDATES, u64::from(t)]);
    let arms: Vec<Arm> = match cfg.objective {
        Objective::CrossView => {
            let ids: Vec<PostId> = st
                .posts_between((t + 1).saturating_sub(cfg.feed.headline_window), t + 1)
                .iter()
                .map(|p| p.id)
                .collect();
            let cands = build_candidates(n, &ids, cfg.bandit.candidates, &st.recommended, &mut rng);
            cands
                .pairs()
                .filter(|&(u, p)| st.posts[p as usize].author != u)
                .map(|(u, p)| Arm::recommend(u, p, recommend_context(&st.contexts[u], &st.posts[p as usize].embedding)))
                .collect()
        }
        Objective::Misinfo => {
            // Authors active in the recent window come first; idle users
            // only fill remaining slots.
            let active: BTreeSet<NodeIdx> = st
                .posts_between((t + 1).saturating_sub(cfg.feed.headline_window), t + 1)
                .iter()
                .map(|p| p.author)
                .collect();
            let k = cfg.bandit.candidates.n_users;
            let mut users: Vec<NodeIdx> = active.iter().copied().collect();
            users.shuffle(&mut rng);
            users.truncate(k);
            if users.len() < k {
                let mut idle: Vec<NodeIdx> = (0..n).filter(|u| !active.contains(u)).collect();
                idle.shuffle(&mut rng);
                users.extend(idle.into_iter().take(k - users.len()));
            }
            users.sort_unstable();
            users
        }
        .into_iter()
            .flat_map(|u| (0..EXPOSURE_LEVELS.len()).map(move |l| (u, l)))
            .map(|(u, l)| Arm::exposure(u, l, exposure_context(&st.contexts[u], l)))
            .collect(),
        Objective::None => unreachable!(),
    };
    let (chosen, scores): (Vec<usize>, Option<Vec<f64>>) = match (cfg.bandit.policy, st.bandit.as_ref()) {
        (PolicyKind::Ee, Some(b)) => {
            let scores = par_map(pool, arms.len(), |k| b.score(&arms[k].context)).into_iter().collect::<Result<Vec<f64>>>()?;
            (select_arms(&arms, &scores, cfg.bandit.budget), Some(scores))
        }
        _ => {
            let mut rng = seed::rng(cfg.seed, &[seed::site::POLICY, u64::from(t)]);
            (select_random(&arms, cfg.bandit.budget, &mut rng), None)
        }
    };
    for k in chosen {
        let mut arm = arms[k].clone();
        arm.selected_round = Some(t);
        let id = st.next_arm;
        st.next_arm += 1;
        let score = scores.as_ref().map(|s| s[k]);
        let user = st.id(arm.user);
        match arm.kind {
            ArmKind::Recommend => {
                st.recommended.insert(arm.payload);
                st.emit(
                    t,
                    Event::Recommendation {
                        arm_id: id,
                        user,
                        post_id: arm.payload,
                        score,
                    },
                )?;
            }
            ArmKind::Exposure => {
                let level = arm.level().expect("exposure arm");
                let previous = st.exposure.get(arm.user);
                st.exposure.set(arm.user, level)?;
                st.emit(
                    t,
                    Event::ExposureChange {
                        arm_id: Some(id),
                        author: user,
                        level,
                        previous,
                        score,
                    },
                )?;
            }
        }
        st.pending.push(PendingArm { id, arm });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: SimState,
    pub events: Vec<EventRecord>,
    pub metrics: Vec<RoundMetrics>,
}

/// Runs `cfg` in memory with the given services.
pub fn run_with(cfg: RunConfig, services: Services) -> Result<RunOutput> {
    let mut sim = Simulation::new(cfg, services)?;
    let mut events = sim.drain_events();
    while !sim.finished() {
        sim.step()?;
        events.extend(sim.drain_events());
    }
    let state = sim.into_state();
    Ok(RunOutput {
        metrics: state.metrics.clone(),
        state,
        events,
    })
}

/// Runs `cfg` in memory with the backends it names.
pub fn run(cfg: RunConfig) -> Result<RunOutput> {
    let services = Services::from_config(&cfg)?;
    run_with(cfg, services)
}
