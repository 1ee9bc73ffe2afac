//! Initial population: profiles, scripted parameters, follow graph and
//! historical posts.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::config::{PopulationSource, RunConfig};
use crate::agent::scripted::compose_post;
use crate::agent::{AgentProfile, Backend, ScriptedAgentParams};
use crate::dataprep::{build_population, ingest, HistoricalPost, IngestReport, Neighbor, ProfileMeta, UserMetadata};
use crate::graph::SocialGraph;
use crate::{seed, Result};

pub struct Population {
    pub profiles: Vec<AgentProfile>,
    /// Indexed like `profiles`; every entry is `Some` for scripted runs.
    pub params: Vec<Option<ScriptedAgentParams>>,
    pub graph: SocialGraph,
    pub history: Vec<HistoricalPost>,
    pub report: IngestReport,
}

const ROLES: [&str; 10] = [
    "High school teacher",
    "ER nurse",
    "Software engineer",
    "Retired army veteran",
    "Small business owner",
    "College student",
    "Local news reporter",
    "Farmer",
    "Defense lawyer",
    "Parent of two",
];

const INTERESTS: [&str; 6] = ["sports", "music", "technology", "health", "education", "travel"];

fn stance_phrase(latent: f64) -> &'static str {
    match latent {
        l if l > 0.5 => "Strongly backs",
        l if l > 0.2 => "Leans toward supporting",
        l if l >= -0.2 => "Still undecided about",
        l if l >= -0.5 => "Skeptical of",
        _ => "Firmly against",
    }
}

pub fn user_id(i: usize) -> String {
    format!("u{i:05}")
}

/// Synthetic metadata records plus the scripted parameters behind them.
pub fn synthetic_metadata(cfg: &RunConfig) -> (Vec<UserMetadata>, Vec<ScriptedAgentParams>) {
    let n = cfg.agents;
    let pc = &cfg.population;
    let params: Vec<ScriptedAgentParams> = (0..n)
        .map(|i| {
            let mut rng = seed::rng(cfg.seed, &[seed::site::POPULATION, i as u64]);
            ScriptedAgentParams::sample(&mut rng, pc.latent_spread)
        })
        .collect();
    let bias = pc.homophily_bias.max(1e-9);
    let base = if n > 1 {
        pc.mean_following / ((n - 1) as f64 * 0.5 * (bias + 1.0 / bias))
    } else {
        0.0
    };
    let mut graph_rng = seed::rng(cfg.seed, &[seed::site::GRAPH, 1]);
    let mut following: Vec<Vec<String>> = vec![Vec::new(); n];
    for (i, fi) in following.iter_mut().enumerate() {
        for j in 0..n {
            if i == j {
                continue;
            }
            let same = params[i].latent_stance * params[j].latent_stance >= 0.0;
            let p = (base * if same { bias } else { 1.0 / bias }).min(1.0);
            if graph_rng.random::<f64>() < p {
                fi.push(user_id(j));
            }
        }
    }
    let records = params
        .iter()
        .zip(following)
        .enumerate()
        .map(|(i, (p, following))| {
            let mut rng = seed::rng(cfg.seed, &[seed::site::PROFILE, i as u64]);
            let role = ROLES.choose(&mut rng).expect("non-empty");
            let interest = INTERESTS.choose(&mut rng).expect("non-empty");
            let tone = if p.toxicity_propensity > 0.5 {
                " Blunt online and quick to insult people who disagree."
            } else if p.toxicity_propensity < 0.1 {
                " Tries to keep discussions civil."
            } else {
                ""
            };
            let description = format!(
                "{role}. {} {}.{tone} Follows politics and {interest}.",
                stance_phrase(p.latent_stance),
                cfg.topic
            );
            let tweets = (0..pc.history_posts)
                .map(|_| {
                    let toxic = rng.random::<f64>() < p.toxicity_propensity;
                    compose_post(&cfg.topic, p.stance(), toxic, &mut rng)
                })
                .collect();
            UserMetadata {
                id: user_id(i),
                profile: ProfileMeta {
                    name: format!("User {i}"),
                    screen_name: user_id(i),
                    description,
                    created_at: String::new(),
                    followers_count: 0,
                    friends_count: following.len() as u64,
                },
                tweets,
                neighbor: Neighbor {
                    following,
                    follower: Vec::new(),
                },
            }
        })
        .collect();
    (records, params)
}

pub fn build(cfg: &RunConfig, backend: &Backend) -> Result<Population> {
    let (ingested, mut by_id) = match cfg.population.source {
        PopulationSource::Synthetic => {
            let (records, params) = synthetic_metadata(cfg);
            let by_id: BTreeMap<String, ScriptedAgentParams> = records.iter().map(|r| r.id.clone()).zip(params).collect();
            (build_population(records, backend, IngestReport::default())?, by_id)
        }
        PopulationSource::Metadata => {
            let dir = cfg.population.metadata_dir.as_deref().expect("validated");
            (ingest(dir, backend)?, BTreeMap::new())
        }
    };
    let params = ingested
        .graph
        .ids()
        .iter()
        .map(|id| match backend {
            Backend::Llm(_) => None,
            Backend::Scripted => Some(by_id.remove(id).unwrap_or_else(|| {
                let mut rng = seed::rng(cfg.seed, &[seed::site::POPULATION, seed::hash_str(id)]);
                ScriptedAgentParams::sample(&mut rng, cfg.population.latent_spread)
            })),
        })
        .collect();
    Ok(Population {
        profiles: ingested.profiles,
        params,
        graph: ingested.graph,
        history: ingested.history,
        report: ingested.report,
    })
}
