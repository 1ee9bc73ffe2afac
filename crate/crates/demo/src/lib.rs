//! Browser bindings. Every export returns a JSON string for the page to
//! render; the `*_json` functions are the same thing callable from Rust.

use serde_json::json;
use social_sandbox::graph::{abm_converge, stationary_distribution, BeliefVector, SocialGraph};
use social_sandbox::seed;
use social_sandbox::sim::{run, Objective, RunConfig};
use social_sandbox::stance::{StanceTrace, Stance};
use wasm_bindgen::prelude::*;

const MAX_AGENTS: usize = 200;
const MAX_ROUNDS: u32 = 40;

fn objective(name: &str) -> Result<Objective, String> {
    match name {
        "none" => Ok(Objective::None),
        "cross_view" => Ok(Objective::CrossView),
        "misinfo" => Ok(Objective::Misinfo),
        other => Err(format!("unknown objective `{other}`")),
    }
}

/// Scripted run with offline services; per-round metrics.
pub fn simulate_json(seed_value: u64, agents: usize, rounds: u32, objective_name: &str, misinfo_fraction: f64) -> Result<String, String> {
    if agents == 0 || agents > MAX_AGENTS {
        return Err(format!("agents must be in 1..={MAX_AGENTS}"));
    }
    if rounds > MAX_ROUNDS {
        return Err(format!("rounds must be at most {MAX_ROUNDS}"));
    }
    let cfg = RunConfig {
        seed: seed_value,
        agents,
        rounds,
        objective: objective(objective_name)?,
        misinfo_fraction,
        ..RunConfig::default()
    };
    let out = run(cfg).map_err(|e| e.to_string())?;
    Ok(json!({ "metrics": out.metrics, "events": out.events.len() }).to_string())
}

/// Averaging dynamics on an undirected random graph, with the consensus the
/// stationary distribution predicts.
pub fn consensus_json(nodes: usize, p: f64, seed_value: u64) -> Result<String, String> {
    if !(2..=300).contains(&nodes) {
        return Err("nodes must be in 2..=300".into());
    }
    let graph = SocialGraph::erdos_renyi_undirected(nodes, p, seed_value);
    let view = graph.abm_view();
    if !view.is_connected() {
        return Err(format!("graph has {} components; raise p or change the seed", view.components()));
    }
    let mut rng = seed::rng(seed_value, &[99]);
    let x0: Vec<f64> = (0..nodes).map(|_| rand::Rng::random_range(&mut rng, 0.0..=1.0)).collect();
    let x0 = BeliefVector::new(x0).map_err(|e| e.to_string())?;
    let conv = abm_converge(&view, &x0, 1e-6, 1000).map_err(|e| e.to_string())?;
    let pi = stationary_distribution(&view).map_err(|e| e.to_string())?;
    let predicted: f64 = pi.iter().zip(x0.values()).map(|(a, b)| a * b).sum();
    Ok(json!({
        "edges": graph.edge_count() / 2,
        "iterations": conv.iterations,
        "converged": conv.converged,
        "spread": conv.spread_trace,
        "consensus": conv.belief.values().iter().sum::<f64>() / nodes as f64,
        "predicted": predicted,
    })
    .to_string())
}

/// Smoothed stance for a comma-separated list of -1/0/1 observations.
pub fn stance_json(alpha: f64, observations: &str) -> Result<String, String> {
    let obs: Vec<Stance> = observations
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| match s {
            "-1" => Ok(Stance::Negative),
            "0" => Ok(Stance::Neutral),
            "1" | "+1" => Ok(Stance::Positive),
            other => Err(format!("`{other}` is not -1, 0 or 1")),
        })
        .collect::<Result<_, _>>()?;
    let Some((first, rest)) = obs.split_first() else {
        return Err("enter at least one observation".into());
    };
    let mut trace = StanceTrace::start(*first, alpha).map_err(|e| e.to_string())?;
    let mut smoothed = vec![trace.smoothed()];
    smoothed.extend(rest.iter().map(|o| trace.observe(*o)));
    Ok(json!({ "smoothed": smoothed }).to_string())
}

#[wasm_bindgen]
pub fn simulate(seed_value: u32, agents: usize, rounds: u32, objective_name: &str, misinfo_fraction: f64) -> Result<String, JsError> {
    simulate_json(u64::from(seed_value), agents, rounds, objective_name, misinfo_fraction).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn consensus(nodes: usize, p: f64, seed_value: u32) -> Result<String, JsError> {
    consensus_json(nodes, p, u64::from(seed_value)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn stance(alpha: f64, observations: &str) -> Result<String, JsError> {
    stance_json(alpha, observations).map_err(|e| JsError::new(&e))
}
