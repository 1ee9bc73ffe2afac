//! Synthetic benchmark environment.
//!
//! Each round offers `arms` contexts drawn uniformly from the unit sphere in
//! `dim` dimensions. Pulling arm x pays `sigmoid(w · x) + noise`, clamped to
//! [0,1], with a hidden `w` of norm `w_norm`. Contexts and noise depend only
//! on (seed, round), and the networks start from the same weights for every
//! policy, so the policies are compared on identical problems.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::NeuralBandit;
use crate::embed::{dot, normalize};
use crate::{seed, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub arms: usize,
    pub rounds: usize,
    pub noise_sd: f64,
    pub w_norm: f64,
    pub hidden: usize,
    pub lr: f64,
    pub epsilon: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            arms: 50,
            rounds: 2000,
            noise_sd: 0.05,
            w_norm: 4.0,
            hidden: 64,
            lr: 1e-3,
            epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchPolicy {
    Ee,
    Random,
    EpsilonGreedy,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    if !normalize(&mut v) {
        v[0] = 1.0;
    }
    v
}

pub struct SyntheticEnv {
    cfg: SyntheticConfig,
    seed: u64,
    w: Vec<f64>,
}

impl SyntheticEnv {
    pub fn new(cfg: SyntheticConfig, seed_value: u64) -> Self {
        let mut rng = seed::rng(seed_value, &[seed::site::BENCH, 0]);
        let w = unit(cfg.dim, &mut rng).into_iter().map(|x| x * cfg.w_norm).collect();
        Self { cfg, seed: seed_value, w }
    }

    /// Contexts offered in `round` and the noise added to whichever is
    /// pulled.
    pub fn round(&self, round: usize) -> (Vec<Vec<f64>>, f64) {
        let mut rng = seed::rng(self.seed, &[seed::site::BENCH, 1, round as u64]);
        let contexts = (0..self.cfg.arms).map(|_| unit(self.cfg.dim, &mut rng)).collect();
        let noise = Normal::new(0.0, self.cfg.noise_sd).expect("valid sd").sample(&mut rng);
        (contexts, noise)
    }

    pub fn expected(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.w, x))
    }

    pub fn reward(&self, x: &[f64], noise: f64) -> f64 {
        (self.expected(x) + noise).clamp(0.0, 1.0)
    }
}

/// Cumulative reward of `policy` over `cfg.rounds` rounds.
pub fn run_policy(policy: BenchPolicy, cfg: SyntheticConfig, seed_value: u64) -> Result<f64> {
    let env = SyntheticEnv::new(cfg, seed_value);
    let mut bandit = NeuralBandit::new(cfg.dim, cfg.hidden, cfg.lr, seed::derive(seed_value, &[seed::site::BENCH, 2]));
    let mut rng = seed::rng(seed_value, &[seed::site::BENCH, 3, policy as u64]);
    let mut total = 0.0;
    for t in 0..cfg.rounds {
        let (contexts, noise) = env.round(t);
        let pick = match policy {
            BenchPolicy::Random => rng.random_range(0..contexts.len()),
            BenchPolicy::Ee => argmax(&contexts, |x| bandit.score(x))?,
            BenchPolicy::EpsilonGreedy => {
                if rng.random::<f64>() < cfg.epsilon {
                    rng.random_range(0..contexts.len())
                } else {
                    argmax(&contexts, |x| bandit.exploit.forward(x))?
                }
            }
        };
        let x = &contexts[pick];
        let r = env.reward(x, noise);
        total += r;
        match policy {
            BenchPolicy::Random => {}
            BenchPolicy::Ee => {
                bandit.observe(x, r)?;
            }
            BenchPolicy::EpsilonGreedy => {
                bandit.observe_exploit(x, r)?;
            }
        }
    }
    Ok(total)
}

fn argmax(contexts: &[Vec<f64>], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<usize> {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, x) in contexts.iter().enumerate() {
        let v = f(x)?;
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub ee: f64,
    pub random: f64,
    pub epsilon_greedy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: SyntheticConfig,
    pub seeds: Vec<SeedResult>,
}

impl BenchReport {
    pub fn ee_beats_random(&self) -> usize {
        self.seeds.iter().filter(|s| s.ee > s.random).count()
    }

    pub fn mean(&self, f: impl Fn(&SeedResult) -> f64) -> f64 {
        self.seeds.iter().map(f).sum::<f64>() / self.seeds.len().max(1) as f64
    }
}

pub fn bench(cfg: SyntheticConfig, seeds: &[u64]) -> Result<BenchReport> {
    let results = seeds
        .iter()
        .map(|&s| {
            Ok(SeedResult {
                seed: s,
                ee: run_policy(BenchPolicy::Ee, cfg, s)?,
                random: run_policy(BenchPolicy::Random, cfg, s)?,
                epsilon_greedy: run_policy(BenchPolicy::EpsilonGreedy, cfg, s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport { config: cfg, seeds: results })
}
