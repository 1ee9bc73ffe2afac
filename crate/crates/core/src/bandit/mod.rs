//! Neural contextual bandit over intervention arms.
//!
//! The exploitation net `g` regresses reward on arm context. The
//! exploration net `f` regresses the residual `r - g(x)` on the normalized
//! last-layer gradient of `g` at `x`. An arm scores `g(x) + f(∇g(x))`.

pub mod context;
pub mod net;
pub mod reward;
pub mod synthetic;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, NodeIdx, PostId, Result};
use net::{Adam, Mlp};

pub use context::{exposure_context, recommend_context, user_context, user_contexts, EXPOSURE_LEVELS};
pub use reward::{reward_cross_view, reward_misinfo, reward_misinfo_group, EngagementWeights, ReactionOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmKind {
    Recommend,
    Exposure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub kind: ArmKind,
    pub user: NodeIdx,
    /// Post id for recommend arms, index into [`EXPOSURE_LEVELS`] for
    /// exposure arms.
    pub payload: u64,
    pub context: Vec<f64>,
    pub selected_round: Option<u32>,
    pub reward: Option<f64>,
}

impl Arm {
    pub fn recommend(user: NodeIdx, post: PostId, context: Vec<f64>) -> Self {
        Self {
            kind: ArmKind::Recommend,
            user,
            payload: post,
            context,
            selected_round: None,
            reward: None,
        }
    }

    pub fn exposure(user: NodeIdx, level_idx: usize, context: Vec<f64>) -> Self {
        Self {
            kind: ArmKind::Exposure,
            user,
            payload: level_idx as u64,
            context,
            selected_round: None,
            reward: None,
        }
    }

    pub fn level(&self) -> Option<f64> {
        match self.kind {
            ArmKind::Exposure => EXPOSURE_LEVELS.get(self.payload as usize).copied(),
            ArmKind::Recommend => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateSizes {
    pub n_users: usize,
    pub n_posts: usize,
}

impl Default for CandidateSizes {
    fn default() -> Self {
        Self { n_users: 16, n_posts: 16 }
    }
}

/// Sampled candidate users and posts; arms are their Cartesian product.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidates {
    pub users: Vec<NodeIdx>,
    pub posts: Vec<PostId>,
}

impl Candidates {
    /// User-major product order.
    pub fn pairs(&self) -> impl Iterator<Item = (NodeIdx, PostId)> + '_ {
        self.users.iter().flat_map(move |&u| self.posts.iter().map(move |&p| (u, p)))
    }
}

/// Samples users uniformly without replacement and posts likewise, taking
/// never-recommended posts before previously recommended ones. Sizes are
/// capped by what is available.
pub fn build_candidates<R: Rng + ?Sized>(
    n_population: usize,
    posts: &[PostId],
    sizes: CandidateSizes,
    recommended: &BTreeSet<PostId>,
    rng: &mut R,
) -> Candidates {
    if posts.is_empty() {
        return Candidates {
            users: Vec::new(),
            posts: Vec::new(),
        };
    }
    let mut users: Vec<NodeIdx> = (0..n_population).collect();
    users.shuffle(rng);
    users.truncate(sizes.n_users);
    users.sort_unstable();
    let (mut fresh, mut old): (Vec<PostId>, Vec<PostId>) = posts.iter().partition(|p| !recommended.contains(p));
    fresh.shuffle(rng);
    old.shuffle(rng);
    fresh.extend(old);
    fresh.truncate(sizes.n_posts);
    fresh.sort_unstable();
    Candidates { users, posts: fresh }
}

/// Users sampled for exposure arms.
pub fn sample_users<R: Rng + ?Sized>(n_population: usize, n: usize, rng: &mut R) -> Vec<NodeIdx> {
    let mut users: Vec<NodeIdx> = (0..n_population).collect();
    users.shuffle(rng);
    users.truncate(n);
    users.sort_unstable();
    users
}

/// Top-`budget` arms by score with ties broken by `(user, payload)`
/// ascending, taking at most one arm per user. Returns indices into `arms`.
pub fn select_arms(arms: &[Arm], scores: &[f64], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..arms.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(arms[a].user.cmp(&arms[b].user))
            .then(arms[a].payload.cmp(&arms[b].payload))
    });
    cap_per_user(arms, order, budget)
}

/// Uniformly random arms under the same per-user cap.
pub fn select_random<R: Rng + ?Sized>(arms: &[Arm], budget: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..arms.len()).collect();
    order.shuffle(rng);
    cap_per_user(arms, order, budget)
}

fn cap_per_user(arms: &[Arm], order: Vec<usize>, budget: usize) -> Vec<usize> {
    let mut users = BTreeSet::new();
    let mut out = Vec::with_capacity(budget.min(arms.len()));
    for i in order {
        if out.len() == budget {
            break;
        }
        if users.insert(arms[i].user) {
            out.push(i);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Exploitation plus exploration networks.
    #[default]
    Ee,
    /// Uniformly random arms from the same candidates.
    Random,
    /// No bandit actions at all.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BanditConfig {
    pub policy: PolicyKind,
    pub candidates: CandidateSizes,
    pub budget: usize,
    pub hidden: usize,
    pub lr: f64,
    pub engagement: EngagementWeights,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Ee,
            candidates: CandidateSizes::default(),
            budget: 16,
            hidden: 64,
            lr: 1e-3,
            engagement: EngagementWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observed {
    /// `g(x)` before the update.
    pub prediction: f64,
    /// `r - g(x)`, the exploration target.
    pub explore_target: f64,
    pub exploit_loss: f64,
    /// Loss was not finite; nothing was updated.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralBandit {
    pub exploit: Mlp,
    pub explore: Mlp,
    opt_exploit: Adam,
    opt_explore: Adam,
}

impl NeuralBandit {
    pub fn new(input_dim: usize, hidden: usize, lr: f64, run_seed: u64) -> Self {
        let mut rng = seed::rng(run_seed, &[seed::site::NET_INIT]);
        let exploit = Mlp::random(input_dim, hidden, &mut rng);
        let explore = Mlp::random(hidden + 1, hidden, &mut rng);
        Self::from_nets(exploit, explore, lr)
    }

    pub fn from_nets(exploit: Mlp, explore: Mlp, lr: f64) -> Self {
        Self {
            opt_exploit: Adam::new(exploit.params().len(), lr),
            opt_explore: Adam::new(explore.params().len(), lr),
            exploit,
            explore,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.exploit.input_dim()
    }

    /// `(g(x), f(∇g(x)))`.
    pub fn score_parts(&self, x: &[f64]) -> Result<(f64, f64)> {
        let g = self.exploit.forward(x)?;
        let f = self.explore.forward(&self.exploit.grad_features(x)?)?;
        Ok((g, f))
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let (g, f) = self.score_parts(x)?;
        Ok(g + f)
    }

    /// One Adam step on each net. Both the gradient features and the
    /// residual use the exploit net as it was before this call.
    pub fn observe(&mut self, x: &[f64], reward: f64) -> Result<Observed> {
        let prediction = self.exploit.forward(x)?;
        let features = self.exploit.grad_features(x)?;
        let explore_target = reward - prediction;
        let exploit_loss = (prediction - reward).powi(2);
        let explore_pred = self.explore.forward(&features)?;
        if !exploit_loss.is_finite() || !explore_pred.is_finite() {
            log::warn!("bandit observe skipped: non-finite loss");
            return Ok(Observed {
                prediction,
                explore_target,
                exploit_loss,
                skipped: true,
            });
        }
        let g_grad = self.exploit.backward(x, 2.0 * (prediction - reward))?;
        let f_grad = self.explore.backward(&features, 2.0 * (explore_pred - explore_target))?;
        self.opt_exploit.step(self.exploit.params_mut(), &g_grad);
        self.opt_explore.step(self.explore.params_mut(), &f_grad);
        Ok(Observed {
            prediction,
            explore_target,
            exploit_loss,
            skipped: false,
        })
    }

    /// Exploit-only update, used by the greedy baselines.
    pub fn observe_exploit(&mut self, x: &[f64], reward: f64) -> Result<f64> {
        let prediction = self.exploit.forward(x)?;
        let loss = (prediction - reward).powi(2);
        if loss.is_finite() {
            let g = self.exploit.backward(x, 2.0 * (prediction - reward))?;
            self.opt_exploit.step(self.exploit.params_mut(), &g);
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm(user: NodeIdx, payload: u64) -> Arm {
        Arm::recommend(user, payload, vec![])
    }

    #[test]
    fn product_cardinality() {
        let mut rng = seed::rng(0, &[]);
        let c = build_candidates(5, &[1, 2, 3, 4], CandidateSizes { n_users: 2, n_posts: 3 }, &BTreeSet::new(), &mut rng);
        assert_eq!(c.pairs().count(), 6);
        let none = build_candidates(5, &[], CandidateSizes::default(), &BTreeSet::new(), &mut rng);
        assert_eq!(none.pairs().count(), 0);
    }

    #[test]
    fn fresh_post_preferred() {
        let seen: BTreeSet<PostId> = [1, 2, 3, 5].into_iter().collect();
        for s in 0..50 {
            let mut rng = seed::rng(s, &[]);
            let c = build_candidates(3, &[1, 2, 3, 4, 5], CandidateSizes { n_users: 1, n_posts: 1 }, &seen, &mut rng);
            assert_eq!(c.posts, vec![4]);
        }
        let a = build_candidates(30, &(0..40).collect::<Vec<_>>(), CandidateSizes::default(), &seen, &mut seed::rng(7, &[]));
        let b = build_candidates(30, &(0..40).collect::<Vec<_>>(), CandidateSizes::default(), &seen, &mut seed::rng(7, &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn selection_rules() {
        let arms = vec![arm(2, 1), arm(1, 5), arm(1, 3), arm(3, 0)];
        assert_eq!(select_arms(&arms, &[0.1, 0.9, 0.9, 0.5], 10), vec![2, 3, 0]);
        // Equal scores: (user, payload) ascending.
        assert_eq!(select_arms(&arms, &[0.5; 4], 2), vec![2, 0]);
        // Per-user cap: arm 1 shares user 1 with arm 2, so arm 3 comes next.
        assert_eq!(select_arms(&arms, &[0.0, 0.8, 0.9, 0.7], 2), vec![2, 3]);
    }

    #[test]
    fn zero_nets_score_biases() {
        let mut g = Mlp::zeros(4, 3);
        let mut f = Mlp::zeros(4, 3);
        *g.params_mut().last_mut().unwrap() = 0.25;
        *f.params_mut().last_mut().unwrap() = 0.5;
        let b = NeuralBandit::from_nets(g.clone(), f, 1e-3);
        assert_eq!(b.score(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.75);
        let b = NeuralBandit::from_nets(g, Mlp::zeros(4, 3), 1e-3);
        assert_eq!(b.score(&[1.0, 2.0, 3.0, 4.0]).unwrap(), b.exploit.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap());
    }

    #[test]
    fn exact_reward_gives_zero_target() {
        let mut b = NeuralBandit::new(3, 8, 1e-3, 1);
        let x = [0.2, 0.4, -0.1];
        let g = b.exploit.forward(&x).unwrap();
        assert_eq!(b.observe(&x, g).unwrap().explore_target, 0.0);
    }

    #[test]
    fn constant_reward_regression_converges() {
        let mut b = NeuralBandit::new(6, 16, 1e-3, 3);
        let x = [0.3, -0.1, 0.5, 0.2, -0.4, 0.1];
        let mut steps = 0;
        while (b.exploit.forward(&x).unwrap() - 0.7).abs() >= 1e-3 {
            b.observe(&x, 0.7).unwrap();
            steps += 1;
            assert!(steps <= 2000, "no convergence");
        }
    }
}
