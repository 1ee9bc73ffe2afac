//! Directed follow graph, the row-stochastic propagation operator, and the
//! averaging belief model used as a homogenization baseline.
//!
//! Node order is fixed at construction (sorted user ids) so every matrix view
//! is deterministic. Adjacency is sparse: one ordered map per node from
//! followee index to the round the edge was created.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, NodeIdx, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Follow,
    Unfollow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "GraphRepr", into = "GraphRepr")]
pub struct SocialGraph {
    ids: Vec<String>,
    index: BTreeMap<String, NodeIdx>,
    /// `out[i]` maps followee -> creation round.
    out: Vec<BTreeMap<NodeIdx, u32>>,
    round: u32,
}

impl SocialGraph {
    /// Builds an edgeless graph over `ids`. Duplicates are collapsed and the
    /// result is sorted.
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = ids.into_iter().map(Into::into).collect();
        let ids: Vec<String> = set.into_iter().collect();
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let out = vec![BTreeMap::new(); ids.len()];
        Self {
            ids,
            index,
            out,
            round: 0,
        }
    }

    fn reindex(&mut self) {
        self.index = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, idx: NodeIdx) -> &str {
        &self.ids[idx]
    }

    pub fn index_of(&self, id: &str) -> Result<NodeIdx> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownUser(id.to_string()))
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn set_round(&mut self, round: u32) {
        self.round = round;
    }

    pub fn has_edge(&self, from: NodeIdx, to: NodeIdx) -> bool {
        self.out[from].contains_key(&to)
    }

    pub fn edge_round(&self, from: NodeIdx, to: NodeIdx) -> Option<u32> {
        self.out[from].get(&to).copied()
    }

    pub fn followees(&self, idx: NodeIdx) -> impl Iterator<Item = NodeIdx> + '_ {
        self.out[idx].keys().copied()
    }

    pub fn out_degree(&self, idx: NodeIdx) -> usize {
        self.out[idx].len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(BTreeMap::len).sum()
    }

    /// All edges as `(follower, followee)` in index order.
    pub fn edges(&self) -> Vec<(NodeIdx, NodeIdx)> {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.keys().map(move |&j| (i, j)))
            .collect()
    }

    /// Followers of `idx` (nodes with an edge into it).
    pub fn followers(&self, idx: NodeIdx) -> Vec<NodeIdx> {
        (0..self.len()).filter(|&i| self.has_edge(i, idx)).collect()
    }

    /// Applies a follow or unfollow by user id. Returns whether the edge set
    /// changed; both directions are idempotent.
    pub fn apply_relationship_action(
        &mut self,
        actor: &str,
        target: &str,
        kind: RelationKind,
    ) -> Result<bool> {
        let a = self.index_of(actor)?;
        let b = self.index_of(target)?;
        self.apply_by_index(a, b, kind)
    }

    pub fn apply_by_index(&mut self, actor: NodeIdx, target: NodeIdx, kind: RelationKind) -> Result<bool> {
        if actor >= self.len() {
            return Err(Error::UnknownUser(format!("#{actor}")));
        }
        if target >= self.len() {
            return Err(Error::UnknownUser(format!("#{target}")));
        }
        if actor == target {
            return Err(Error::SelfRelation(self.ids[actor].clone()));
        }
        let changed = match kind {
            RelationKind::Follow => {
                if self.out[actor].contains_key(&target) {
                    false
                } else {
                    self.out[actor].insert(target, self.round);
                    true
                }
            }
            RelationKind::Unfollow => self.out[actor].remove(&target).is_some(),
        };
        Ok(changed)
    }

    /// Edge set as a comparable value (ignores creation rounds).
    pub fn edge_set(&self) -> BTreeSet<(NodeIdx, NodeIdx)> {
        self.edges().into_iter().collect()
    }

    /// Erdős–Rényi directed graph: each ordered pair is an edge with
    /// probability `p`.
    pub fn erdos_renyi(n: usize, p: f64, seed_value: u64) -> Self {
        let mut g = Self::new((0..n).map(|i| format!("u{i:05}")));
        let mut rng = seed::rng(seed_value, &[seed::site::GRAPH]);
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random::<f64>() < p {
                    g.out[i].insert(j, 0);
                }
            }
        }
        g
    }

    /// Undirected Erdős–Rényi graph stored as mutual follows.
    pub fn erdos_renyi_undirected(n: usize, p: f64, seed_value: u64) -> Self {
        let mut g = Self::new((0..n).map(|i| format!("u{i:05}")));
        let mut rng = seed::rng(seed_value, &[seed::site::GRAPH, 1]);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    g.out[i].insert(j, 0);
                    g.out[j].insert(i, 0);
                }
            }
        }
        g
    }

    /// The averaging view: follow edges symmetrized plus a self-loop on
    /// every node. The graph itself is untouched.
    pub fn abm_view(&self) -> AbmView {
        let mut nbrs: Vec<BTreeSet<NodeIdx>> = (0..self.len()).map(|i| BTreeSet::from([i])).collect();
        for (i, j) in self.edges() {
            nbrs[i].insert(j);
            nbrs[j].insert(i);
        }
        AbmView {
            neighbors: nbrs.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    ids: Vec<String>,
    out: Vec<BTreeMap<NodeIdx, u32>>,
    round: u32,
}

impl From<GraphRepr> for SocialGraph {
    fn from(r: GraphRepr) -> Self {
        let mut g = Self {
            ids: r.ids,
            index: BTreeMap::new(),
            out: r.out,
            round: r.round,
        };
        g.reindex();
        g
    }
}

impl From<SocialGraph> for GraphRepr {
    fn from(g: SocialGraph) -> Self {
        Self {
            ids: g.ids,
            out: g.out,
            round: g.round,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    /// Self-retention weight.
    pub gamma: f64,
    pub hops: usize,
}

impl PropagationConfig {
    pub fn new(gamma: f64, hops: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) || !gamma.is_finite() {
            return Err(Error::Config(format!("gamma must lie in [0,1], got {gamma}")));
        }
        Ok(Self { gamma, hops })
    }
}

/// Runs `hops` steps of `X <- gamma*X + (1-gamma)*D^-1 A X` over the follow
/// graph. Rows of nodes without followees are left to self-retention.
pub fn propagate(graph: &SocialGraph, x: &[Vec<f64>], cfg: PropagationConfig) -> Result<Vec<Vec<f64>>> {
    if x.len() != graph.len() {
        return Err(Error::Shape {
            expected: graph.len(),
            actual: x.len(),
        });
    }
    let width = x.first().map_or(0, Vec::len);
    if let Some(bad) = x.iter().find(|r| r.len() != width) {
        return Err(Error::Shape {
            expected: width,
            actual: bad.len(),
        });
    }
    let gamma = cfg.gamma;
    let mut cur = x.to_vec();
    for _ in 0..cfg.hops {
        let mut next = vec![vec![0.0; width]; cur.len()];
        for (i, row) in next.iter_mut().enumerate() {
            let deg = graph.out_degree(i);
            if deg == 0 {
                row.copy_from_slice(&cur[i]);
                continue;
            }
            let mut agg = vec![0.0; width];
            for j in graph.followees(i) {
                for (a, v) in agg.iter_mut().zip(&cur[j]) {
                    *a += v;
                }
            }
            let inv = 1.0 / deg as f64;
            for ((o, s), a) in row.iter_mut().zip(&cur[i]).zip(&agg) {
                *o = gamma * s + (1.0 - gamma) * a * inv;
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// Per-node beliefs in [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefVector(Vec<f64>);

impl BeliefVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("belief {v} outside [0,1]")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .0
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if self.0.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

/// Symmetrized, self-looped adjacency used by the averaging model.
#[derive(Debug, Clone, PartialEq)]
pub struct AbmView {
    neighbors: Vec<Vec<NodeIdx>>,
}

impl AbmView {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: NodeIdx) -> &[NodeIdx] {
        &self.neighbors[i]
    }

    /// Degree including the self-loop.
    pub fn degree(&self, i: NodeIdx) -> usize {
        self.neighbors[i].len()
    }

    pub fn components(&self) -> usize {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.neighbors[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.components() <= 1
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.neighbors
            .iter()
            .map(|nb| nb.iter().map(|&j| x[j]).sum::<f64>() / nb.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbmStep {
    pub belief: BeliefVector,
    /// Set when the view has more than one component; a single consensus is
    /// then not guaranteed.
    pub disconnected: bool,
}

/// One averaging step `x <- D^-1 A x` on the self-looped view.
pub fn abm_step(view: &AbmView, x: &BeliefVector) -> Result<AbmStep> {
    if x.len() != view.len() {
        return Err(Error::Shape {
            expected: view.len(),
            actual: x.len(),
        });
    }
    Ok(AbmStep {
        belief: BeliefVector(view.apply(x.values())),
        disconnected: !view.is_connected(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbmConvergence {
    pub belief: BeliefVector,
    pub iterations: usize,
    pub spread: f64,
    pub converged: bool,
    /// Spread after each iteration, starting with the initial spread.
    pub spread_trace: Vec<f64>,
}

/// Iterates [`abm_step`] until `max - min < tol` or `max_iters` is reached.
pub fn abm_converge(view: &AbmView, x0: &BeliefVector, tol: f64, max_iters: usize) -> Result<AbmConvergence> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Config(format!("tol must be positive, got {tol}")));
    }
    if x0.len() != view.len() {
        return Err(Error::Shape {
            expected: view.len(),
            actual: x0.len(),
        });
    }
    let mut x = x0.values().to_vec();
    let mut spread = x0.spread();
    let mut trace = vec![spread];
    let mut iterations = 0;
    while spread >= tol && iterations < max_iters {
        x = view.apply(&x);
        iterations += 1;
        spread = BeliefVector(x.clone()).spread();
        trace.push(spread);
    }
    Ok(AbmConvergence {
        belief: BeliefVector(x),
        iterations,
        spread,
        converged: spread < tol,
        spread_trace: trace,
    })
}

const STATIONARY_TOL: f64 = 1e-10;
const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// Left fixed point of `D^-1 A` on the self-looped view, by power iteration
/// from the uniform vector until the L1 change drops below 1e-10.
pub fn stationary_distribution(view: &AbmView) -> Result<Vec<f64>> {
    let n = view.len();
    let components = view.components();
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..STATIONARY_MAX_ITERS {
        let mut next = vec![0.0; n];
        for (i, &mass) in pi.iter().enumerate() {
            let share = mass / view.degree(i) as f64;
            for &j in view.neighbors(i) {
                next[j] += share;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < STATIONARY_TOL {
            break;
        }
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> SocialGraph {
        SocialGraph::new(["a", "b"])
    }

    #[test]
    fn follow_creates_edge() {
        let mut g = pair();
        assert!(g.apply_relationship_action("a", "b", RelationKind::Follow).unwrap());
        assert!(g.has_edge(0, 1));
        assert!(!g.has_edge(1, 0));
    }

    #[test]
    fn unfollow_absent_is_noop() {
        let mut g = pair();
        let before = g.clone();
        assert!(!g.apply_relationship_action("a", "b", RelationKind::Unfollow).unwrap());
        assert_eq!(g, before);
    }

    #[test]
    fn follow_then_unfollow_restores() {
        let mut g = pair();
        let before = g.clone();
        g.apply_relationship_action("a", "b", RelationKind::Follow).unwrap();
        g.apply_relationship_action("a", "b", RelationKind::Unfollow).unwrap();
        assert_eq!(g, before);
    }

    #[test]
    fn follow_records_round_and_is_idempotent() {
        let mut g = pair();
        g.set_round(4);
        g.apply_relationship_action("a", "b", RelationKind::Follow).unwrap();
        g.set_round(9);
        assert!(!g.apply_relationship_action("a", "b", RelationKind::Follow).unwrap());
        assert_eq!(g.edge_round(0, 1), Some(4));
    }

    #[test]
    fn unknown_and_self_rejected() {
        let mut g = pair();
        assert!(matches!(
            g.apply_relationship_action("a", "zz", RelationKind::Follow),
            Err(Error::UnknownUser(id)) if id == "zz"
        ));
        assert!(matches!(
            g.apply_relationship_action("a", "a", RelationKind::Follow),
            Err(Error::SelfRelation(_))
        ));
    }

    #[test]
    fn node_order_is_sorted() {
        let g = SocialGraph::new(["c", "a", "b", "a"]);
        assert_eq!(g.ids(), ["a", "b", "c"]);
    }

    #[test]
    fn propagate_gamma_one_is_identity() {
        let g = SocialGraph::erdos_renyi(6, 0.4, 1);
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, -(i as f64)]).collect();
        let y = propagate(&g, &x, PropagationConfig::new(1.0, 5).unwrap()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn propagate_mutual_pair() {
        let mut g = pair();
        g.apply_by_index(0, 1, RelationKind::Follow).unwrap();
        g.apply_by_index(1, 0, RelationKind::Follow).unwrap();
        let y = propagate(&g, &[vec![1.0], vec![0.0]], PropagationConfig::new(0.5, 1).unwrap()).unwrap();
        assert_eq!(y, vec![vec![0.5], vec![0.5]]);
    }

    #[test]
    fn propagate_hops_zero_and_isolated_rows() {
        let mut g = SocialGraph::new(["a", "b", "c"]);
        g.apply_by_index(0, 1, RelationKind::Follow).unwrap();
        let x = vec![vec![1.0], vec![3.0], vec![7.0]];
        assert_eq!(propagate(&g, &x, PropagationConfig::new(0.2, 0).unwrap()).unwrap(), x);
        let y = propagate(&g, &x, PropagationConfig::new(0.5, 1).unwrap()).unwrap();
        assert_eq!(y[0], vec![2.0]);
        // b and c have no followees: pure self-retention.
        assert_eq!(y[1], vec![3.0]);
        assert_eq!(y[2], vec![7.0]);
    }

    #[test]
    fn propagate_shape_errors() {
        let g = pair();
        assert!(matches!(
            propagate(&g, &[vec![1.0]], PropagationConfig::new(0.5, 1).unwrap()),
            Err(Error::Shape { expected: 2, actual: 1 })
        ));
        assert!(PropagationConfig::new(1.5, 1).is_err());
    }

    #[test]
    fn abm_step_examples() {
        let g = pair();
        let mut g2 = g.clone();
        g2.apply_by_index(0, 1, RelationKind::Follow).unwrap();
        let view = g2.abm_view();
        let out = abm_step(&view, &BeliefVector::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(out.belief.values(), &[0.5, 0.5]);
        assert!(!out.disconnected);

        let uniform = BeliefVector::new(vec![0.5; 2]).unwrap();
        assert_eq!(abm_step(&view, &uniform).unwrap().belief, uniform);

        // Path a-b-c with self-loops: rows average {a,b}, {a,b,c}, {b,c}.
        let mut p3 = SocialGraph::new(["a", "b", "c"]);
        p3.apply_by_index(0, 1, RelationKind::Follow).unwrap();
        p3.apply_by_index(2, 1, RelationKind::Follow).unwrap();
        let out = abm_step(&p3.abm_view(), &BeliefVector::new(vec![1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(out.belief.values(), &[0.5, 1.0 / 3.0, 0.0]);

        let out = abm_step(&g.abm_view(), &BeliefVector::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert!(out.disconnected);
    }

    #[test]
    fn abm_view_leaves_graph_untouched() {
        let g = SocialGraph::erdos_renyi(8, 0.3, 2);
        let before = g.clone();
        let _ = g.abm_view();
        assert_eq!(g, before);
    }

    #[test]
    fn converge_consensus_input_takes_no_steps() {
        let g = SocialGraph::erdos_renyi_undirected(5, 0.9, 3);
        let out = abm_converge(&g.abm_view(), &BeliefVector::new(vec![0.3; 5]).unwrap(), 1e-9, 100).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.spread, 0.0);
        assert!(out.converged);
    }

    #[test]
    fn two_cliques_do_not_converge() {
        let mut g = SocialGraph::new(["a", "b", "c", "d"]);
        for (i, j) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
            g.apply_by_index(i, j, RelationKind::Follow).unwrap();
        }
        let x0 = BeliefVector::new(vec![1.0, 0.8, 0.2, 0.0]).unwrap();
        let out = abm_converge(&g.abm_view(), &x0, 1e-6, 200).unwrap();
        assert!(!out.converged);
        let v = out.belief.values();
        assert!((v[0] - 0.9).abs() < 1e-9 && (v[1] - 0.9).abs() < 1e-9);
        assert!((v[2] - 0.1).abs() < 1e-9 && (v[3] - 0.1).abs() < 1e-9);
        assert!(matches!(
            stationary_distribution(&g.abm_view()),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn stationary_regular_and_star() {
        // 4-cycle, undirected: 2-regular (+ self-loop) -> uniform.
        let mut c4 = SocialGraph::new(["a", "b", "c", "d"]);
        for (i, j) in [(0, 1), (1, 2), (2, 3), (3, 0)] {
            c4.apply_by_index(i, j, RelationKind::Follow).unwrap();
        }
        let pi = stationary_distribution(&c4.abm_view()).unwrap();
        for p in &pi {
            assert!((p - 0.25).abs() < 1e-9);
        }
        // Star K1,3 with self-loops: degrees 4,2,2,2.
        let mut star = SocialGraph::new(["a", "b", "c", "d"]);
        for j in 1..4 {
            star.apply_by_index(j, 0, RelationKind::Follow).unwrap();
        }
        let pi = stationary_distribution(&star.abm_view()).unwrap();
        let expected = [0.4, 0.2, 0.2, 0.2];
        for (p, e) in pi.iter().zip(expected) {
            assert!((p - e).abs() < 1e-9, "{pi:?}");
        }
    }

    #[test]
    fn belief_vector_validates_range() {
        assert!(BeliefVector::new(vec![0.0, 1.0]).is_ok());
        assert!(BeliefVector::new(vec![1.2]).is_err());
    }
}
