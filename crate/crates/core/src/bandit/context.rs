//! Arm context vectors.

use crate::embed::EmbeddingProvider;
use crate::graph::{propagate, PropagationConfig, SocialGraph};
use crate::{NodeIdx, Result};

/// Exposure levels an exposure arm can set.
pub const EXPOSURE_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Embeds each user's `profile ⧺ memory digest` text and propagates the
/// rows `hops` times over the follow graph. `texts` is indexed like the
/// graph's nodes.
pub fn user_contexts(embedder: &dyn EmbeddingProvider, texts: &[String], graph: &SocialGraph, cfg: PropagationConfig) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let x = embedder.embed_batch(&refs)?;
    propagate(graph, &x, cfg)
}

/// Context of a single user.
pub fn user_context(
    embedder: &dyn EmbeddingProvider,
    texts: &[String],
    graph: &SocialGraph,
    cfg: PropagationConfig,
    user: NodeIdx,
) -> Result<Vec<f64>> {
    Ok(user_contexts(embedder, texts, graph, cfg)?.swap_remove(user))
}

/// `user ⧺ post`, dimension `2 * dim`.
pub fn recommend_context(user: &[f64], post: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(user.len() + post.len());
    v.extend_from_slice(user);
    v.extend_from_slice(post);
    v
}

/// `author ⧺ [level, 1 - level, one-hot(level), 0...]`, padded so exposure
/// arms share the recommend arms' `2 * dim` input width.
pub fn exposure_context(author: &[f64], level_idx: usize) -> Vec<f64> {
    let dim = author.len();
    let level = EXPOSURE_LEVELS[level_idx];
    let mut tail = vec![0.0; dim.max(2 + EXPOSURE_LEVELS.len())];
    tail[0] = level;
    tail[1] = 1.0 - level;
    tail[2 + level_idx] = 1.0;
    let mut v = author.to_vec();
    v.extend(tail);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::graph::RelationKind;

    #[test]
    fn hops_zero_is_raw_embedding() {
        let e = HashEmbedder::new(8, 1);
        let g = SocialGraph::new(["a", "b"]);
        let texts = vec!["alpha beta".to_string(), "gamma".to_string()];
        let c = user_context(&e, &texts, &g, PropagationConfig::new(0.5, 0).unwrap(), 0).unwrap();
        assert_eq!(c, e.embed_text("alpha beta"));
        // Isolated user keeps its own embedding under any number of hops.
        let c = user_context(&e, &texts, &g, PropagationConfig::new(0.5, 3).unwrap(), 1).unwrap();
        assert_eq!(c, e.embed_text("gamma"));
    }

    #[test]
    fn line_graph_one_hop() {
        let e = HashEmbedder::new(4, 2);
        let mut g = SocialGraph::new(["a", "b", "c"]);
        g.apply_by_index(0, 1, RelationKind::Follow).unwrap();
        g.apply_by_index(1, 2, RelationKind::Follow).unwrap();
        let texts: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let raw: Vec<Vec<f64>> = texts.iter().map(|t| e.embed_text(t)).collect();
        let c = user_contexts(&e, &texts, &g, PropagationConfig::new(0.5, 1).unwrap()).unwrap();
        for k in 0..4 {
            assert!((c[0][k] - 0.5 * (raw[0][k] + raw[1][k])).abs() < 1e-12);
            assert!((c[1][k] - 0.5 * (raw[1][k] + raw[2][k])).abs() < 1e-12);
            assert!((c[2][k] - raw[2][k]).abs() < 1e-12);
        }
    }

    #[test]
    fn exposure_context_width() {
        let v = exposure_context(&[0.1; 16], 2);
        assert_eq!(v.len(), 32);
        assert_eq!(&v[16..23], &[0.5, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }
}
