//! Reward functions for the two intervention objectives.

use serde::{Deserialize, Serialize};

use crate::agent::ActionKind;

/// Engagement weight h(o) per reaction kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngagementWeights {
    pub reply: f64,
    pub retweet: f64,
    pub like: f64,
    pub follow: f64,
    pub dislike: f64,
    pub do_nothing: f64,
    pub tweet: f64,
    pub unfollow: f64,
}

impl Default for EngagementWeights {
    fn default() -> Self {
        Self {
            reply: 1.0,
            retweet: 1.0,
            like: 0.5,
            follow: 1.0,
            dislike: 0.25,
            do_nothing: 0.0,
            tweet: 0.0,
            unfollow: 0.0,
        }
    }
}

impl EngagementWeights {
    pub fn h(&self, kind: ActionKind) -> f64 {
        match kind {
            ActionKind::Reply => self.reply,
            ActionKind::Retweet => self.retweet,
            ActionKind::Like => self.like,
            ActionKind::Follow => self.follow,
            ActionKind::Dislike => self.dislike,
            ActionKind::DoNothing => self.do_nothing,
            ActionKind::Tweet => self.tweet,
            ActionKind::Unfollow => self.unfollow,
        }
    }
}

/// A receiver's reaction to one delivered message, reduced to the two
/// quantities the cross-view reward needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionOutcome {
    pub receiver: String,
    pub kind: ActionKind,
    pub content: Option<String>,
    pub toxicity: f64,
    pub engagement_weight: f64,
}

/// `(|s_sender - s_receiver| / 2) * h * max(0, 1 - mu * tau)`, clamped to
/// [0,1].
pub fn reward_cross_view(s_sender: f64, s_receiver: f64, engagement_weight: f64, toxicity: f64, mu: f64) -> f64 {
    let divergence = (s_sender - s_receiver).abs() / 2.0;
    let penalty = (1.0 - mu * toxicity).max(0.0);
    let r = divergence * engagement_weight * penalty;
    if r.is_nan() {
        0.0
    } else {
        r.clamp(0.0, 1.0)
    }
}

pub fn reward_for(s_sender: f64, s_receiver: f64, outcome: &ReactionOutcome, mu: f64) -> f64 {
    reward_cross_view(s_sender, s_receiver, outcome.engagement_weight, outcome.toxicity, mu)
}

/// `max(0, mis_prev - mis_now)`: 1 on recovery, 0 otherwise.
pub fn reward_misinfo(mis_prev: bool, mis_now: bool) -> f64 {
    (f64::from(u8::from(mis_prev)) - f64::from(u8::from(mis_now))).max(0.0)
}

/// The same clamp applied to the misinformed fraction of a group, so
/// new infections offset recoveries. A one-member group reduces to
/// [`reward_misinfo`]. Empty groups give 0.
pub fn reward_misinfo_group(prev: &[bool], now: &[bool]) -> f64 {
    if prev.is_empty() || prev.len() != now.len() {
        return 0.0;
    }
    let frac = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
    (frac(prev) - frac(now)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cross_view_examples() {
        let h = EngagementWeights::default();
        assert_eq!(reward_cross_view(1.0, -1.0, h.h(ActionKind::Reply), 0.0, 4.0), 1.0);
        assert_eq!(reward_cross_view(1.0, -1.0, h.h(ActionKind::Reply), 0.25, 4.0), 0.0);
        assert_eq!(reward_cross_view(0.3, -0.9, h.h(ActionKind::Reply), 0.25, 4.0), 0.0);
        assert_eq!(reward_cross_view(1.0, -1.0, h.h(ActionKind::DoNothing), 0.0, 4.0), 0.0);
    }

    #[test]
    fn misinfo_examples() {
        assert_eq!(reward_misinfo(true, false), 1.0);
        assert_eq!(reward_misinfo(false, false), 0.0);
        assert_eq!(reward_misinfo(false, true), 0.0);
        assert_eq!(reward_misinfo(true, true), 0.0);
    }

    #[test]
    fn group_reward_nets_infections() {
        assert_eq!(reward_misinfo_group(&[true, true, false, false], &[false, false, false, false]), 0.5);
        assert_eq!(reward_misinfo_group(&[true, false], &[false, true]), 0.0);
        assert_eq!(reward_misinfo_group(&[true, true, false, false], &[false, false, true, false]), 0.25);
        assert_eq!(reward_misinfo_group(&[], &[]), 0.0);
    }

    proptest! {
        #[test]
        fn singleton_group_matches(a: bool, b: bool) {
            prop_assert_eq!(reward_misinfo_group(&[a], &[b]), reward_misinfo(a, b));
        }


        #[test]
        fn rewards_bounded(ss in -1.0f64..=1.0, sr in -1.0f64..=1.0, k in 0usize..8, tau in 0.0f64..=1.0, mu in 0.0f64..10.0) {
            let h = EngagementWeights::default().h(ActionKind::ALL[k]);
            let r = reward_cross_view(ss, sr, h, tau, mu);
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
