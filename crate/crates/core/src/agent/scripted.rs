//! Deterministic scripted agents.
//!
//! A scripted agent carries a latent stance in [-1,1] and four behavioral
//! rates. Its reaction to a message with stance tag `s` is drawn from a
//! categorical distribution over primary reactions, with alignment
//! `a = latent * s`, `pos = max(a,0)`, `neg = max(-a,0)`, `neu = 1 - |a|`:
//!
//! | reaction   | weight                                      |
//! |------------|---------------------------------------------|
//! | like       | adoption * pos + 0.2 * neu                  |
//! | retweet    | adoption * pos * abs(latent)                |
//! | reply      | homophily * neg + 0.2 * neu                 |
//! | dislike    | homophily * neg                             |
//! | ignore     | (1-adoption) * pos + (1-homophily) * neg + 0.6 * neu |
//!
//! The agent acts at all with probability `activity_rate`. After a
//! non-ignore primary reaction it may also follow the author (probability
//! `0.5 * adoption * pos`, only when not already following), unfollow
//! (`0.5 * homophily * neg`, only when following), and post its own tweet
//! (`0.1 * activity`). Replies are toxic with probability
//! `toxicity * (0.25 + 0.75 * neg)`. Without a message the agent tweets with
//! probability `activity_rate`.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::action::{Action, ActionBundle, ActionKind};
use crate::stance::Stance;
use crate::{Error, Result};

pub const ADOPTION_STEP: f64 = 0.1;
pub const NEWS_STEP: f64 = 0.25;
pub const POLARIZATION_STEP: f64 = 0.15;
/// Like and retweet weights are scaled by this for sensational messages.
pub const SENSATIONAL_BOOST: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAgentParams {
    pub latent_stance: f64,
    pub activity_rate: f64,
    pub homophily: f64,
    pub toxicity_propensity: f64,
    pub adoption_rate: f64,
}

impl ScriptedAgentParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0,1], got {v}")))
            }
        };
        if !(-1.0..=1.0).contains(&self.latent_stance) {
            return Err(Error::Config(format!(
                "latent_stance must lie in [-1,1], got {}",
                self.latent_stance
            )));
        }
        unit("activity_rate", self.activity_rate)?;
        unit("homophily", self.homophily)?;
        unit("toxicity_propensity", self.toxicity_propensity)?;
        unit("adoption_rate", self.adoption_rate)
    }

    /// Draws a population member. `spread` bounds the initial latent stance.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, spread: f64) -> Self {
        let t: f64 = rng.random();
        Self {
            latent_stance: rng.random_range(-spread..=spread),
            activity_rate: rng.random_range(0.5..=1.0),
            homophily: rng.random(),
            toxicity_propensity: t * t,
            adoption_rate: rng.random_range(0.2..=0.9),
        }
    }

    pub fn stance(&self) -> Stance {
        crate::stance::scripted_discrete(self.latent_stance)
    }

    /// Liking or retweeting a post pulls the latent stance toward the
    /// post's tag.
    pub fn absorb_adoption(&mut self, tag: Stance) {
        self.latent_stance += self.adoption_rate * ADOPTION_STEP * (tag.as_f64() - self.latent_stance);
        self.clamp();
    }

    /// Trigger news shifts the latent stance in its direction. Agents who
    /// currently disagree resist in proportion to their homophily, and past
    /// homophily 0.5 they move away from it instead.
    pub fn absorb_news(&mut self, tag: Stance) {
        let s = tag.as_f64();
        if s == 0.0 {
            return;
        }
        let resist = if self.latent_stance * s < 0.0 { self.homophily } else { 0.0 };
        self.latent_stance += NEWS_STEP * (1.0 - 2.0 * resist) * s;
        self.clamp();
    }

    /// Per-round drift away from neutrality, scaled by homophily.
    pub fn polarize(&mut self) {
        let l = self.latent_stance;
        self.latent_stance += POLARIZATION_STEP * self.homophily * l * (1.0 - l.abs());
        self.clamp();
    }

    fn clamp(&mut self) {
        self.latent_stance = self.latent_stance.clamp(-1.0, 1.0);
    }
}

/// Primary reactions to a message, in sampling order.
pub const PRIMARY: [Reaction; 5] = [
    Reaction::Like,
    Reaction::Retweet,
    Reaction::Reply,
    Reaction::Dislike,
    Reaction::Ignore,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reaction {
    Like,
    Retweet,
    Reply,
    Dislike,
    Ignore,
}

impl Reaction {
    pub fn kind(self) -> Option<ActionKind> {
        match self {
            Reaction::Like => Some(ActionKind::Like),
            Reaction::Retweet => Some(ActionKind::Retweet),
            Reaction::Reply => Some(ActionKind::Reply),
            Reaction::Dislike => Some(ActionKind::Dislike),
            Reaction::Ignore => None,
        }
    }
}

/// Unnormalized weights of [`PRIMARY`] for a message with stance `tag`.
pub fn reaction_weights(p: &ScriptedAgentParams, tag: Stance) -> [f64; 5] {
    let a = p.latent_stance * tag.as_f64();
    let pos = a.max(0.0);
    let neg = (-a).max(0.0);
    let neu = 1.0 - a.abs();
    let d = p.adoption_rate;
    let h = p.homophily;
    [
        d * pos + 0.2 * neu,
        d * pos * p.latent_stance.abs(),
        h * neg + 0.2 * neu,
        h * neg,
        (1.0 - d) * pos + (1.0 - h) * neg + 0.6 * neu,
    ]
}

/// The message an agent is reacting to, as the scripted policy sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageSignal {
    pub stance: Stance,
    pub followed: bool,
    /// Flagged misinformation, which spreads more readily.
    pub sensational: bool,
}

fn categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    // Floating leftovers land on the last positive weight.
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

/// Samples a bundle. Content is filled by [`compose_post`] and
/// [`compose_reply`]; targets are bound by the caller.
pub fn scripted_bundle<R: Rng + ?Sized>(
    p: &ScriptedAgentParams,
    topic: &str,
    message: Option<MessageSignal>,
    round: u32,
    rng: &mut R,
) -> ActionBundle {
    if p.activity_rate <= 0.0 || rng.random::<f64>() >= p.activity_rate {
        return ActionBundle::idle(round);
    }
    let own = p.stance();
    let Some(msg) = message else {
        let toxic = rng.random::<f64>() < p.toxicity_propensity * 0.25;
        let text = compose_post(topic, own, toxic, rng);
        return ActionBundle {
            actions: vec![Action::new(ActionKind::Tweet).with_content(text)],
            round,
        };
    };
    let mut weights = reaction_weights(p, msg.stance);
    if msg.sensational {
        weights[0] *= SENSATIONAL_BOOST;
        weights[1] *= SENSATIONAL_BOOST;
    }
    let primary = PRIMARY[categorical(rng, &weights)];
    let Some(kind) = primary.kind() else {
        return ActionBundle::idle(round);
    };
    let a = p.latent_stance * msg.stance.as_f64();
    let pos = a.max(0.0);
    let neg = (-a).max(0.0);
    let mut actions = Vec::with_capacity(3);
    let mut first = Action::new(kind);
    match kind {
        ActionKind::Reply => {
            let toxic = rng.random::<f64>() < p.toxicity_propensity * (0.25 + 0.75 * neg);
            first.content = Some(compose_reply(topic, a >= 0.0, toxic, rng));
        }
        ActionKind::Retweet => first.content = Some(compose_retweet(own, rng)),
        _ => {}
    }
    actions.push(first);
    if !msg.followed && rng.random::<f64>() < 0.5 * p.adoption_rate * pos {
        actions.push(Action::new(ActionKind::Follow));
    } else if msg.followed && rng.random::<f64>() < 0.5 * p.homophily * neg {
        actions.push(Action::new(ActionKind::Unfollow));
    }
    if rng.random::<f64>() < 0.1 * p.activity_rate {
        let toxic = rng.random::<f64>() < p.toxicity_propensity * 0.25;
        actions.push(Action::new(ActionKind::Tweet).with_content(compose_post(topic, own, toxic, rng)));
    }
    let mut warnings = Vec::new();
    ActionBundle::normalized(actions, round, &mut warnings)
}

const SUPPORT_LINES: [&str; 4] = [
    "I stand with this and will keep defending it",
    "Proud to support this, it protects families",
    "This is the right call and I fully back it",
    "Good news for everyone who believes in this cause",
];
const OPPOSE_LINES: [&str; 4] = [
    "I oppose this and we should reject it",
    "This is wrong and it harms people, stop it",
    "Deeply against this, it must be reversed",
    "Bad news, this hurts the people it claims to help",
];
const NEUTRAL_LINES: [&str; 3] = [
    "Still weighing both sides of this",
    "Reading more before I make up my mind",
    "Interesting debate, curious what others think",
];
const TOXIC_TAILS: [&str; 4] = [
    "anyone who disagrees is an idiot",
    "what a pathetic bunch of clowns",
    "these liars are disgusting trash",
    "only a moron would fall for this garbage",
];
const AGREE_REPLIES: [&str; 3] = [
    "Exactly right, well said",
    "Agreed, thanks for sharing",
    "Couldn't agree more",
];
const DISAGREE_REPLIES: [&str; 3] = [
    "I see it differently, here is why it worries me",
    "Respectfully, the evidence points the other way",
    "Not convinced, this leaves out important context",
];

pub fn compose_post<R: Rng + ?Sized>(topic: &str, stance: Stance, toxic: bool, rng: &mut R) -> String {
    let lines: &[&str] = match stance {
        Stance::Positive => &SUPPORT_LINES,
        Stance::Negative => &OPPOSE_LINES,
        Stance::Neutral => &NEUTRAL_LINES,
    };
    let line = lines.choose(rng).expect("non-empty");
    let tag = match stance {
        Stance::Positive => "#support",
        Stance::Negative => "#oppose",
        Stance::Neutral => "#debate",
    };
    let mut text = format!("{topic}: {line} {tag}");
    if toxic {
        text.push_str(", ");
        text.push_str(TOXIC_TAILS.choose(rng).expect("non-empty"));
    }
    text
}

pub fn compose_reply<R: Rng + ?Sized>(topic: &str, agree: bool, toxic: bool, rng: &mut R) -> String {
    let base = if agree {
        AGREE_REPLIES.choose(rng)
    } else {
        DISAGREE_REPLIES.choose(rng)
    }
    .expect("non-empty");
    if toxic {
        format!("{base} on {topic}, {}", TOXIC_TAILS.choose(rng).expect("non-empty"))
    } else {
        format!("{base} on {topic}")
    }
}

fn compose_retweet<R: Rng + ?Sized>(own: Stance, rng: &mut R) -> String {
    let opts: &[&str] = match own {
        Stance::Positive => &["Worth sharing #support", "Spread the word #support"],
        Stance::Negative => &["Worth sharing #oppose", "Everyone should see this #oppose"],
        Stance::Neutral => &["Sharing for visibility", "Worth a read"],
    };
    opts.choose(rng).expect("non-empty").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    fn params(latent: f64, act: f64, h: f64, tox: f64, d: f64) -> ScriptedAgentParams {
        ScriptedAgentParams {
            latent_stance: latent,
            activity_rate: act,
            homophily: h,
            toxicity_propensity: tox,
            adoption_rate: d,
        }
    }

    #[test]
    fn zero_activity_is_idle() {
        let p = params(0.7, 0.0, 0.5, 0.5, 0.5);
        for i in 0..200 {
            let mut rng = seed::rng(1, &[i]);
            let msg = MessageSignal { stance: Stance::Negative, followed: true, sensational: false };
            assert!(scripted_bundle(&p, "t", Some(msg), 0, &mut rng).is_idle());
            assert!(scripted_bundle(&p, "t", None, 0, &mut rng).is_idle());
        }
    }

    #[test]
    fn aligned_corner_distribution() {
        // Analytic enumeration at latent=+1, tag=+1, homophily=1, adoption=1:
        // a=1, pos=1, neg=0, neu=0, so like=1, retweet=1*1*1=1 and every
        // other weight is 0; P(like or retweet) = 2/2 = 1.
        let p = params(1.0, 1.0, 1.0, 0.3, 1.0);
        let w = reaction_weights(&p, Stance::Positive);
        assert_eq!(w, [1.0, 1.0, 0.0, 0.0, 0.0]);
        for i in 0..500 {
            let mut rng = seed::rng(2, &[i]);
            let msg = MessageSignal { stance: Stance::Positive, followed: false, sensational: false };
            let b = scripted_bundle(&p, "t", Some(msg), 0, &mut rng);
            assert!(matches!(b.actions[0].kind, ActionKind::Like | ActionKind::Retweet), "{b:?}");
        }
    }

    #[test]
    fn opposed_corner_never_adopts() {
        let p = params(1.0, 1.0, 1.0, 0.0, 1.0);
        assert_eq!(reaction_weights(&p, Stance::Negative), [0.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn news_and_polarization_dynamics() {
        let mut p = params(0.5, 1.0, 1.0, 0.0, 0.5);
        p.absorb_news(Stance::Negative);
        // Fully homophilous disagreeing agent backs away from the news.
        assert!((p.latent_stance - 0.75).abs() < 1e-12);
        let mut half = params(0.5, 1.0, 0.5, 0.0, 0.5);
        half.absorb_news(Stance::Negative);
        assert_eq!(half.latent_stance, 0.5);
        p.absorb_news(Stance::Positive);
        assert_eq!(p.latent_stance, 1.0);
        p.polarize();
        assert_eq!(p.latent_stance, 1.0);
        half.polarize();
        assert!((half.latent_stance - (0.5 + 0.15 * 0.5 * 0.5 * 0.5)).abs() < 1e-12);
        let mut z = params(0.0, 1.0, 1.0, 0.0, 0.5);
        z.polarize();
        assert_eq!(z.latent_stance, 0.0);
    }

    #[test]
    fn adoption_pulls_toward_tag() {
        let mut p = params(-0.5, 1.0, 0.5, 0.0, 1.0);
        p.absorb_adoption(Stance::Positive);
        assert!((p.latent_stance - (-0.5 + 0.1 * 1.5)).abs() < 1e-12);
    }

    #[test]
    fn toxic_content_hits_lexicon() {
        let mut rng = seed::rng(0, &[]);
        let text = compose_reply("topic", false, true, &mut rng);
        assert!(crate::toxicity::lexicon_score(&text) > 0.0);
        let clean = compose_reply("topic", false, false, &mut rng);
        assert_eq!(crate::toxicity::lexicon_score(&clean), 0.0);
    }

    fn unit() -> impl Strategy<Value = f64> {
        prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0]
    }

    proptest! {
        #[test]
        fn emitted_actions_satisfy_kind_invariants(
            latent in prop_oneof![Just(-1.0), Just(0.0), Just(1.0), -1.0f64..=1.0],
            act in unit(), h in unit(), tox in unit(), d in unit(),
            tag in 0usize..4, followed: bool, s: u64,
        ) {
            let p = params(latent, act, h, tox, d);
            p.validate().unwrap();
            let msg = match tag {
                0 => None,
                1 => Some(Stance::Negative),
                2 => Some(Stance::Neutral),
                _ => Some(Stance::Positive),
            }.map(|stance| MessageSignal { stance, followed, sensational: false });
            let w = msg.map(|m| reaction_weights(&p, m.stance));
            if let Some(w) = w {
                prop_assert!(w.iter().all(|x| *x >= 0.0) && w.iter().sum::<f64>() > 0.0);
            }
            let mut rng = seed::rng(s, &[]);
            let b = scripted_bundle(&p, "topic", msg, 3, &mut rng);
            prop_assert!(!b.actions.is_empty() && b.actions.len() <= 3);
            for a in &b.actions {
                // Targets are bound later; content requirements hold now.
                if a.kind.needs_content() {
                    prop_assert!(a.content.as_deref().is_some_and(|c| !c.is_empty()));
                }
                if msg.is_none() {
                    prop_assert!(matches!(a.kind, ActionKind::Tweet | ActionKind::DoNothing));
                }
            }
        }
    }
}
