//! Discrete per-round stance inference and the smoothed stance score.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Latent values with magnitude below this infer as neutral.
pub const LATENT_DEAD_ZONE: f64 = 0.2;

/// Smoothed scores with magnitude below this count as neutral in sign-based
/// metrics.
pub const NEUTRAL_DEAD_ZONE: f64 = 0.05;

/// Discrete stance label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Stance {
    Negative,
    Neutral,
    Positive,
}

impl Stance {
    pub fn value(self) -> i8 {
        match self {
            Stance::Negative => -1,
            Stance::Neutral => 0,
            Stance::Positive => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    /// Sign rule with a symmetric dead zone.
    pub fn from_score(score: f64, dead_zone: f64) -> Self {
        if score >= dead_zone {
            Stance::Positive
        } else if score <= -dead_zone {
            Stance::Negative
        } else {
            Stance::Neutral
        }
    }

    /// Sign of a smoothed score for cross-interaction accounting.
    pub fn of_smoothed(score: f64) -> Self {
        if score.abs() < NEUTRAL_DEAD_ZONE {
            Stance::Neutral
        } else {
            Self::from_score(score, 0.0)
        }
    }

    /// True when both are non-neutral with opposite signs.
    pub fn opposes(self, other: Stance) -> bool {
        self.value() * other.value() == -1
    }
}

impl From<Stance> for i8 {
    fn from(s: Stance) -> i8 {
        s.value()
    }
}

impl TryFrom<i8> for Stance {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            -1 => Ok(Stance::Negative),
            0 => Ok(Stance::Neutral),
            1 => Ok(Stance::Positive),
            other => Err(format!("stance must be -1, 0 or 1, got {other}")),
        }
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

/// `alpha * prev + (1 - alpha) * observed`.
pub fn update_ema(prev: f64, observed: Stance, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(ema_step(prev, observed.as_f64(), alpha))
}

#[inline]
pub(crate) fn ema_step(prev: f64, observed: f64, alpha: f64) -> f64 {
    alpha * prev + (1.0 - alpha) * observed
}

/// Discrete history plus the smoothed score of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceTrace {
    discrete: Vec<Stance>,
    smoothed: f64,
    alpha: f64,
}

impl StanceTrace {
    /// Starts a trace: the smoothed score equals the first observation.
    pub fn start(initial: Stance, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            discrete: vec![initial],
            smoothed: initial.as_f64(),
            alpha,
        })
    }

    pub fn observe(&mut self, observed: Stance) -> f64 {
        self.smoothed = ema_step(self.smoothed, observed.as_f64(), self.alpha);
        self.discrete.push(observed);
        self.smoothed
    }

    pub fn smoothed(&self) -> f64 {
        self.smoothed
    }

    pub fn discrete(&self) -> &[Stance] {
        &self.discrete
    }

    pub fn last(&self) -> Stance {
        *self.discrete.last().expect("trace starts non-empty")
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Scripted inference: sign of the latent stance with a 0.2 dead zone.
pub fn scripted_discrete(latent: f64) -> Stance {
    Stance::from_score(latent, LATENT_DEAD_ZONE)
}

/// Parses a stance classifier reply: the first of `-1`, `0`, `1`, `+1`
/// appearing as a standalone token.
pub fn parse_stance_reply(raw: &str) -> Option<Stance> {
    raw.split(|c: char| !(c.is_ascii_digit() || c == '-' || c == '+'))
        .find_map(|tok| match tok {
            "-1" => Some(Stance::Negative),
            "0" => Some(Stance::Neutral),
            "1" | "+1" => Some(Stance::Positive),
            _ => None,
        })
}
