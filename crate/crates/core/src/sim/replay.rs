//! Rebuilding a run from its event log alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::events::{Event, EventRecord, RoundMetrics, Tracker};
use crate::graph::SocialGraph;
use crate::stance::Stance;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOptions {
    /// Must match the run's `misinfo_window`.
    pub misinfo_window: u32,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self { misinfo_window: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    /// Last complete round in the log.
    pub round: u32,
    pub graph: SocialGraph,
    pub smoothed: Vec<f64>,
    pub discrete: Vec<Stance>,
    pub misinformed: Vec<bool>,
    /// Metrics recomputed from the events.
    pub metrics: Vec<RoundMetrics>,
    /// Rounds whose logged metric differs from the recomputed one.
    pub mismatched: Vec<u32>,
    /// Events applied; anything after the last complete round is ignored.
    pub applied: usize,
    /// The final line was cut off mid-record.
    pub truncated: bool,
}

/// Parses JSONL, checking that sequence numbers run 0, 1, 2, ... A
/// malformed final line is treated as a torn write and dropped.
pub fn parse_log(text: &str) -> Result<(Vec<EventRecord>, bool)> {
    let lines: Vec<(usize, &str)> = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    let mut truncated = false;
    for (k, (lineno, line)) in lines.iter().enumerate() {
        match serde_json::from_str::<EventRecord>(line) {
            Ok(rec) => {
                let expected = out.len() as u64;
                if rec.seq != expected {
                    return Err(Error::CorruptLog(format!(
                        "sequence gap at line {}: expected seq {expected}, found {}",
                        lineno + 1,
                        rec.seq
                    )));
                }
                out.push(rec);
            }
            Err(_) if k + 1 == lines.len() => truncated = true,
            Err(e) => return Err(Error::CorruptLog(format!("line {}: {e}", lineno + 1))),
        }
    }
    Ok((out, truncated))
}

pub fn replay_records(records: &[EventRecord], opts: ReplayOptions) -> Result<ReplayOutput> {
    let cut = match records.iter().rposition(|r| matches!(r.event, Event::Metric(_))) {
        Some(i) => i + 1,
        None => records.iter().take_while(|r| r.round == 0).count(),
    };
    let mut tracker = Tracker::new(opts.misinfo_window);
    let mut metrics = Vec::new();
    let mut mismatched = Vec::new();
    let mut round = 0;
    for rec in &records[..cut] {
        round = rec.round;
        if let Some(m) = tracker.apply(rec)? {
            if let Event::Metric(logged) = &rec.event {
                if *logged != m {
                    mismatched.push(rec.round);
                }
            }
            metrics.push(m);
        }
    }
    Ok(ReplayOutput {
        round,
        graph: tracker.graph(),
        smoothed: tracker.smoothed().to_vec(),
        discrete: tracker.discrete().to_vec(),
        misinformed: tracker.mis_flags(round),
        metrics,
        mismatched,
        applied: cut,
        truncated: false,
    })
}

pub fn replay_text(text: &str, opts: ReplayOptions) -> Result<ReplayOutput> {
    let (records, truncated) = parse_log(text)?;
    let mut out = replay_records(&records, opts)?;
    out.truncated = truncated;
    Ok(out)
}

pub fn replay_file(path: &Path, opts: ReplayOptions) -> Result<ReplayOutput> {
    replay_text(&std::fs::read_to_string(path)?, opts)
}
