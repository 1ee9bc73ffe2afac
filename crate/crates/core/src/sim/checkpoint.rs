//! On-disk runs: the event log, periodic state snapshots, and resume.
//!
//! Layout of an output directory:
//!
//! ```text
//! events.jsonl
//! checkpoints/round-00010.json
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::events::{EventRecord, RoundMetrics};
use super::replay::parse_log;
use super::run::{Services, SimState, Simulation};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub state: SimState,
}

pub fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

pub fn checkpoint_path(out: &Path, round: u32) -> PathBuf {
    checkpoint_dir(out).join(format!("round-{round:05}.json"))
}

pub fn write_checkpoint(out: &Path, cp: &Checkpoint) -> Result<PathBuf> {
    fs::create_dir_all(checkpoint_dir(out))?;
    let path = checkpoint_path(out, cp.state.round);
    let tmp = path.with_extension("json.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut w, cp)?;
        w.flush()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(path)
}

/// The checkpoint with the highest round, if any.
pub fn latest_checkpoint(out: &Path) -> Result<Option<Checkpoint>> {
    let dir = checkpoint_dir(out);
    if !dir.exists() {
        return Ok(None);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    match paths.last() {
        None => Ok(None),
        Some(p) => {
            let cp: Checkpoint = serde_json::from_reader(std::io::BufReader::new(File::open(p)?))?;
            if cp.version != CHECKPOINT_VERSION {
                return Err(Error::Config(format!("{} has checkpoint version {}", p.display(), cp.version)));
            }
            Ok(Some(cp))
        }
    }
}

#[derive(Debug, Clone)]
pub struct DirRun {
    pub events: PathBuf,
    pub metrics: Vec<RoundMetrics>,
    pub round: u32,
    pub resumed_from: Option<u32>,
}

fn append(w: &mut impl Write, events: &[EventRecord]) -> Result<()> {
    for e in events {
        writeln!(w, "{}", e.to_line())?;
    }
    w.flush()?;
    Ok(())
}

fn snapshot(out: &Path, sim: &Simulation) -> Result<PathBuf> {
    write_checkpoint(
        out,
        &Checkpoint {
            version: CHECKPOINT_VERSION,
            config: sim.config().clone(),
            state: sim.state().clone(),
        },
    )
}

/// Runs into `out`, writing the event log as rounds complete and a
/// checkpoint at round 0, every `checkpoint_every` rounds and at the end.
/// With `resume`, continues from the latest checkpoint, discarding logged
/// events past it. If a round fails before touching state, a checkpoint of
/// the last completed round is written before the error is returned.
pub fn run_in_dir(cfg: RunConfig, services: Services, out: &Path, resume: bool) -> Result<DirRun> {
    fs::create_dir_all(out)?;
    let events_path = out.join(EVENTS_FILE);
    let every = cfg.checkpoint_every;
    let mut resumed_from = None;
    let (mut sim, mut writer) = match (resume, if resume { latest_checkpoint(out)? } else { None }) {
        (true, Some(cp)) => {
            if serde_json::to_value(&cp.config)? != serde_json::to_value(&cfg)? {
                return Err(Error::Config("config differs from the one in the checkpoint".into()));
            }
            let text = fs::read_to_string(&events_path).unwrap_or_default();
            let (records, _) = parse_log(&text)?;
            let keep: Vec<EventRecord> = records.into_iter().take_while(|r| r.seq < cp.state.next_seq).collect();
            if (keep.len() as u64) < cp.state.next_seq {
                return Err(Error::CorruptLog(format!(
                    "log holds {} events but the checkpoint expects {}",
                    keep.len(),
                    cp.state.next_seq
                )));
            }
            let mut w = BufWriter::new(File::create(&events_path)?);
            append(&mut w, &keep)?;
            resumed_from = Some(cp.state.round);
            log::info!("resuming from round {}", cp.state.round);
            (Simulation::resume(cfg, services, cp.state)?, w)
        }
        (true, None) => return Err(Error::Config(format!("no checkpoint to resume in {}", out.display()))),
        (false, _) => {
            let mut sim = Simulation::new(cfg, services)?;
            let mut w = BufWriter::new(File::create(&events_path)?);
            append(&mut w, &sim.drain_events())?;
            snapshot(out, &sim)?;
            (sim, w)
        }
    };
    while !sim.finished() {
        match sim.step() {
            Ok(m) => {
                log::info!(
                    "round {}: stance {:.3}±{:.3}, toxicity {:.4}, cross {:.3}, misinformed {:.3}",
                    m.round,
                    m.stance_mean,
                    m.stance_std,
                    m.mean_toxicity,
                    m.cross_interaction_ratio,
                    m.misinformation_ratio
                );
                append(&mut writer, &sim.drain_events())?;
                if (every > 0 && sim.round() % every == 0) || sim.finished() {
                    snapshot(out, &sim)?;
                }
            }
            Err(e) => {
                let at = sim.round();
                if sim.is_clean() {
                    let path = snapshot(out, &sim)?;
                    log::error!("round {} failed; state of round {at} saved to {}", at + 1, path.display());
                } else {
                    log::error!("round {} failed mid-barrier; resume from the latest checkpoint", at + 1);
                }
                return Err(e);
            }
        }
    }
    let state = sim.into_state();
    Ok(DirRun {
        events: events_path,
        metrics: state.metrics,
        round: state.round,
        resumed_from,
    })
}
