//! Round loop, event log, metrics, replay and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod events;
pub mod population;
pub mod replay;
pub mod run;

pub use checkpoint::{latest_checkpoint, run_in_dir, Checkpoint, DirRun};
pub use config::{NewsItem, Objective, RunConfig};
pub use events::{Event, EventRecord, RoundMetrics, Tracker};
pub use replay::{replay_file, replay_records, replay_text, ReplayOptions, ReplayOutput};
pub use run::{run, run_with, RunOutput, Services, SimState, Simulation};
