use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use social_sandbox::agent::{ActionKind, Backend};
use social_sandbox::bandit::synthetic::{bench, SyntheticConfig};
use social_sandbox::dataprep::{self, BackendGenerator, CandidateGenerator, Manifest, PoolSampler};
use social_sandbox::embed::HashEmbedder;
use social_sandbox::graph::{abm_converge, stationary_distribution, BeliefVector, SocialGraph};
use social_sandbox::sim::config::BackendKind;
use social_sandbox::sim::{replay_file, run_in_dir, ReplayOptions, RoundMetrics, RunConfig, Services};

#[derive(Parser)]
#[command(name = "social-sandbox", version, about = "Seeded social-platform simulation with learned interventions")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchEnv {
    Synthetic,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a simulation from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the event log and checkpoints.
        #[arg(long, default_value = "run-out")]
        out: PathBuf,
        /// Continue from the latest checkpoint in `out`.
        #[arg(long)]
        resume: bool,
    },
    /// Rebuild final state and metrics from an event log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 3)]
        misinfo_window: u32,
    },
    /// Export per-round metrics from an event log as CSV.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        misinfo_window: u32,
    },
    /// Check averaging-model consensus on a random connected graph.
    VerifyAbm {
        #[arg(long, default_value_t = 50)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        p: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
    },
    /// Load a metadata directory and write the population as JSON.
    Ingest {
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build SFT records from (event, user, action) tuples.
    ExportSft {
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        tuples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build DPO records with J rejected responses each.
    ExportDpo {
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        tuples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        j: usize,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        /// Candidates drawn per tuple before filtering.
        #[arg(long, default_value_t = 12)]
        pool: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run config naming an LLM backend to generate candidates.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare bandit policies on the synthetic environment.
    BenchBandit {
        #[arg(long, value_enum, default_value = "synthetic")]
        env: BenchEnv,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 2000)]
        rounds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RunConfig::from_toml(&text)?)
}

fn write_metrics_csv(path: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = [
        "round",
        "stance_mean",
        "stance_std",
        "mean_toxicity",
        "cross_interaction_ratio",
        "misinformation_ratio",
        "interactions",
        "cross_interactions",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(ActionKind::ALL.iter().map(|k| format!("n_{}", k.label())));
    w.write_record(&header)?;
    for m in metrics {
        let mut row = vec![
            m.round.to_string(),
            m.stance_mean.to_string(),
            m.stance_std.to_string(),
            m.mean_toxicity.to_string(),
            m.cross_interaction_ratio.to_string(),
            m.misinformation_ratio.to_string(),
            m.interactions.to_string(),
            m.cross_interactions.to_string(),
        ];
        row.extend(ActionKind::ALL.iter().map(|k| m.actions.get(k.label()).copied().unwrap_or(0).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_with_manifest<T: serde::Serialize>(out: &Path, kind: &str, records: &[T], manifest: &Manifest) -> Result<()> {
    dataprep::write_jsonl(BufWriter::new(File::create(out)?), kind, records)?;
    let mpath = out.with_extension("manifest.json");
    serde_json::to_writer_pretty(File::create(&mpath)?, manifest)?;
    println!("{} {kind} records ({} skipped) -> {}, manifest {}", records.len(), manifest.skipped, out.display(), mpath.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Run { config, out, resume } => {
            let cfg = load_config(&config)?;
            let services = Services::from_config(&cfg)?;
            let res = run_in_dir(cfg, services, &out, resume)?;
            write_metrics_csv(&out.join("metrics.csv"), &res.metrics)?;
            if let Some(m) = res.metrics.last() {
                println!("{}", serde_json::to_string(m)?);
            }
            println!("finished round {}; log {}", res.round, res.events.display());
        }
        Cmd::Replay { log, misinfo_window } => {
            let r = replay_file(&log, ReplayOptions { misinfo_window })?;
            let summary = serde_json::json!({
                "round": r.round,
                "events_applied": r.applied,
                "truncated": r.truncated,
                "users": r.smoothed.len(),
                "edges": r.graph.edge_count(),
                "stance": r.graph.ids().iter().zip(&r.smoothed).map(|(id, s)| (id.clone(), *s)).collect::<std::collections::BTreeMap<_, _>>(),
                "misinformed": r.misinformed.iter().filter(|m| **m).count(),
                "metric_rounds": r.metrics.len(),
                "mismatched_rounds": r.mismatched,
                "final_metrics": r.metrics.last(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if !r.mismatched.is_empty() {
                bail!("logged metrics disagree with the replay in rounds {:?}", r.mismatched);
            }
        }
        Cmd::Metrics { log, out, misinfo_window } => {
            let r = replay_file(&log, ReplayOptions { misinfo_window })?;
            write_metrics_csv(&out, &r.metrics)?;
            println!("{} rounds -> {}", r.metrics.len(), out.display());
        }
        Cmd::VerifyAbm {
            nodes,
            seed,
            p,
            tol,
            max_iters,
        } => {
            let graph = SocialGraph::erdos_renyi_undirected(nodes, p, seed);
            let view = graph.abm_view();
            if !view.is_connected() {
                bail!("graph with seed {seed} has {} components; raise --p or pick another seed", view.components());
            }
            let mut rng = social_sandbox::seed::rng(seed, &[99]);
            let x0 = BeliefVector::new((0..nodes).map(|_| rand::Rng::random_range(&mut rng, 0.0..=1.0)).collect())?;
            let conv = abm_converge(&view, &x0, tol, max_iters)?;
            let pi = stationary_distribution(&view)?;
            let predicted: f64 = pi.iter().zip(x0.values()).map(|(a, b)| a * b).sum();
            let consensus = conv.belief.values().iter().sum::<f64>() / nodes as f64;
            let report = serde_json::json!({
                "nodes": nodes,
                "edges": graph.edge_count() / 2,
                "iterations": conv.iterations,
                "spread": conv.spread,
                "converged": conv.converged,
                "consensus": consensus,
                "predicted": predicted,
                "error": (consensus - predicted).abs(),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !conv.converged || (consensus - predicted).abs() >= tol {
                bail!("consensus check failed");
            }
        }
        Cmd::Ingest { meta, out } => {
            let ingested = dataprep::ingest(&meta, &Backend::Scripted)?;
            let r = &ingested.report;
            println!(
                "{} files, {} users, {} edges, {} history posts, {} skipped, {} dangling neighbor ids",
                r.files,
                r.users,
                r.edges,
                ingested.history.len(),
                r.skipped.len(),
                r.dangling_neighbors
            );
            for (path, why) in &r.skipped {
                eprintln!("skipped {}: {why}", path.display());
            }
            if let Some(out) = out {
                serde_json::to_writer_pretty(BufWriter::new(File::create(&out)?), &ingested)?;
                println!("population -> {}", out.display());
            }
        }
        Cmd::ExportSft { meta, tuples, out } => {
            let ingested = dataprep::ingest(&meta, &Backend::Scripted)?;
            let tuples = dataprep::read_tuples(&std::fs::read_to_string(&tuples)?)?;
            let export = dataprep::export_sft(&tuples, &ingested.profiles);
            let manifest = Manifest::new("sft", export.records.len(), export.skipped, 0, 0.0);
            write_with_manifest(&out, "sft", &export.records, &manifest)?;
        }
        Cmd::ExportDpo {
            meta,
            tuples,
            out,
            j,
            threshold,
            pool,
            seed,
            config,
        } => {
            let cfg = match config {
                Some(p) => Some(load_config(&p)?),
                None => None,
            };
            let services = match &cfg {
                Some(c) if c.backend.kind == BackendKind::Llm => Some(Services::from_config(c)?),
                _ => None,
            };
            let backend = services.as_ref().map_or(Backend::Scripted, |s| s.backend.clone());
            let ingested = dataprep::ingest(&meta, &backend)?;
            let tuples = dataprep::read_tuples(&std::fs::read_to_string(&tuples)?)?;
            let sampler = PoolSampler::new(&tuples, pool, seed);
            let llm_gen = backend.llm().map(|llm| BackendGenerator {
                backend: llm,
                profiles: ingested.profiles.iter().map(|p| (p.user_id.clone(), p.clone())).collect(),
                per_tuple: pool,
            });
            let generator: &dyn CandidateGenerator = match &llm_gen {
                Some(g) => g,
                None => &sampler,
            };
            let dim = cfg.as_ref().map_or(64, |c| c.embedding.dim);
            let embedder = HashEmbedder::new(dim, 0);
            let export = dataprep::export_dpo(&tuples, &ingested.profiles, generator, &embedder, j, threshold)?;
            let manifest = Manifest::new("dpo", export.records.len(), export.skipped, j, threshold);
            write_with_manifest(&out, "dpo", &export.records, &manifest)?;
        }
        Cmd::BenchBandit { env, seeds, rounds, out } => {
            let BenchEnv::Synthetic = env;
            let cfg = SyntheticConfig {
                rounds,
                ..SyntheticConfig::default()
            };
            let seed_list: Vec<u64> = (0..seeds).collect();
            let report = bench(cfg, &seed_list)?;
            for s in &report.seeds {
                println!("seed {:>3}: ee {:>9.2}  random {:>9.2}  eps-greedy {:>9.2}", s.seed, s.ee, s.random, s.epsilon_greedy);
            }
            println!(
                "mean: ee {:.2}  random {:.2}  eps-greedy {:.2}; ee beats random in {}/{} seeds",
                report.mean(|s| s.ee),
                report.mean(|s| s.random),
                report.mean(|s| s.epsilon_greedy),
                report.ee_beats_random(),
                report.seeds.len()
            );
            if let Some(out) = out {
                serde_json::to_writer_pretty(File::create(&out)?, &report)?;
            }
        }
    }
    Ok(())
}
