//! Experiment CLI for the on-ramp merging simulator.
//!
//! Subcommands: `train-rl`, `run`, `eval`, `sweep-coop`, `optimize`,
//! `export-data`, `record-transcripts`. Configuration comes from an optional
//! JSON file (`--config`); every run is reproducible from `--seed`.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use ccma_core::harness::{
    aggregate_metrics, run_episode, run_episodes, BackendKind, CascadeLevel, EpisodeBackend,
    EpisodeRuntime, ExperimentConfig, MatrixSpec, StepFrame,
};
use ccma_core::llm::{BackendConfig, LmSession};
use ccma_core::optimizer::{optimize, retrieve, EvalContext, RewardStore, ScenarioDescriptor};
use ccma_core::policy::{train, PolicyArtifact, TrainConfig};
use ccma_core::reward::RewardWeights;
use ccma_core::sim::Density;
use ccma_core::util::stable_hash_json;
use ccma_core::{Error, Result};

mod synth;

#[derive(Parser)]
#[command(
    name = "ccma",
    version,
    about = "Deterministic highway on-ramp merging experiments with a cascaded decision stack"
)]
struct Cli {
    /// Experiment configuration file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for episode derivation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory all outputs are written to.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the individual-level policy and write the artifact.
    TrainRl {
        /// Training episodes.
        #[arg(long, default_value_t = 300)]
        episodes: usize,
        /// Artifact path (default: <out-dir>/policy_<density>.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run seeded episodes, writing trajectory logs and metrics.
    Run {
        /// Override the configured episode count.
        #[arg(long)]
        episodes: Option<usize>,
        /// Record remote transcripts to this file.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Replay a recorded transcript instead of calling the backend.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Evaluate the full level x density matrix and write the CSV.
    Eval {
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Sweep the cooperation weight, one CSV row per value.
    SweepCoop {
        /// Comma-separated cooperation weights in [0,1].
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Tune reward weights against a persistent record store.
    Optimize {
        /// Evaluation batches.
        #[arg(long, default_value_t = 10)]
        budget: usize,
        /// Disable retrieval warm-starting and blending.
        #[arg(long)]
        no_rag: bool,
        /// Store file (default: <out-dir>/rewards.jsonl).
        #[arg(long)]
        store: Option<PathBuf>,
        /// Episodes per evaluation batch.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Export prompt/label samples from fresh episode logs.
    ExportData {
        /// Vehicles per prompt block.
        #[arg(long, default_value_t = 2)]
        prompt_vehicles: usize,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Record backend transcripts for offline replay.
    RecordTranscripts {
        #[arg(long)]
        episodes: Option<usize>,
        /// Serve responses from the built-in rule-oracle service instead of
        /// a remote endpoint (fully offline).
        #[arg(long)]
        synthesize: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    let cfg = match path {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn policy_path_for(cfg: &ExperimentConfig, out_dir: &Path, density: Density) -> PathBuf {
    cfg.policy_path
        .clone()
        .unwrap_or_else(|| out_dir.join(format!("policy_{}.json", density.name())))
}

fn load_policy(cfg: &ExperimentConfig, out_dir: &Path, density: Density) -> Result<PolicyArtifact> {
    let path = policy_path_for(cfg, out_dir, density);
    if !path.exists() {
        return Err(Error::Config(format!(
            "policy artifact {} not found; run `ccma train-rl` first",
            path.display()
        )));
    }
    PolicyArtifact::load(&path)
}

fn resolve_weights(cfg: &ExperimentConfig) -> Result<RewardWeights> {
    use ccma_core::harness::WeightsSource;
    match &cfg.weights {
        WeightsSource::Default => Ok(RewardWeights::default()),
        WeightsSource::File { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read weights {}: {e}", path.display())))?;
            let w: RewardWeights = serde_json::from_str(&text)?;
            w.validate()?;
            Ok(w)
        }
        WeightsSource::Store { path } => {
            let descriptor = ScenarioDescriptor::from_config(&cfg.scenario);
            best_store_weights(path, &descriptor)?
                .ok_or_else(|| Error::Config(format!("store {} holds no records", path.display())))
        }
    }
}

fn best_store_weights(
    path: &Path,
    descriptor: &ScenarioDescriptor,
) -> Result<Option<RewardWeights>> {
    let store = RewardStore::open(path)?;
    if store.is_empty() {
        return Ok(None);
    }
    let related = retrieve(&store, descriptor, 3)?;
    Ok(related
        .iter()
        .fold(None::<&ccma_core::optimizer::RewardRecord>, |acc, r| match acc {
            Some(b) if b.objective >= r.objective => Some(b),
            _ => Some(r),
        })
        .map(|r| r.weights))
}

fn runtime<'p>(
    cfg: &ExperimentConfig,
    policy: &'p PolicyArtifact,
    weights: RewardWeights,
) -> EpisodeRuntime<'p> {
    EpisodeRuntime {
        scenario: cfg.scenario.clone(),
        level: cfg.level,
        horizon: cfg.horizon,
        policy,
        weights,
        cooperative_hdvs: cfg.cooperative_hdvs,
        region_radius: cfg.region_radius,
        temperature: cfg.temperature,
        lm_fallback: cfg.lm_fallback,
    }
}

/// Build the backend session for remote or replay runs.
fn build_session(
    cfg: &ExperimentConfig,
    record: &Option<PathBuf>,
    replay: &Option<PathBuf>,
) -> Result<Option<LmSession>> {
    let replay_path = replay.clone().or_else(|| {
        (cfg.backend == BackendKind::Replay)
            .then(|| cfg.transcript_path.clone())
            .flatten()
    });
    match cfg.backend {
        BackendKind::RuleOracle => Ok(None),
        BackendKind::Replay => {
            let path = replay_path.ok_or_else(|| {
                Error::Config("replay backend needs a transcript path (--replay or config)".into())
            })?;
            Ok(Some(LmSession::replay(&path)?))
        }
        BackendKind::RemoteLm => {
            let backend_cfg = BackendConfig::from_env().ok_or_else(|| {
                Error::BackendUnavailable(format!(
                    "{} is not set and the backend is remote_lm",
                    ccma_core::llm::ENV_ENDPOINT
                ))
            })?;
            backend_cfg.validate()?;
            let mut session = LmSession::http(backend_cfg);
            if let Some(path) = record.clone().or_else(|| cfg.transcript_path.clone()) {
                session = session.with_recorder(&path)?;
            }
            Ok(Some(session))
        }
    }
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for line in lines {
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Global flags shared by every subcommand.
struct CliCtx {
    seed: u64,
    out_dir: PathBuf,
}

fn dispatch(cli: Cli) -> Result<()> {
    let Cli {
        config,
        seed,
        out_dir,
        command,
    } = cli;
    let cfg = load_config(&config)?;
    ensure_out_dir(&out_dir)?;
    let cli = CliCtx { seed, out_dir };
    match command {
        Command::TrainRl { episodes, out } => cmd_train(&cfg, &cli, episodes, out),
        Command::Run {
            episodes,
            record,
            replay,
        } => cmd_run(&cfg, &cli, episodes, record, replay),
        Command::Eval { episodes } => cmd_eval(&cfg, &cli, episodes),
        Command::SweepCoop { values, episodes } => cmd_sweep(&cfg, &cli, &values, episodes),
        Command::Optimize {
            budget,
            no_rag,
            store,
            episodes,
        } => cmd_optimize(&cfg, &cli, budget, no_rag, store, episodes),
        Command::ExportData {
            prompt_vehicles,
            episodes,
        } => cmd_export(&cfg, &cli, prompt_vehicles, episodes),
        Command::RecordTranscripts {
            episodes,
            synthesize,
        } => cmd_record(&cfg, &cli, episodes, synthesize),
    }
}

fn cmd_train(
    cfg: &ExperimentConfig,
    cli: &CliCtx,
    episodes: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let tc = TrainConfig {
        episodes,
        seed: cli.seed,
        ..TrainConfig::default()
    };
    let weights = resolve_weights(cfg)?;
    let artifact = train(&cfg.scenario, &weights, &tc)?;
    let path = out.unwrap_or_else(|| policy_path_for(cfg, &cli.out_dir, cfg.scenario.density));
    artifact.save(&path)?;
    let returns = &artifact.meta.episode_returns;
    let head: f64 = returns.iter().take(10).sum::<f64>() / returns.len().min(10).max(1) as f64;
    let tail: f64 = returns.iter().rev().take(10).sum::<f64>() / returns.len().min(10).max(1) as f64;
    println!(
        "trained {} episodes on {} density; table entries {}; mean return first10 {head:.3} last10 {tail:.3}",
        episodes,
        cfg.scenario.density.name(),
        artifact.q.len()
    );
    println!("policy written to {}", path.display());
    Ok(())
}

fn cmd_run(
    cfg: &ExperimentConfig,
    cli: &CliCtx,
    episodes: Option<usize>,
    record: Option<PathBuf>,
    replay: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(n) = episodes {
        cfg.episodes = n;
        cfg.seeds = None;
    }
    if replay.is_some() && cfg.level.coordinates() {
        cfg.backend = BackendKind::Replay;
    }
    cfg.validate()?;

    let policy = load_policy(&cfg, &cli.out_dir, cfg.scenario.density)?;
    let weights = resolve_weights(&cfg)?;
    let rt = runtime(&cfg, &policy, weights);
    let seeds = cfg.episode_seeds(cli.seed);
    let mut session = build_session(&cfg, &record, &replay)?;

    let results = run_episodes(&rt, session.as_mut(), &seeds)?;
    let mut per_episode = Vec::new();
    for (k, (metrics, frames)) in results.iter().enumerate() {
        let path = cli.out_dir.join(format!("trajectory_{k:03}.jsonl"));
        write_lines(&path, frames.iter().map(StepFrame::to_json_line))?;
        per_episode.push(metrics.clone());
    }
    let aggregate = aggregate_metrics(&per_episode);
    let summary = serde_json::json!({
        "config_hash": format!("{:016x}", stable_hash_json(&cfg)),
        "seeds": seeds,
        "aggregate": aggregate,
        "per_episode": per_episode,
    });
    std::fs::write(
        cli.out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "ran {} episodes at {}: success {:.3}, collisions {:.3}, merge time {}",
        seeds.len(),
        cfg.level,
        aggregate.success_rate,
        aggregate.collision_rate,
        aggregate
            .mean_merge_time
            .map(|t| format!("{t:.1}s"))
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig, cli: &CliCtx, episodes: Option<usize>) -> Result<()> {
    let episodes = episodes.unwrap_or(cfg.episodes);
    let mut policies_owned: BTreeMap<String, PolicyArtifact> = BTreeMap::new();
    for density in Density::ALL {
        policies_owned.insert(
            density.name().to_string(),
            load_policy(cfg, &cli.out_dir, density)?,
        );
    }
    let policies: BTreeMap<String, &PolicyArtifact> = policies_owned
        .iter()
        .map(|(k, v)| (k.clone(), v))
        .collect();

    let mut weights_optimized = BTreeMap::new();
    if let ccma_core::harness::WeightsSource::Store { path } = &cfg.weights {
        for density in Density::ALL {
            let mut scenario = cfg.scenario.clone();
            scenario.density = density;
            if let Some(w) =
                best_store_weights(path, &ScenarioDescriptor::from_config(&scenario))?
            {
                weights_optimized.insert(density.name().to_string(), w);
            }
        }
    }

    let spec = MatrixSpec {
        levels: CascadeLevel::ALL.to_vec(),
        densities: Density::ALL.to_vec(),
        episodes,
        base_seed: cli.seed,
        scenario: cfg.scenario.clone(),
        horizon: cfg.horizon,
        cooperative_hdvs: cfg.cooperative_hdvs,
        region_radius: cfg.region_radius,
        temperature: cfg.temperature,
        policies,
        weights_default: RewardWeights::default(),
        weights_optimized,
    };
    let (_, csv) = ccma_core::harness::run_matrix(&spec)?;
    let path = cli.out_dir.join("matrix.csv");
    std::fs::write(&path, &csv)?;
    print!("{csv}");
    println!("matrix written to {}", path.display());
    Ok(())
}

fn cmd_sweep(
    cfg: &ExperimentConfig,
    cli: &CliCtx,
    values: &[f64],
    episodes: Option<usize>,
) -> Result<()> {
    let episodes = episodes.unwrap_or(cfg.episodes);
    let policy = load_policy(cfg, &cli.out_dir, cfg.scenario.density)?;
    let weights = resolve_weights(cfg)?;
    let rt = runtime(cfg, &policy, weights);
    let csv = ccma_core::harness::sweep_coop(&rt, values, episodes, cli.seed)?;
    let path = cli.out_dir.join("sweep_coop.csv");
    std::fs::write(&path, &csv)?;
    print!("{csv}");
    println!("sweep written to {}", path.display());
    Ok(())
}

fn cmd_optimize(
    cfg: &ExperimentConfig,
    cli: &CliCtx,
    budget: usize,
    no_rag: bool,
    store: Option<PathBuf>,
    episodes: Option<usize>,
) -> Result<()> {
    let policy = load_policy(cfg, &cli.out_dir, cfg.scenario.density)?;
    let store_path = store.unwrap_or_else(|| cli.out_dir.join("rewards.jsonl"));
    let mut store = RewardStore::open(&store_path)?;
    let ctx = EvalContext {
        scenario: cfg.scenario.clone(),
        level: if cfg.level == CascadeLevel::Individual {
            CascadeLevel::Regional
        } else {
            cfg.level
        },
        horizon: cfg.horizon,
        policy: &policy,
        cooperative_hdvs: cfg.cooperative_hdvs,
        region_radius: cfg.region_radius,
        temperature: cfg.temperature,
        episodes: episodes.unwrap_or(cfg.episodes),
    };
    let outcome = optimize(&ctx, budget, &mut store, !no_rag, cli.seed)?;
    std::fs::write(
        cli.out_dir.join("optimize.json"),
        serde_json::to_string_pretty(&outcome)?,
    )?;
    println!(
        "optimized over {budget} batches ({} records in {}): best objective {:.4}",
        store.len(),
        store_path.display(),
        outcome.best_objective
    );
    Ok(())
}

fn cmd_export(
    cfg: &ExperimentConfig,
    cli: &CliCtx,
    prompt_vehicles: usize,
    episodes: Option<usize>,
) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(n) = episodes {
        cfg.episodes = n;
        cfg.seeds = None;
    }
    let policy = load_policy(&cfg, &cli.out_dir, cfg.scenario.density)?;
    let weights = resolve_weights(&cfg)?;
    let rt = runtime(&cfg, &policy, weights);
    let seeds = cfg.episode_seeds(cli.seed);
    let results = run_episodes(&rt, None, &seeds)?;

    let map_hash = stable_hash_json(&cfg.scenario.geometry);
    let mut all_samples = Vec::new();
    let mut total_skipped = 0usize;
    for (k, (_, frames)) in results.iter().enumerate() {
        let (samples, skipped) = ccma_core::harness::export_dataset(
            frames,
            prompt_vehicles,
            ccma_core::rng::derive(cli.seed, k as u64),
            map_hash,
            cfg.scenario.density,
        )?;
        all_samples.extend(samples);
        total_skipped += skipped;
    }
    let path = cli.out_dir.join("dataset.jsonl");
    write_lines(
        &path,
        all_samples
            .iter()
            .map(|s| serde_json::to_string(s).expect("sample serializes")),
    )?;
    if total_skipped > 0 {
        eprintln!("warning: skipped {total_skipped} timesteps with fewer than {prompt_vehicles} vehicles");
    }
    println!(
        "exported {} samples from {} episodes to {}",
        all_samples.len(),
        seeds.len(),
        path.display()
    );
    Ok(())
}

fn cmd_record(
    cfg: &ExperimentConfig,
    cli: &CliCtx,
    episodes: Option<usize>,
    synthesize: bool,
) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(n) = episodes {
        cfg.episodes = n;
        cfg.seeds = None;
    }
    if cfg.level == CascadeLevel::Individual {
        cfg.level = CascadeLevel::Regional;
    }
    cfg.backend = BackendKind::RemoteLm;

    let weights = resolve_weights(&cfg)?;
    let transcript = cfg
        .transcript_path
        .clone()
        .unwrap_or_else(|| cli.out_dir.join("transcripts.jsonl"));

    // The synthesizing service must outlive the episode loop.
    let mut oracle_service = None;
    let mut session = if synthesize {
        let service = synth::OracleService::start(cfg.scenario.geometry.clone(), weights)?;
        let backend_cfg = BackendConfig {
            endpoint: service.endpoint().to_string(),
            model_name: "rule-oracle-service".into(),
            temperature: 0.0,
            timeout_secs: 30.0,
            max_retries: 1,
            api_key: None,
        };
        oracle_service = Some(service);
        LmSession::http(backend_cfg).with_recorder(&transcript)?
    } else {
        build_session(&cfg, &Some(transcript.clone()), &None)?
            .expect("remote backend has a session")
    };

    let policy = load_policy(&cfg, &cli.out_dir, cfg.scenario.density)?;
    let rt = runtime(&cfg, &policy, weights);
    let seeds = cfg.episode_seeds(cli.seed);

    let mut per_episode = Vec::new();
    for &seed in &seeds {
        let (metrics, _) = run_episode(&rt, &mut EpisodeBackend::Remote(&mut session), seed)?;
        per_episode.push(metrics);
    }
    drop(oracle_service);
    let aggregate = aggregate_metrics(&per_episode);
    println!(
        "recorded {} episodes to {} (success {:.3})",
        seeds.len(),
        transcript.display(),
        aggregate.success_rate
    );
    Ok(())
}
