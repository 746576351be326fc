//! Experiment driver: seeded episodes through the decision cascade, metric
//! computation from trajectory logs, the level x density matrix, the
//! cooperation-weight sweep and dataset export.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coord::{
    arbitrate, broadcast, coordinate, form_regions, CommMessage, CoordinateOptions,
    CoordinationBackend, RegionalDecision, DEFAULT_REGION_RADIUS,
};
use crate::error::{Error, Result};
use crate::llm::LmSession;
use crate::policy::{act_individual, hazard_mask, PolicyArtifact};
use crate::reward::RewardWeights;
use crate::rng;
use crate::sim::{
    observe, spawn_scenario, step, Density, MetaAction, RoadGeometry,
    ScenarioConfig, VehicleKind, WorldState, DEFAULT_OBS_RADIUS, SPEED_CAP,
};

/// Decision-stack depth for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CascadeLevel {
    #[serde(rename = "P1")]
    Individual,
    #[serde(rename = "P1P2")]
    Regional,
    #[serde(rename = "P1P2P3")]
    Global,
}

impl CascadeLevel {
    pub const ALL: [CascadeLevel; 3] = [
        CascadeLevel::Individual,
        CascadeLevel::Regional,
        CascadeLevel::Global,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CascadeLevel::Individual => "P1",
            CascadeLevel::Regional => "P1P2",
            CascadeLevel::Global => "P1P2P3",
        }
    }

    /// Whether regional coordination runs at this level.
    pub fn coordinates(self) -> bool {
        !matches!(self, CascadeLevel::Individual)
    }
}

impl fmt::Display for CascadeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which backend drives regional coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    RuleOracle,
    RemoteLm,
    Replay,
}

/// Where the reward weights come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum WeightsSource {
    #[default]
    Default,
    File {
        path: PathBuf,
    },
    Store {
        path: PathBuf,
    },
}

/// Full configuration of one experiment run (the CLI `--config` schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub level: CascadeLevel,
    pub scenario: ScenarioConfig,
    pub episodes: usize,
    /// Explicit per-episode seeds; derived from the base seed when absent.
    pub seeds: Option<Vec<u64>>,
    pub backend: BackendKind,
    pub weights: WeightsSource,
    pub horizon: usize,
    pub cooperative_hdvs: bool,
    pub region_radius: f64,
    pub temperature: f64,
    /// Degrade to the rule oracle when the remote backend fails.
    pub lm_fallback: bool,
    pub policy_path: Option<PathBuf>,
    pub transcript_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            level: CascadeLevel::Individual,
            scenario: ScenarioConfig::new(Density::Medium, 2),
            episodes: 8,
            seeds: None,
            backend: BackendKind::RuleOracle,
            weights: WeightsSource::Default,
            horizon: DEFAULT_HORIZON,
            cooperative_hdvs: true,
            region_radius: DEFAULT_REGION_RADIUS,
            temperature: 1.0,
            lm_fallback: true,
            policy_path: None,
            transcript_path: None,
        }
    }
}

/// Default episode horizon in decision steps.
pub const DEFAULT_HORIZON: usize = 40;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.geometry.validate()?;
        self.scenario.style_mix.validate()?;
        if self.scenario.n_cavs < 1 {
            return Err(Error::Config("n_cavs must be >= 1".into()));
        }
        if self.level == CascadeLevel::Individual && self.backend != BackendKind::RuleOracle {
            return Err(Error::Config(
                "level P1 runs no coordination; backend settings are not allowed".into(),
            ));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.episodes {
                return Err(Error::Config(format!(
                    "episodes ({}) must match the seed list length ({})",
                    self.episodes,
                    seeds.len()
                )));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        Ok(())
    }

    /// The per-episode seeds: explicit list or derived from a base seed.
    pub fn episode_seeds(&self, base_seed: u64) -> Vec<u64> {
        match &self.seeds {
            Some(seeds) => seeds.clone(),
            None => (0..self.episodes)
                .map(|k| rng::derive(base_seed, k as u64))
                .collect(),
        }
    }
}

/// Metrics of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success_rate: f64,
    /// Mean time from merge-zone entry to merge completion over successful
    /// merges; absent when nothing merged.
    pub mean_merge_time: Option<f64>,
    /// 1.0 when any collision occurred this episode, else 0.0.
    pub collision_rate: f64,
    /// Vehicles passing the road end per minute.
    pub throughput: f64,
    pub mean_speed_ratio: f64,
    /// Successful merges backing `mean_merge_time` (used for pooling).
    pub successes: usize,
}

/// Mean metrics over a batch of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsAggregate {
    pub episodes: usize,
    pub success_rate: f64,
    pub success_std: f64,
    pub mean_merge_time: Option<f64>,
    pub collision_rate: f64,
    pub throughput: f64,
    pub mean_speed_ratio: f64,
}

/// Pool per-episode metrics: plain means for rates, success-weighted pooling
/// for merge times.
pub fn aggregate_metrics(episodes: &[EpisodeMetrics]) -> MetricsAggregate {
    let n = episodes.len();
    if n == 0 {
        return MetricsAggregate {
            episodes: 0,
            success_rate: 0.0,
            success_std: 0.0,
            mean_merge_time: None,
            collision_rate: 0.0,
            throughput: 0.0,
            mean_speed_ratio: 0.0,
        };
    }
    let mean = |f: fn(&EpisodeMetrics) -> f64| episodes.iter().map(f).sum::<f64>() / n as f64;
    let success_rate = mean(|m| m.success_rate);
    let variance = episodes
        .iter()
        .map(|m| (m.success_rate - success_rate).powi(2))
        .sum::<f64>()
        / n as f64;

    let total_successes: usize = episodes.iter().map(|m| m.successes).sum();
    let mean_merge_time = if total_successes > 0 {
        let weighted: f64 = episodes
            .iter()
            .filter_map(|m| m.mean_merge_time.map(|t| t * m.successes as f64))
            .sum();
        Some(weighted / total_successes as f64)
    } else {
        None
    };

    MetricsAggregate {
        episodes: n,
        success_rate,
        success_std: variance.sqrt(),
        mean_merge_time,
        collision_rate: mean(|m| m.collision_rate),
        throughput: mean(|m| m.throughput),
        mean_speed_ratio: mean(|m| m.mean_speed_ratio),
    }
}

/// One vehicle in a trajectory-log frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameVehicle {
    pub id: u64,
    pub kind: VehicleKind,
    pub lane: usize,
    pub pos: f64,
    pub lat: f64,
    pub speed: f64,
    pub accel: f64,
    pub merged: bool,
}

/// One collision in a trajectory-log frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEvent {
    pub time: f64,
    pub a: u64,
    pub b: u64,
}

/// One decision step of the trajectory log (newline-delimited JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFrame {
    pub time: f64,
    pub vehicles: Vec<FrameVehicle>,
    pub events: Vec<FrameEvent>,
}

impl StepFrame {
    pub fn from_world(world: &WorldState, events: &[crate::sim::CollisionEvent]) -> Self {
        Self {
            time: world.time(),
            vehicles: world
                .vehicles
                .iter()
                .map(|v| FrameVehicle {
                    id: v.id,
                    kind: v.kind,
                    lane: v.lane,
                    pos: v.pos,
                    lat: v.lat,
                    speed: v.speed,
                    accel: v.accel,
                    merged: v.merged,
                })
                .collect(),
            events: events
                .iter()
                .map(|e| FrameEvent {
                    time: e.time,
                    a: e.a,
                    b: e.b,
                })
                .collect(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }
}

/// Parse trajectory-log lines, reporting the 1-based line number on failure.
pub fn parse_log_lines<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Result<Vec<StepFrame>> {
    let mut frames = Vec::new();
    for (idx, line) in lines.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let frame: StepFrame = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("trajectory log line {}: {e}", idx + 1)))?;
        frames.push(frame);
    }
    Ok(frames)
}

/// Everything an episode needs besides the backend handle.
pub struct EpisodeRuntime<'p> {
    pub scenario: ScenarioConfig,
    pub level: CascadeLevel,
    pub horizon: usize,
    pub policy: &'p PolicyArtifact,
    pub weights: RewardWeights,
    pub cooperative_hdvs: bool,
    pub region_radius: f64,
    pub temperature: f64,
    pub lm_fallback: bool,
}

/// Backend handle for one run; remote and replay share a session.
pub enum EpisodeBackend<'s> {
    RuleOracle,
    Remote(&'s mut LmSession),
}

fn region_inbox(
    inboxes: &BTreeMap<u64, Vec<CommMessage>>,
    region: &crate::coord::Region,
) -> Vec<CommMessage> {
    let mut merged: Vec<CommMessage> = Vec::new();
    for id in &region.member_ids {
        if let Some(msgs) = inboxes.get(id) {
            for m in msgs {
                if !merged.contains(m) {
                    merged.push(m.clone());
                }
            }
        }
    }
    merged.sort_by(|a, b| a.tick.cmp(&b.tick).then(a.sender.cmp(&b.sender)));
    merged
}

/// Run one seeded episode through the configured cascade level and return
/// its metrics plus the trajectory log.
pub fn run_episode(
    rt: &EpisodeRuntime<'_>,
    backend: &mut EpisodeBackend<'_>,
    seed: u64,
) -> Result<(EpisodeMetrics, Vec<StepFrame>)> {
    let mut world = spawn_scenario(
        &rt.scenario.geometry,
        rt.scenario.density,
        &rt.scenario.style_mix,
        rt.scenario.n_cavs,
        seed,
    )?;
    if let EpisodeBackend::Remote(session) = backend {
        session.begin_episode();
    }

    let opts = CoordinateOptions {
        temperature: rt.temperature,
        sample: false,
    };
    let mut frames = vec![StepFrame::from_world(&world, &[])];
    let mut inboxes: BTreeMap<u64, Vec<CommMessage>> = BTreeMap::new();

    for _ in 0..rt.horizon {
        let cav_ids = world.cav_ids();
        let mut masks: BTreeMap<u64, Vec<MetaAction>> = BTreeMap::new();
        let mut p1: BTreeMap<u64, MetaAction> = BTreeMap::new();
        for &id in &cav_ids {
            let mask = hazard_mask(&world, id)?;
            let action = if world.vehicle(id).map_or(true, |v| v.is_terminal()) {
                MetaAction::Idle
            } else {
                let obs = observe(&world, id, DEFAULT_OBS_RADIUS)?;
                act_individual(rt.policy, &obs, &mask, &world.geometry)?
            };
            masks.insert(id, mask);
            p1.insert(id, action);
        }

        let decisions: Option<Vec<RegionalDecision>> = if rt.level.coordinates() {
            let regions = form_regions(&world, rt.region_radius);
            let mut out = Vec::with_capacity(regions.len());
            for region in &regions {
                let inbox = region_inbox(&inboxes, region);
                let mut cb = match backend {
                    EpisodeBackend::RuleOracle => CoordinationBackend::RuleOracle,
                    EpisodeBackend::Remote(session) => CoordinationBackend::Remote {
                        session,
                        fallback: rt.lm_fallback,
                    },
                };
                out.push(coordinate(
                    region,
                    &world,
                    &mut cb,
                    &inbox,
                    &rt.weights,
                    &opts,
                    None,
                )?);
            }
            inboxes = broadcast(&out, &world, DEFAULT_OBS_RADIUS);
            Some(out)
        } else {
            None
        };

        let joint = arbitrate(&p1, decisions.as_deref(), &masks, rt.cooperative_hdvs);
        let (next, events) = step(&world, &joint)?;
        frames.push(StepFrame::from_world(&next, &events));
        world = next;
    }

    let metrics = compute_metrics_from_frames(&frames, &rt.scenario.geometry)?;
    Ok((metrics, frames))
}

/// Compute episode metrics from raw trajectory-log lines.
pub fn compute_metrics<'a, I: IntoIterator<Item = &'a str>>(
    lines: I,
    geometry: &RoadGeometry,
) -> Result<EpisodeMetrics> {
    let frames = parse_log_lines(lines)?;
    compute_metrics_from_frames(&frames, geometry)
}

/// Metric definitions over parsed frames. Success for a ramp vehicle means
/// it merged within the log, was involved in no collision, and the episode
/// ended inside the horizon covered by the log.
pub fn compute_metrics_from_frames(
    frames: &[StepFrame],
    geometry: &RoadGeometry,
) -> Result<EpisodeMetrics> {
    if frames.is_empty() {
        return Err(Error::Input("trajectory log is empty".into()));
    }
    let first = &frames[0];
    let ramp_cavs: Vec<u64> = first
        .vehicles
        .iter()
        .filter(|v| v.kind == VehicleKind::Cav && v.lane == geometry.ramp_lane() && !v.merged)
        .map(|v| v.id)
        .collect();

    let mut collided: Vec<u64> = Vec::new();
    let mut any_collision = false;
    for frame in frames {
        for e in &frame.events {
            any_collision = true;
            collided.push(e.a);
            collided.push(e.b);
        }
    }

    let mut successes = 0usize;
    let mut merge_times: Vec<f64> = Vec::new();
    for &id in &ramp_cavs {
        if collided.contains(&id) {
            continue;
        }
        let mut enter: Option<f64> = None;
        let mut done: Option<f64> = None;
        for frame in frames {
            let Some(v) = frame.vehicles.iter().find(|v| v.id == id) else { continue };
            if enter.is_none() && v.pos >= geometry.merge_zone_start() {
                enter = Some(frame.time);
            }
            if done.is_none() && v.merged {
                done = Some(frame.time);
                break;
            }
        }
        if let Some(done) = done {
            successes += 1;
            merge_times.push(done - enter.unwrap_or(done));
        }
    }

    // Throughput: vehicles crossing the road end, scaled to per-minute.
    let road_end = geometry.road_len();
    let mut crossings = 0usize;
    let mut last_pos: BTreeMap<u64, f64> = BTreeMap::new();
    for frame in frames {
        for v in &frame.vehicles {
            if let Some(prev) = last_pos.get(&v.id) {
                if *prev < road_end && v.pos >= road_end {
                    crossings += 1;
                }
            }
            last_pos.insert(v.id, v.pos);
        }
    }
    let duration = frames.last().unwrap().time - first.time;
    let throughput = if duration > 0.0 {
        crossings as f64 / duration * 60.0
    } else {
        0.0
    };

    let mut speed_ratio_sum = 0.0;
    let mut speed_frames = 0usize;
    for frame in frames {
        if frame.vehicles.is_empty() {
            continue;
        }
        let mean_speed: f64 =
            frame.vehicles.iter().map(|v| v.speed).sum::<f64>() / frame.vehicles.len() as f64;
        speed_ratio_sum += (mean_speed / SPEED_CAP).clamp(0.0, 1.0);
        speed_frames += 1;
    }

    let mean_merge_time = if merge_times.is_empty() {
        None
    } else {
        Some(merge_times.iter().sum::<f64>() / merge_times.len() as f64)
    };

    Ok(EpisodeMetrics {
        success_rate: if ramp_cavs.is_empty() {
            0.0
        } else {
            successes as f64 / ramp_cavs.len() as f64
        },
        mean_merge_time,
        collision_rate: if any_collision { 1.0 } else { 0.0 },
        throughput,
        mean_speed_ratio: if speed_frames == 0 {
            0.0
        } else {
            speed_ratio_sum / speed_frames as f64
        },
        successes,
    })
}

/// Run a batch of seeded episodes. Rule-oracle batches fan out across
/// threads (episodes are independent); session-backed batches run
/// sequentially through their shared session.
pub fn run_episodes(
    rt: &EpisodeRuntime<'_>,
    session: Option<&mut LmSession>,
    seeds: &[u64],
) -> Result<Vec<(EpisodeMetrics, Vec<StepFrame>)>> {
    match session {
        None => seeds
            .par_iter()
            .map(|&seed| run_episode(rt, &mut EpisodeBackend::RuleOracle, seed))
            .collect(),
        Some(session) => {
            let mut out = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                out.push(run_episode(rt, &mut EpisodeBackend::Remote(session), seed)?);
            }
            Ok(out)
        }
    }
}

/// Fixed CSV header of the experiment matrix.
pub const MATRIX_CSV_HEADER: &str =
    "level,density,success_rate,success_std,merge_time,collision_rate,throughput,speed_ratio";

/// One (level, density) cell of the experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub level: CascadeLevel,
    pub density: Density,
    pub aggregate: MetricsAggregate,
    pub per_episode: Vec<EpisodeMetrics>,
}

/// Inputs for the level x density matrix.
pub struct MatrixSpec<'p> {
    pub levels: Vec<CascadeLevel>,
    pub densities: Vec<Density>,
    pub episodes: usize,
    pub base_seed: u64,
    pub scenario: ScenarioConfig,
    pub horizon: usize,
    pub cooperative_hdvs: bool,
    pub region_radius: f64,
    pub temperature: f64,
    /// Policy per density name.
    pub policies: BTreeMap<String, &'p PolicyArtifact>,
    pub weights_default: RewardWeights,
    /// Optimized weights per density name, used at the global level.
    pub weights_optimized: BTreeMap<String, RewardWeights>,
}

fn format_cell(cell: &MatrixCell) -> String {
    let a = &cell.aggregate;
    let merge = a
        .mean_merge_time
        .map(|t| format!("{t:.4}"))
        .unwrap_or_default();
    format!(
        "{},{},{:.4},{:.4},{},{:.4},{:.4},{:.4}",
        cell.level,
        cell.density.name(),
        a.success_rate,
        a.success_std,
        merge,
        a.collision_rate,
        a.throughput,
        a.mean_speed_ratio
    )
}

/// Run the full matrix with the rule-oracle backend and emit the CSV.
/// Every cell reuses the same seed list, pairing episodes across levels.
pub fn run_matrix(spec: &MatrixSpec<'_>) -> Result<(Vec<MatrixCell>, String)> {
    let seeds: Vec<u64> = (0..spec.episodes)
        .map(|k| rng::derive(spec.base_seed, k as u64))
        .collect();
    let mut cells = Vec::new();
    for &level in &spec.levels {
        for &density in &spec.densities {
            let policy = spec
                .policies
                .get(density.name())
                .ok_or_else(|| Error::Config(format!("no policy for density {}", density.name())))?;
            let weights = if level == CascadeLevel::Global {
                spec.weights_optimized
                    .get(density.name())
                    .copied()
                    .unwrap_or(spec.weights_default)
            } else {
                spec.weights_default
            };
            let rt = EpisodeRuntime {
                scenario: ScenarioConfig {
                    density,
                    ..spec.scenario.clone()
                },
                level,
                horizon: spec.horizon,
                policy,
                weights,
                cooperative_hdvs: spec.cooperative_hdvs,
                region_radius: spec.region_radius,
                temperature: spec.temperature,
                lm_fallback: true,
            };
            let results = run_episodes(&rt, None, &seeds)?;
            let per_episode: Vec<EpisodeMetrics> = results.iter().map(|(m, _)| m.clone()).collect();
            cells.push(MatrixCell {
                level,
                density,
                aggregate: aggregate_metrics(&per_episode),
                per_episode,
            });
        }
    }
    let mut csv = String::from(MATRIX_CSV_HEADER);
    csv.push('\n');
    for cell in &cells {
        csv.push_str(&format_cell(cell));
        csv.push('\n');
    }
    Ok((cells, csv))
}

/// Fixed CSV header of the cooperation-weight sweep.
pub const SWEEP_CSV_HEADER: &str =
    "w_coop,success_rate,merge_time,collision_rate,throughput,speed_ratio";

/// Evaluate a list of cooperation weights; the remaining component weights
/// are renormalized pro-rata for every row.
pub fn sweep_coop(
    rt_base: &EpisodeRuntime<'_>,
    values: &[f64],
    episodes: usize,
    base_seed: u64,
) -> Result<String> {
    let seeds: Vec<u64> = (0..episodes)
        .map(|k| rng::derive(base_seed, k as u64))
        .collect();
    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for &value in values {
        let weights = rt_base.weights.with_coop_weight(value)?;
        let rt = EpisodeRuntime {
            scenario: rt_base.scenario.clone(),
            level: rt_base.level,
            horizon: rt_base.horizon,
            policy: rt_base.policy,
            weights,
            cooperative_hdvs: rt_base.cooperative_hdvs,
            region_radius: rt_base.region_radius,
            temperature: rt_base.temperature,
            lm_fallback: rt_base.lm_fallback,
        };
        let results = run_episodes(&rt, None, &seeds)?;
        let per_episode: Vec<EpisodeMetrics> = results.into_iter().map(|(m, _)| m).collect();
        let a = aggregate_metrics(&per_episode);
        let merge = a
            .mean_merge_time
            .map(|t| format!("{t:.4}"))
            .unwrap_or_default();
        csv.push_str(&format!(
            "{:.4},{:.4},{},{:.4},{:.4},{:.4}\n",
            value, a.success_rate, merge, a.collision_rate, a.throughput, a.mean_speed_ratio
        ));
    }
    Ok(csv)
}

/// One exported training sample: a prompt block of `i` vehicles and the
/// remaining vehicles as labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub prompt: DatasetPrompt,
    pub labels: Vec<FrameVehicle>,
    pub meta: DatasetMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPrompt {
    pub vehicles: Vec<FrameVehicle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub map_hash: String,
    pub density: String,
    pub time: f64,
}

/// Split every timestep of the logs into `i` prompt vehicles and `n - i`
/// labels, sampled uniformly with the given seed. Timesteps with too few
/// vehicles are skipped and counted.
pub fn export_dataset(
    frames: &[StepFrame],
    prompt_vehicles: usize,
    seed: u64,
    map_hash: u64,
    density: Density,
) -> Result<(Vec<DatasetSample>, usize)> {
    if prompt_vehicles < 1 {
        return Err(Error::Input("prompt_vehicles must be >= 1".into()));
    }
    let mut rand_state = rng::seeded(rng::derive(seed, 0x6461_7461));
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for frame in frames {
        let n = frame.vehicles.len();
        if prompt_vehicles >= n {
            skipped += 1;
            continue;
        }
        // Partial Fisher-Yates over the id-sorted vehicle list.
        let mut order: Vec<usize> = (0..n).collect();
        for k in 0..prompt_vehicles {
            let j = rand_state.gen_range(k..n);
            order.swap(k, j);
        }
        let mut prompt_idx: Vec<usize> = order[..prompt_vehicles].to_vec();
        prompt_idx.sort_unstable();
        let mut label_idx: Vec<usize> = order[prompt_vehicles..].to_vec();
        label_idx.sort_unstable();

        samples.push(DatasetSample {
            prompt: DatasetPrompt {
                vehicles: prompt_idx.iter().map(|&i| frame.vehicles[i].clone()).collect(),
            },
            labels: label_idx.iter().map(|&i| frame.vehicles[i].clone()).collect(),
            meta: DatasetMeta {
                map_hash: format!("{map_hash:016x}"),
                density: density.name().to_string(),
                time: frame.time,
            },
        });
    }
    Ok((samples, skipped))
}
