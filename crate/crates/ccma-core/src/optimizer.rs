//! Global reward-weight optimization: evaluate a weight vector over seeded
//! episode batches, diagnose the dominant deficit, shift weight mass toward
//! it, optionally blend with the best related past result, and keep the
//! improvement. Every evaluation is appended to a persistent store that
//! warm-starts later runs.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    aggregate_metrics, run_episodes, CascadeLevel, EpisodeRuntime, MetricsAggregate,
};
use crate::policy::PolicyArtifact;
use crate::reward::RewardWeights;
use crate::rng;
use crate::sim::{Density, ScenarioConfig};
use crate::util::stable_hash_json;

/// Initial weight-mass shift per reflection.
pub const INITIAL_STEP: f64 = 0.05;
/// Lower bound the shift is halved down to on rejected proposals.
pub const MIN_STEP: f64 = 0.0125;
/// Minimum objective improvement for a proposal to be accepted.
pub const ACCEPT_EPS: f64 = 1e-4;
/// A retrieved record must beat the current objective by this much before
/// its weights are blended in.
pub const RAG_BLEND_MARGIN: f64 = 0.02;

/// Compact scenario fingerprint used for retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDescriptor {
    /// One-hot over (easy, medium, hard).
    pub density: [f64; 3],
    pub style_mix: [f64; 3],
    pub n_cavs: usize,
    pub geometry_hash: String,
}

impl ScenarioDescriptor {
    pub fn from_config(scenario: &ScenarioConfig) -> Self {
        let mut density = [0.0; 3];
        let idx = match scenario.density {
            Density::Easy => 0,
            Density::Medium => 1,
            Density::Hard => 2,
        };
        density[idx] = 1.0;
        Self {
            density,
            style_mix: scenario.style_mix.as_vector(),
            n_cavs: scenario.n_cavs,
            geometry_hash: format!("{:016x}", stable_hash_json(&scenario.geometry)),
        }
    }
}

/// L1 distance over the descriptor parts; geometry mismatch adds a unit.
pub fn descriptor_distance(a: &ScenarioDescriptor, b: &ScenarioDescriptor) -> f64 {
    let density: f64 = a
        .density
        .iter()
        .zip(&b.density)
        .map(|(x, y)| (x - y).abs())
        .sum();
    let style: f64 = a
        .style_mix
        .iter()
        .zip(&b.style_mix)
        .map(|(x, y)| (x - y).abs())
        .sum();
    let cavs = (a.n_cavs as f64 - b.n_cavs as f64).abs() / 8.0;
    let geometry = if a.geometry_hash == b.geometry_hash { 0.0 } else { 1.0 };
    density + style + cavs + geometry
}

/// Scalar objective over aggregated metrics: reward success, punish
/// collisions hard, and mildly discourage slow merges.
pub fn objective_j(metrics: &MetricsAggregate) -> f64 {
    metrics.success_rate - 2.0 * metrics.collision_rate
        - 0.2 * (metrics.mean_merge_time.unwrap_or(0.0) / 40.0)
}

/// One persisted evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub id: u64,
    pub created_at: u64,
    pub descriptor: ScenarioDescriptor,
    pub weights: RewardWeights,
    pub metrics: MetricsAggregate,
    pub objective: f64,
}

/// Append-only store of reward records backed by a newline-delimited JSON
/// file; every append is flushed so a crash loses nothing.
#[derive(Debug)]
pub struct RewardStore {
    path: Option<PathBuf>,
    records: Vec<RewardRecord>,
}

impl RewardStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            records: Vec::new(),
        }
    }

    /// Open (or create) a store file, loading any existing records.
    pub fn open(path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        if path.exists() {
            let file = std::fs::File::open(path)?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: RewardRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::Parse(format!("store line {}: {e}", idx + 1)))?;
                records.push(record);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            records,
        })
    }

    pub fn records(&self) -> &[RewardRecord] {
        &self.records
    }

    /// In-memory copy of the current records (detached from any file).
    pub fn snapshot(&self) -> RewardStore {
        RewardStore {
            path: None,
            records: self.records.clone(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Append one evaluated record; ids are strictly increasing and the line
    /// is flushed before returning.
    pub fn append(
        &mut self,
        descriptor: ScenarioDescriptor,
        weights: RewardWeights,
        metrics: MetricsAggregate,
    ) -> Result<&RewardRecord> {
        let id = self.records.last().map(|r| r.id + 1).unwrap_or(1);
        let record = RewardRecord {
            id,
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .unwrap_or_default()
                .as_secs(),
            descriptor,
            weights,
            objective: objective_j(&metrics),
            metrics,
        };
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(file, "{}", serde_json::to_string(&record)?)?;
            file.flush()?;
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }
}

/// Up to `k` records ordered by (descriptor distance asc, objective desc,
/// id desc).
pub fn retrieve(
    store: &RewardStore,
    descriptor: &ScenarioDescriptor,
    k: usize,
) -> Result<Vec<RewardRecord>> {
    if k < 1 {
        return Err(Error::Input("retrieval k must be >= 1".into()));
    }
    let mut scored: Vec<(f64, &RewardRecord)> = store
        .records()
        .iter()
        .map(|r| (descriptor_distance(descriptor, &r.descriptor), r))
        .collect();
    scored.sort_by(|(da, ra), (db, rb)| {
        da.partial_cmp(db)
            .unwrap()
            .then(rb.objective.partial_cmp(&ra.objective).unwrap())
            .then(rb.id.cmp(&ra.id))
    });
    Ok(scored.into_iter().take(k).map(|(_, r)| r.clone()).collect())
}

/// Diagnose the dominant deficit and shift `delta` of weight mass onto the
/// matching component; when a clearly better related record was retrieved,
/// return the even blend of proposal and record weights instead.
pub fn reflect_propose(
    current: &RewardWeights,
    metrics: &MetricsAggregate,
    retrieved: &[RewardRecord],
    delta: f64,
) -> RewardWeights {
    let d_safe = metrics.collision_rate;
    let d_flow = 1.0 - metrics.mean_speed_ratio;
    let d_succ = 1.0 - metrics.success_rate;

    let mut proposal = *current;
    if d_safe > 0.0 || d_flow > 0.0 || d_succ > 0.0 {
        // Ties resolve safety first, then success, then flow.
        let shift_to = if d_safe >= d_succ && d_safe >= d_flow {
            WeightSlot::Safe
        } else if d_succ >= d_flow {
            WeightSlot::Coop
        } else {
            WeightSlot::Flow
        };
        proposal = shift_mass(current, shift_to, delta);
        if matches!(shift_to, WeightSlot::Coop) {
            // The cooperative signal lives at both aggregation points.
            proposal.w_coop_total = (proposal.w_coop_total + delta).min(1.0);
            proposal.w_ego = 1.0 - proposal.w_coop_total;
        }
    }

    let cur_j = objective_j(metrics);
    let best = retrieved.iter().fold(None::<&RewardRecord>, |acc, r| match acc {
        Some(b) if b.objective >= r.objective => Some(b),
        _ => Some(r),
    });
    if let Some(record) = best {
        if record.objective > cur_j + RAG_BLEND_MARGIN {
            return blend(&proposal, &record.weights).normalized();
        }
    }
    proposal
}

#[derive(Clone, Copy)]
enum WeightSlot {
    Flow,
    Coop,
    Safe,
}

fn shift_mass(w: &RewardWeights, slot: WeightSlot, delta: f64) -> RewardWeights {
    let mut out = *w;
    let target = match slot {
        WeightSlot::Flow => w.w_flow,
        WeightSlot::Coop => w.w_coop,
        WeightSlot::Safe => w.w_safe,
    };
    if 1.0 - target <= 1e-12 {
        return out;
    }
    let new_target = (target + delta).min(1.0);
    let scale = (1.0 - new_target) / (1.0 - target);
    out.w_flow *= scale;
    out.w_comf *= scale;
    out.w_coop *= scale;
    out.w_safe *= scale;
    match slot {
        WeightSlot::Flow => out.w_flow = new_target,
        WeightSlot::Coop => out.w_coop = new_target,
        WeightSlot::Safe => out.w_safe = new_target,
    }
    out.normalized()
}

fn blend(a: &RewardWeights, b: &RewardWeights) -> RewardWeights {
    let mut out = *a;
    out.w_flow = 0.5 * a.w_flow + 0.5 * b.w_flow;
    out.w_comf = 0.5 * a.w_comf + 0.5 * b.w_comf;
    out.w_coop = 0.5 * a.w_coop + 0.5 * b.w_coop;
    out.w_safe = 0.5 * a.w_safe + 0.5 * b.w_safe;
    out.w_ego = 0.5 * a.w_ego + 0.5 * b.w_ego;
    out.w_coop_total = 0.5 * a.w_coop_total + 0.5 * b.w_coop_total;
    out
}

/// Evaluation context: everything an episode batch needs except the weights.
pub struct EvalContext<'p> {
    pub scenario: ScenarioConfig,
    pub level: CascadeLevel,
    pub horizon: usize,
    pub policy: &'p PolicyArtifact,
    pub cooperative_hdvs: bool,
    pub region_radius: f64,
    pub temperature: f64,
    /// Episodes per evaluation batch.
    pub episodes: usize,
}

/// Evaluate one weight vector over a seeded episode batch.
pub fn evaluate_weights(
    weights: &RewardWeights,
    ctx: &EvalContext<'_>,
    seed: u64,
) -> Result<(MetricsAggregate, f64)> {
    if ctx.episodes < 1 {
        return Err(Error::Input("evaluation needs at least one episode".into()));
    }
    let rt = EpisodeRuntime {
        scenario: ctx.scenario.clone(),
        level: ctx.level,
        horizon: ctx.horizon,
        policy: ctx.policy,
        weights: *weights,
        cooperative_hdvs: ctx.cooperative_hdvs,
        region_radius: ctx.region_radius,
        temperature: ctx.temperature,
        lm_fallback: true,
    };
    let seeds: Vec<u64> = (0..ctx.episodes)
        .map(|k| rng::derive(seed, k as u64))
        .collect();
    let results = run_episodes(&rt, None, &seeds)?;
    let per_episode: Vec<_> = results.into_iter().map(|(m, _)| m).collect();
    let agg = aggregate_metrics(&per_episode);
    let j = objective_j(&agg);
    Ok((agg, j))
}

/// Outcome of an optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub best_weights: RewardWeights,
    pub best_objective: f64,
    /// Ids of the records appended by this run.
    pub appended: Vec<u64>,
    /// Incumbent objective after the initial evaluation and each batch;
    /// non-decreasing by construction.
    pub incumbent_trace: Vec<f64>,
}

/// Core loop with an injectable evaluator (the real one runs episodes).
/// The incumbent is evaluated once and re-used until a proposal replaces it,
/// so a run appends exactly `1 + budget` records.
pub fn optimize_with<F>(
    descriptor: &ScenarioDescriptor,
    budget: usize,
    store: &mut RewardStore,
    use_rag: bool,
    mut evaluate: F,
) -> Result<OptimizeOutcome>
where
    F: FnMut(&RewardWeights) -> Result<(MetricsAggregate, f64)>,
{
    if budget < 1 {
        return Err(Error::Input("optimization budget must be >= 1".into()));
    }

    let mut current = if use_rag && !store.is_empty() {
        let related = retrieve(store, descriptor, 3)?;
        related
            .iter()
            .fold(None::<&RewardRecord>, |acc, r| match acc {
                Some(b) if b.objective >= r.objective => Some(b),
                _ => Some(r),
            })
            .map(|r| r.weights)
            .unwrap_or_default()
    } else {
        RewardWeights::default()
    };

    let mut appended = Vec::new();
    let (mut cur_metrics, mut cur_j) = evaluate(&current)?;
    appended.push(store.append(descriptor.clone(), current, cur_metrics.clone())?.id);

    let mut best = (current, cur_j);
    let mut trace = vec![cur_j];
    let mut delta = INITIAL_STEP;

    for _ in 0..budget {
        let retrieved = if use_rag {
            retrieve(store, descriptor, 3)?
        } else {
            Vec::new()
        };
        let proposal = reflect_propose(&current, &cur_metrics, &retrieved, delta);
        let (prop_metrics, prop_j) = evaluate(&proposal)?;
        appended.push(store.append(descriptor.clone(), proposal, prop_metrics.clone())?.id);

        if prop_j > best.1 {
            best = (proposal, prop_j);
        }
        if prop_j >= cur_j + ACCEPT_EPS {
            current = proposal;
            cur_j = prop_j;
            cur_metrics = prop_metrics;
        } else {
            delta = (delta / 2.0).max(MIN_STEP);
        }
        trace.push(cur_j);
    }

    Ok(OptimizeOutcome {
        best_weights: best.0,
        best_objective: best.1,
        appended,
        incumbent_trace: trace,
    })
}

/// Optimize the reward weights for a scenario over seeded episode batches.
/// Every evaluation within the run reuses the same seed set, so objective
/// comparisons are paired.
pub fn optimize(
    ctx: &EvalContext<'_>,
    budget: usize,
    store: &mut RewardStore,
    use_rag: bool,
    seed: u64,
) -> Result<OptimizeOutcome> {
    let descriptor = ScenarioDescriptor::from_config(&ctx.scenario);
    optimize_with(&descriptor, budget, store, use_rag, |w| {
        evaluate_weights(w, ctx, seed)
    })
}
