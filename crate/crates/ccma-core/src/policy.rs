//! Individual-level decision making: tabular Q-learning over a small
//! discretized feature space, served greedily under a hazard mask.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{agent_total, argmax_in_tie_order, joint_reward, RewardWeights};
use crate::rng;
use crate::sim::{
    lane_change_target, observe, spawn_scenario, step, JointAction, MetaAction, Observation,
    RoadGeometry, ScenarioConfig, WorldState, DEFAULT_OBS_RADIUS,
};
use crate::util::stable_hash_json;

/// Decision steps per training episode.
pub const TRAIN_HORIZON: usize = 40;
/// Minimum post-action time-to-collision for an action to count as safe.
pub const HAZARD_TTC_MIN: f64 = 1.5;

/// Q-learning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0,1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0,1), got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Discretization edges; persisted with the table so a stored policy is
/// self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub speed_edges: Vec<f64>,
    pub gap_edges: Vec<f64>,
    pub dist_edges: Vec<f64>,
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self {
            speed_edges: vec![0.0, 7.0, 14.0, 21.0, 28.0, 35.0],
            gap_edges: vec![10.0, 25.0, 50.0],
            dist_edges: vec![30.0, 80.0],
        }
    }
}

/// Coarse lane classification for the feature key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneClass {
    Ramp,
    Right,
    Other,
}

/// Discretized state: all components are small bucket indices, so the whole
/// key space stays comfortably enumerable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub speed: u8,
    pub lead_gap: u8,
    pub target_front_gap: u8,
    pub target_rear_gap: u8,
    pub dist_to_ramp_end: u8,
    pub lane_class: u8,
}

impl FeatureKey {
    /// Dense index into the (5 * 4 * 4 * 4 * 3 * 3) key space.
    pub fn index(&self) -> usize {
        ((((self.speed as usize * 4 + self.lead_gap as usize) * 4
            + self.target_front_gap as usize)
            * 4
            + self.target_rear_gap as usize)
            * 3
            + self.dist_to_ramp_end as usize)
            * 3
            + self.lane_class as usize
    }

    pub const SPACE: usize = 5 * 4 * 4 * 4 * 3 * 3;
}

/// Bucket index with half-open `[lo, hi)` intervals; values at or past the
/// last edge land in the final bucket.
fn bucket(value: f64, edges: &[f64]) -> u8 {
    let mut b = 0u8;
    for &edge in edges {
        if value >= edge {
            b += 1;
        } else {
            break;
        }
    }
    b
}

fn gap_bucket(gap: Option<f64>, edges: &[f64]) -> u8 {
    match gap {
        Some(g) => bucket(g, edges),
        None => edges.len() as u8,
    }
}

/// Bumper gap to the nearest observed neighbour ahead/behind in a lane.
fn neighbor_gap(obs: &Observation, lane: usize, ahead: bool) -> Option<f64> {
    let ego = &obs.ego;
    obs.neighbors
        .iter()
        .filter(|n| n.lane == lane && if ahead { n.pos >= ego.pos } else { n.pos < ego.pos })
        .map(|n| (n.pos - ego.pos).abs() - (n.length + ego.length) / 2.0)
        .min_by(|a, b| a.partial_cmp(b).unwrap())
}

/// Deterministic discretization of a local observation.
pub fn discretize(obs: &Observation, geometry: &RoadGeometry) -> FeatureKey {
    let spec = BucketSpec::default();
    let ego = &obs.ego;
    let on_ramp = obs.dist_to_ramp_end.is_some();

    let speed = bucket(ego.speed, &spec.speed_edges[1..spec.speed_edges.len() - 1]);
    let lead_gap = gap_bucket(neighbor_gap(obs, ego.lane, true), &spec.gap_edges);

    // Target lane: the merge target for ramp vehicles, otherwise the lane to
    // the left; the leftmost lane has no target and reads open gaps.
    let target_lane = if on_ramp {
        Some(geometry.rightmost_main_lane())
    } else if ego.lane > 0 {
        Some(ego.lane - 1)
    } else {
        None
    };
    let (front, rear) = match target_lane {
        Some(lane) => (
            gap_bucket(neighbor_gap(obs, lane, true), &spec.gap_edges),
            gap_bucket(neighbor_gap(obs, lane, false), &spec.gap_edges),
        ),
        None => (spec.gap_edges.len() as u8, spec.gap_edges.len() as u8),
    };

    let dist = match obs.dist_to_ramp_end {
        Some(d) => bucket(d, &spec.dist_edges),
        None => spec.dist_edges.len() as u8,
    };

    let lane_class = if on_ramp {
        LaneClass::Ramp
    } else if ego.lane == geometry.rightmost_main_lane() {
        LaneClass::Right
    } else {
        LaneClass::Other
    };

    FeatureKey {
        speed,
        lead_gap,
        target_front_gap: front,
        target_rear_gap: rear,
        dist_to_ramp_end: dist,
        lane_class: lane_class as u8,
    }
}

/// Actions that survive a one-step safety lookahead for a controlled
/// vehicle. Structurally impossible lane changes are removed first; each
/// remaining action is simulated one step (other controlled vehicles held to
/// idle intent) and kept only if the agent avoids collision and retains a
/// front time-to-collision of at least [`HAZARD_TTC_MIN`]. If nothing
/// survives, braking is returned as the sole fallback.
pub fn hazard_mask(world: &WorldState, id: u64) -> Result<Vec<MetaAction>> {
    let ego = world
        .vehicle(id)
        .ok_or_else(|| Error::Input(format!("unknown vehicle id {id}")))?;
    if !ego.is_cav() {
        return Err(Error::Input(format!("vehicle {id} is not a CAV")));
    }
    if ego.is_terminal() {
        return Ok(vec![MetaAction::Slower]);
    }

    let mut safe = Vec::new();
    for action in MetaAction::ALL {
        // Lane actions must be structurally possible and must not force the
        // new follower into emergency braking (a hazard the one-second
        // lookahead cannot see yet).
        let structurally_ok = match action {
            MetaAction::LaneLeft | MetaAction::LaneRight => {
                match lane_change_target(ego, action, &world.geometry) {
                    Some(target) => crate::sim::mobil_safety_ok(world, ego, target),
                    None => false,
                }
            }
            _ => true,
        };
        if !structurally_ok {
            continue;
        }
        let joint = JointAction::single(world, id, action);
        let (after, events) = step(world, &joint)?;
        let collided = events.iter().any(|e| e.a == id || e.b == id);
        if !collided && after.ttc_front(id) >= HAZARD_TTC_MIN {
            safe.push(action);
        }
    }
    if safe.is_empty() {
        safe.push(MetaAction::Slower);
    }
    Ok(safe)
}

/// One temporal-difference backup.
pub fn q_update(q_sa: f64, r: f64, max_next: f64, alpha: f64, gamma: f64) -> Result<f64> {
    for (name, v) in [("q_sa", q_sa), ("r", r), ("max_next", max_next)] {
        if !v.is_finite() {
            return Err(Error::Input(format!("non-finite {name}: {v}")));
        }
    }
    Ok((1.0 - alpha) * q_sa + alpha * (r + gamma * max_next))
}

/// Training metadata stored with the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config_hash: String,
    pub seed: u64,
    pub episodes: usize,
    /// Mean per-vehicle return of each training episode.
    pub episode_returns: Vec<f64>,
}

/// A frozen, serializable policy: sparse Q table plus its bucket spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub buckets: BucketSpec,
    /// Sparse table keyed by the dense feature index (as a string, since
    /// JSON object keys are strings). Values follow the canonical action
    /// order.
    pub q: BTreeMap<String, [f64; 5]>,
    pub meta: TrainMeta,
}

impl PolicyArtifact {
    pub fn empty(seed: u64) -> Self {
        Self {
            buckets: BucketSpec::default(),
            q: BTreeMap::new(),
            meta: TrainMeta {
                config_hash: String::new(),
                seed,
                episodes: 0,
                episode_returns: Vec::new(),
            },
        }
    }

    pub fn q_row(&self, key: &FeatureKey) -> Option<&[f64; 5]> {
        self.q.get(&key.index().to_string())
    }

    fn q_row_mut(&mut self, key: &FeatureKey) -> &mut [f64; 5] {
        self.q.entry(key.index().to_string()).or_insert([0.0; 5])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let artifact: Self = serde_json::from_str(text)?;
        for (k, row) in &artifact.q {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("non-finite Q value under key {k}")));
            }
        }
        Ok(artifact)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// Greedy action over the masked Q row; unseen states defer to the fixed
/// preference order (idle first).
pub fn act_individual(
    policy: &PolicyArtifact,
    obs: &Observation,
    mask: &[MetaAction],
    geometry: &RoadGeometry,
) -> Result<MetaAction> {
    if mask.is_empty() {
        return Err(Error::Input("action mask must be nonempty".into()));
    }
    let key = discretize(obs, geometry);
    match policy.q_row(&key) {
        None => Ok(first_in_tie_order(mask)),
        Some(row) => {
            let values: Vec<(MetaAction, f64)> =
                mask.iter().map(|&a| (a, row[a.index()])).collect();
            Ok(argmax_in_tie_order(&values).expect("nonempty mask"))
        }
    }
}

fn first_in_tie_order(mask: &[MetaAction]) -> MetaAction {
    MetaAction::TIE_ORDER
        .into_iter()
        .find(|a| mask.contains(a))
        .expect("nonempty mask")
}

fn masked_max(policy: &PolicyArtifact, key: &FeatureKey, mask: &[MetaAction]) -> f64 {
    match policy.q_row(key) {
        None => 0.0,
        Some(row) => mask
            .iter()
            .map(|a| row[a.index()])
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Train a policy with ε-greedy Q-learning on seeded episodes of the given
/// scenario. Deterministic for a fixed seed.
pub fn train(
    scenario: &ScenarioConfig,
    weights: &RewardWeights,
    tc: &TrainConfig,
) -> Result<PolicyArtifact> {
    tc.validate()?;
    weights.validate()?;
    let mut artifact = PolicyArtifact::empty(tc.seed);
    artifact.meta.config_hash = format!("{:016x}", stable_hash_json(&(scenario, weights, tc)));
    artifact.meta.episodes = tc.episodes;
    if tc.episodes == 0 {
        return Ok(artifact);
    }

    let mut rand_state = rng::seeded(rng::derive(tc.seed, 0x7261_696e));
    let denom = tc.episodes.saturating_sub(1).max(1) as f64;

    for episode in 0..tc.episodes {
        let progress = episode as f64 / denom;
        let epsilon = tc.epsilon_start + (tc.epsilon_end - tc.epsilon_start) * progress;
        let mut world = spawn_scenario(
            &scenario.geometry,
            scenario.density,
            &scenario.style_mix,
            scenario.n_cavs,
            rng::derive(tc.seed, episode as u64),
        )?;
        let cav_ids = world.cav_ids();
        let mut episode_return = 0.0;

        for _ in 0..TRAIN_HORIZON {
            let mut joint = JointAction::default();
            let mut chosen: BTreeMap<u64, (FeatureKey, MetaAction)> = BTreeMap::new();
            for &id in &cav_ids {
                let ego = world.vehicle(id).expect("cav id");
                if ego.is_terminal() {
                    joint.cav.insert(id, MetaAction::Idle);
                    continue;
                }
                let obs = observe(&world, id, DEFAULT_OBS_RADIUS)?;
                let key = discretize(&obs, &world.geometry);
                let mask = hazard_mask(&world, id)?;
                let action = if rand_state.gen::<f64>() < epsilon {
                    mask[rand_state.gen_range(0..mask.len())]
                } else {
                    act_individual(&artifact, &obs, &mask, &world.geometry)?
                };
                joint.cav.insert(id, action);
                chosen.insert(id, (key, action));
            }

            let (after, _) = step(&world, &joint)?;
            let rewards = joint_reward(&world, &joint, &after, weights);

            for (&id, &(key, action)) in &chosen {
                let r = rewards.get(&id).map(|b| agent_total(b, weights)).unwrap_or(0.0);
                episode_return += r;
                let next_ego = after.vehicle(id).expect("cav id");
                let max_next = if next_ego.is_terminal() {
                    0.0
                } else {
                    let next_obs = observe(&after, id, DEFAULT_OBS_RADIUS)?;
                    let next_key = discretize(&next_obs, &after.geometry);
                    let next_mask = hazard_mask(&after, id)?;
                    masked_max(&artifact, &next_key, &next_mask)
                };
                let row = artifact.q_row_mut(&key);
                row[action.index()] =
                    q_update(row[action.index()], r, max_next, tc.alpha, tc.gamma)?;
            }

            world = after;
            if cav_ids.iter().all(|id| world.vehicle(*id).unwrap().is_terminal()) {
                break;
            }
        }
        artifact
            .meta
            .episode_returns
            .push(episode_return / cav_ids.len().max(1) as f64);
    }
    Ok(artifact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Density, StyleMix, VehicleKind, VehicleState};

    fn world_with(vehicles: Vec<VehicleState>) -> WorldState {
        let mut w = WorldState::new(RoadGeometry::default(), 0);
        w.vehicles = vehicles;
        w.vehicles.sort_by_key(|v| v.id);
        w
    }

    fn cav(id: u64, lane: usize, pos: f64, speed: f64) -> VehicleState {
        VehicleState::new(id, VehicleKind::Cav, lane, pos, speed)
    }

    fn hdv(id: u64, lane: usize, pos: f64, speed: f64) -> VehicleState {
        VehicleState::new(id, VehicleKind::Hdv, lane, pos, speed)
    }

    #[test]
    fn bucket_boundaries_are_half_open() {
        let spec = BucketSpec::default();
        let inner = &spec.speed_edges[1..spec.speed_edges.len() - 1];
        assert_eq!(bucket(0.0, inner), 0);
        assert_eq!(bucket(6.999, inner), 0);
        assert_eq!(bucket(7.0, inner), 1);
        assert_eq!(bucket(34.9, inner), 4);
        assert_eq!(bucket(35.0, inner), 4);
        assert_eq!(bucket(99.0, inner), 4);
    }

    #[test]
    fn discretize_lone_ramp_vehicle() {
        let g = RoadGeometry::default();
        let v = cav(1, g.ramp_lane(), 180.0, 0.0);
        let w = world_with(vec![v]);
        let obs = observe(&w, 1, DEFAULT_OBS_RADIUS).unwrap();
        let key = discretize(&obs, &g);
        assert_eq!(key.speed, 0);
        assert_eq!(key.lead_gap, 3);
        assert_eq!(key.target_front_gap, 3);
        assert_eq!(key.target_rear_gap, 3);
        // 140 m to the ramp end: the open bucket.
        assert_eq!(key.dist_to_ramp_end, 2);
        assert_eq!(key.lane_class, LaneClass::Ramp as u8);
        assert!(key.index() < FeatureKey::SPACE);
    }

    #[test]
    fn discretize_matches_brute_force_bucket_scan() {
        // Oracle: for random values, the bucket is the count of edges at or
        // below the value, computed by exhaustive scan.
        let spec = BucketSpec::default();
        let mut r = crate::rng::seeded(5);
        use rand::Rng;
        for _ in 0..1000 {
            let v: f64 = r.gen_range(-5.0..120.0);
            let expect = spec.gap_edges.iter().filter(|e| v >= **e).count() as u8;
            assert_eq!(bucket(v, &spec.gap_edges), expect, "value {v}");
        }
    }

    #[test]
    fn q_update_hand_cases() {
        assert_eq!(q_update(3.0, 1.0, 2.0, 1.0, 0.0).unwrap(), 1.0);
        assert!((q_update(0.0, 1.0, 2.0, 0.5, 0.9).unwrap() - 1.4).abs() < 1e-12);
        // Fixed point: q = r / (1 - gamma).
        assert!((q_update(10.0, 1.0, 10.0, 0.3, 0.9).unwrap() - 10.0).abs() < 1e-12);
        assert!(q_update(f64::NAN, 0.0, 0.0, 0.5, 0.9).is_err());
        assert!(q_update(0.0, f64::INFINITY, 0.0, 0.5, 0.9).is_err());
    }

    #[test]
    fn q_learning_converges_to_value_iteration_on_chain() {
        // Three-state deterministic chain: advance moves right and pays 0
        // until the terminal state pays 1; stay pays 0. Oracle: value
        // iteration on the same MDP.
        let gamma = 0.9;
        let reward = |s: usize, a: usize| if s == 2 && a == 0 { 1.0 } else { 0.0 };
        let next = |s: usize, a: usize| if a == 0 { (s + 1).min(2) } else { s };
        let terminal = |s: usize| s == 2;

        // Value-iteration oracle over Q.
        let mut q_star = [[0.0f64; 2]; 3];
        for _ in 0..200 {
            let mut nq = q_star;
            for s in 0..3 {
                for a in 0..2 {
                    let r = reward(s, a);
                    let ns = next(s, a);
                    let future = if terminal(s) { 0.0 } else { q_star[ns].iter().cloned().fold(f64::MIN, f64::max) };
                    nq[s][a] = r + gamma * future;
                }
            }
            q_star = nq;
        }

        // Q-learning with the backup under test, sweeping all pairs.
        let mut q = [[0.0f64; 2]; 3];
        for _ in 0..2000 {
            for s in 0..3 {
                for a in 0..2 {
                    let r = reward(s, a);
                    let ns = next(s, a);
                    let max_next = if terminal(s) { 0.0 } else { q[ns].iter().cloned().fold(f64::MIN, f64::max) };
                    q[s][a] = q_update(q[s][a], r, max_next, 0.2, gamma).unwrap();
                }
            }
        }
        for s in 0..3 {
            for a in 0..2 {
                assert!(
                    (q[s][a] - q_star[s][a]).abs() < 1e-6,
                    "state {s} action {a}: {} vs {}",
                    q[s][a],
                    q_star[s][a]
                );
            }
        }
    }

    #[test]
    fn hazard_mask_lone_vehicle_keeps_structural_actions() {
        let w = world_with(vec![cav(1, 1, 100.0, 20.0)]);
        let mask = hazard_mask(&w, 1).unwrap();
        // Rightmost main lane: no LANE_RIGHT (ramp), everything else safe.
        assert_eq!(
            mask,
            vec![
                MetaAction::LaneLeft,
                MetaAction::Idle,
                MetaAction::Faster,
                MetaAction::Slower
            ]
        );
    }

    #[test]
    fn hazard_mask_excludes_closing_faster() {
        // Leader 3 m ahead and closing: no longitudinal action can brake
        // away in time, so the lookahead rejects FASTER (everything unsafe
        // collapses to the braking fallback).
        let mut ego = cav(1, 0, 100.0, 20.0);
        ego.target_speed = 20.0;
        let mut leader = hdv(2, 0, 108.0, 10.0);
        leader.target_speed = 10.0;
        let w = world_with(vec![ego, leader]);
        let mask = hazard_mask(&w, 1).unwrap();
        assert!(!mask.contains(&MetaAction::Faster), "mask {mask:?}");
        assert!(mask.contains(&MetaAction::Slower));
    }

    #[test]
    fn hazard_mask_excludes_unsafe_cut_in_only() {
        // Ramp vehicle in the merge zone with a fast main-lane vehicle
        // coming up right where it would land: the merge is rejected while
        // holding course stays allowed.
        let g = RoadGeometry::default();
        let mut ego = cav(1, g.ramp_lane(), 250.0, 10.0);
        ego.target_speed = 10.0;
        let mut rusher = hdv(2, g.rightmost_main_lane(), 238.0, 30.0);
        rusher.target_speed = 30.0;
        // Abreast blocker keeps the rusher from escaping to the left lane.
        let mut blocker = hdv(3, 0, 238.0, 30.0);
        blocker.target_speed = 30.0;
        let w = world_with(vec![ego, rusher, blocker]);
        let mask = hazard_mask(&w, 1).unwrap();
        assert!(!mask.contains(&MetaAction::LaneLeft), "mask {mask:?}");
        assert!(mask.contains(&MetaAction::Idle), "mask {mask:?}");
    }

    #[test]
    fn hazard_mask_falls_back_to_slower() {
        // Boxed in completely: stopped wall directly ahead.
        let mut ego = cav(1, 0, 100.0, 30.0);
        ego.target_speed = 30.0;
        let wall = hdv(2, 0, 109.0, 0.0);
        let w = world_with(vec![ego, wall]);
        let mask = hazard_mask(&w, 1).unwrap();
        assert_eq!(mask, vec![MetaAction::Slower]);
    }

    #[test]
    fn hazard_mask_for_hdv_is_input_error() {
        let w = world_with(vec![hdv(1, 0, 100.0, 20.0)]);
        assert!(matches!(hazard_mask(&w, 1), Err(Error::Input(_))));
    }

    #[test]
    fn act_individual_respects_mask_and_ties() {
        let policy = PolicyArtifact::empty(0);
        let w = world_with(vec![cav(1, 1, 100.0, 20.0)]);
        let obs = observe(&w, 1, DEFAULT_OBS_RADIUS).unwrap();
        let g = RoadGeometry::default();

        // Unseen key, idle masked in.
        let a = act_individual(&policy, &obs, &[MetaAction::Idle, MetaAction::Faster], &g).unwrap();
        assert_eq!(a, MetaAction::Idle);
        // Unseen key, idle masked out: first masked action in tie order.
        let a = act_individual(&policy, &obs, &[MetaAction::LaneLeft, MetaAction::Slower], &g).unwrap();
        assert_eq!(a, MetaAction::Slower);
        // Single-action mask.
        let a = act_individual(&policy, &obs, &[MetaAction::Slower], &g).unwrap();
        assert_eq!(a, MetaAction::Slower);
        // Empty mask is an error.
        assert!(act_individual(&policy, &obs, &[], &g).is_err());
    }

    #[test]
    fn act_individual_uses_learned_values() {
        let g = RoadGeometry::default();
        let w = world_with(vec![cav(1, 1, 100.0, 20.0)]);
        let obs = observe(&w, 1, DEFAULT_OBS_RADIUS).unwrap();
        let key = discretize(&obs, &g);

        let mut policy = PolicyArtifact::empty(0);
        let mut row = [0.0; 5];
        row[MetaAction::Faster.index()] = 2.5;
        policy.q.insert(key.index().to_string(), row);

        let a = act_individual(&policy, &obs, &MetaAction::ALL, &g).unwrap();
        assert_eq!(a, MetaAction::Faster);
    }

    #[test]
    fn zero_episode_training_gives_empty_table() {
        let scenario = ScenarioConfig {
            geometry: RoadGeometry::default(),
            density: Density::Easy,
            style_mix: StyleMix::all_normal(),
            n_cavs: 1,
        };
        let tc = TrainConfig {
            episodes: 0,
            ..TrainConfig::default()
        };
        let artifact = train(&scenario, &RewardWeights::default(), &tc).unwrap();
        assert!(artifact.q.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let scenario = ScenarioConfig {
            geometry: RoadGeometry::default(),
            density: Density::Easy,
            style_mix: StyleMix::all_normal(),
            n_cavs: 1,
        };
        let tc = TrainConfig {
            episodes: 4,
            seed: 42,
            ..TrainConfig::default()
        };
        let a = train(&scenario, &RewardWeights::default(), &tc).unwrap();
        let b = train(&scenario, &RewardWeights::default(), &tc).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.meta.episode_returns.len(), 4);
    }

    #[test]
    fn artifact_serialization_round_trips_exactly() {
        let scenario = ScenarioConfig {
            geometry: RoadGeometry::default(),
            density: Density::Easy,
            style_mix: StyleMix::all_normal(),
            n_cavs: 1,
        };
        let tc = TrainConfig {
            episodes: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let artifact = train(&scenario, &RewardWeights::default(), &tc).unwrap();
        let json = artifact.to_json().unwrap();
        let back = PolicyArtifact::from_json(&json).unwrap();
        assert_eq!(artifact, back);
    }
}
