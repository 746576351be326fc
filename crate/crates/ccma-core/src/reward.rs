//! Reward mathematics: per-step components (flow, comfort, cooperation,
//! safety), their weighted combination per agent, and the one-step
//! best-response used for negotiation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{
    observe, step, JointAction, MetaAction, WorldState, DEFAULT_OBS_RADIUS, SPEED_CAP,
};

/// Weights over the reward components. The four component weights sum to 1,
/// as do the ego/cooperative aggregation weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_flow: f64,
    pub w_comf: f64,
    pub w_coop: f64,
    pub w_safe: f64,
    pub w_ego: f64,
    pub w_coop_total: f64,
    /// Acceleration-change threshold (m/s^2) above which comfort decays.
    pub accel_threshold: f64,
    /// Time-to-collision (s) regarded as fully safe.
    pub ttc_safe: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_flow: 0.35,
            w_comf: 0.15,
            w_coop: 0.2,
            w_safe: 0.3,
            w_ego: 0.6,
            w_coop_total: 0.4,
            accel_threshold: 3.0,
            ttc_safe: 4.0,
        }
    }
}

impl RewardWeights {
    /// Scale both weight groups to sum to 1. Weights already normalized
    /// within 1e-12 are returned unchanged, so normalizing is idempotent.
    pub fn normalized(&self) -> Self {
        let mut w = *self;
        let comp = self.w_flow + self.w_comf + self.w_coop + self.w_safe;
        if comp > 0.0 && (comp - 1.0).abs() > 1e-12 {
            w.w_flow /= comp;
            w.w_comf /= comp;
            w.w_coop /= comp;
            w.w_safe /= comp;
        }
        let agg = self.w_ego + self.w_coop_total;
        if agg > 0.0 && (agg - 1.0).abs() > 1e-12 {
            w.w_ego /= agg;
            w.w_coop_total /= agg;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        let comps = [
            self.w_flow,
            self.w_comf,
            self.w_coop,
            self.w_safe,
            self.w_ego,
            self.w_coop_total,
        ];
        if comps.iter().any(|c| *c < 0.0 || !c.is_finite()) {
            return Err(Error::Config("reward weights must be finite and >= 0".into()));
        }
        let sum = self.w_flow + self.w_comf + self.w_coop + self.w_safe;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("component weights must sum to 1, got {sum}")));
        }
        let agg = self.w_ego + self.w_coop_total;
        if (agg - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("w_ego + w_coop_total must sum to 1, got {agg}")));
        }
        if !(self.accel_threshold > 0.0) {
            return Err(Error::Config("accel_threshold must be > 0".into()));
        }
        if !(self.ttc_safe > 0.0) {
            return Err(Error::Config("ttc_safe must be > 0".into()));
        }
        Ok(())
    }

    /// Pin the cooperation factor and scale the remaining component weights
    /// pro-rata so the group still sums to 1. The factor is one cooperative
    /// signal applied at both aggregation points, so the ego/cooperative
    /// split moves with it.
    pub fn with_coop_weight(&self, w_coop: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w_coop) {
            return Err(Error::Input(format!("w_coop must be in [0,1], got {w_coop}")));
        }
        let mut w = *self;
        let others = self.w_flow + self.w_comf + self.w_safe;
        w.w_coop = w_coop;
        if others > 0.0 {
            let factor = (1.0 - w_coop) / others;
            w.w_flow *= factor;
            w.w_comf *= factor;
            w.w_safe *= factor;
        } else {
            w.w_flow = (1.0 - w_coop) / 3.0;
            w.w_comf = (1.0 - w_coop) / 3.0;
            w.w_safe = (1.0 - w_coop) / 3.0;
        }
        w.w_coop_total = w_coop;
        w.w_ego = 1.0 - w_coop;
        Ok(w)
    }
}

/// Per-agent reward components and their weighted total for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub id: u64,
    pub flow: f64,
    pub comf: f64,
    pub coop: f64,
    pub safe: f64,
    pub total: f64,
}

/// Traffic-flow component: mean speed of non-frozen vehicles over the speed
/// cap. An empty (or fully frozen) world scores 0.
pub fn r_flow(world: &WorldState) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in &world.vehicles {
        if !v.frozen {
            sum += v.speed;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64 / SPEED_CAP).clamp(0.0, 1.0)
    }
}

/// Comfort component: 1 while the acceleration change stays under the
/// threshold, decaying linearly to 0 at twice the threshold.
pub fn r_comf(accel: f64, prev_accel: f64, threshold: f64) -> f64 {
    let jerk = (accel - prev_accel).abs();
    if jerk <= threshold {
        1.0
    } else {
        (1.0 - (jerk - threshold) / threshold).max(0.0)
    }
}

/// Safety component: -1 on a collision this step, otherwise the clipped
/// ratio of front time-to-collision over the safe horizon.
pub fn r_safe(world_after: &WorldState, id: u64, ttc_safe: f64) -> f64 {
    if world_after.collided_last_step(id) {
        return -1.0;
    }
    let ttc = world_after.ttc_front_scored(id);
    (ttc / ttc_safe).min(1.0)
}

/// Per-vehicle wellbeing score in [0,1]: half speed ratio, half safety
/// margin.
fn wellbeing(world: &WorldState, id: u64, ttc_safe: f64) -> f64 {
    let v = match world.vehicle(id) {
        Some(v) => v,
        None => return 0.0,
    };
    let speed_part = (v.speed / SPEED_CAP).clamp(0.0, 1.0);
    let ttc_part = (world.ttc_front_scored(id) / ttc_safe).min(1.0);
    0.5 * speed_part + 0.5 * ttc_part
}

/// Cooperation component: mean neighbour wellbeing mapped to [-1,1];
/// 0 with no neighbours in range.
pub fn r_coop(world_after: &WorldState, id: u64, r_obs: f64, ttc_safe: f64) -> f64 {
    let obs = match observe(world_after, id, r_obs) {
        Ok(obs) => obs,
        Err(_) => return 0.0,
    };
    if obs.neighbors.is_empty() {
        return 0.0;
    }
    let mean: f64 = obs
        .neighbors
        .iter()
        .map(|n| wellbeing(world_after, n.id, ttc_safe))
        .sum::<f64>()
        / obs.neighbors.len() as f64;
    2.0 * mean - 1.0
}

/// Weighted sum of the four components. Linear in every weight.
pub fn weighted_total(flow: f64, comf: f64, coop: f64, safe: f64, w: &RewardWeights) -> f64 {
    w.w_flow * flow + w.w_comf * comf + w.w_coop * coop + w.w_safe * safe
}

/// Reward components of one vehicle after a transition.
pub fn breakdown_for(s_after: &WorldState, id: u64, w: &RewardWeights) -> RewardBreakdown {
    let flow = r_flow(s_after);
    let (comf, coop, safe) = match s_after.vehicle(id) {
        Some(v) => (
            r_comf(v.accel, v.prev_accel, w.accel_threshold),
            r_coop(s_after, id, DEFAULT_OBS_RADIUS, w.ttc_safe),
            r_safe(s_after, id, w.ttc_safe),
        ),
        None => (1.0, 0.0, 1.0),
    };
    RewardBreakdown {
        id,
        flow,
        comf,
        coop,
        safe,
        total: weighted_total(flow, comf, coop, safe, w),
    }
}

/// Joint reward for every controlled vehicle after a transition. Weights are
/// applied as given (no implicit normalization).
pub fn joint_reward(
    _s: &WorldState,
    _a: &JointAction,
    s_after: &WorldState,
    w: &RewardWeights,
) -> BTreeMap<u64, RewardBreakdown> {
    let mut out = BTreeMap::new();
    for v in &s_after.vehicles {
        if !v.is_cav() {
            continue;
        }
        out.insert(v.id, breakdown_for(s_after, v.id, w));
    }
    out
}

/// Ego reward: the flow/comfort/safety components recombined with their
/// weights renormalized to sum to 1.
pub fn ego_reward(flow: f64, comf: f64, safe: f64, w: &RewardWeights) -> f64 {
    let sum = w.w_flow + w.w_comf + w.w_safe;
    if sum <= 0.0 {
        return 0.0;
    }
    (w.w_flow * flow + w.w_comf * comf + w.w_safe * safe) / sum
}

/// Total reward combining the ego and cooperative signals.
pub fn total_reward(r_ego: f64, r_coop: f64, w: &RewardWeights) -> f64 {
    w.w_ego * r_ego + w.w_coop_total * r_coop
}

/// Total reward of one agent from a transition breakdown.
pub fn agent_total(b: &RewardBreakdown, w: &RewardWeights) -> f64 {
    total_reward(ego_reward(b.flow, b.comf, b.safe, w), b.coop, w)
}

/// Among scored actions, pick the maximum value with exact ties broken by
/// the fixed preference order.
pub fn argmax_in_tie_order(values: &[(MetaAction, f64)]) -> Option<MetaAction> {
    let mut best: Option<(MetaAction, f64)> = None;
    for a in MetaAction::TIE_ORDER {
        if let Some(&(_, v)) = values.iter().find(|(act, _)| *act == a) {
            match best {
                None => best = Some((a, v)),
                Some((_, bv)) if v > bv => best = Some((a, v)),
                _ => {}
            }
        }
    }
    best.map(|(a, _)| a)
}

/// One-step value of each candidate action for an agent, simulating the next
/// step with all other controlled vehicles held to idle intent.
pub fn candidate_values(
    world: &WorldState,
    id: u64,
    candidates: &[MetaAction],
    w: &RewardWeights,
) -> Result<Vec<(MetaAction, f64)>> {
    if world.vehicle(id).is_none() {
        return Err(Error::Input(format!("unknown vehicle id {id}")));
    }
    let mut out = Vec::with_capacity(candidates.len());
    for &action in candidates {
        let joint = JointAction::single(world, id, action);
        let (after, _) = step(world, &joint)?;
        let rewards = joint_reward(world, &joint, &after, w);
        let value = rewards.get(&id).map(|b| agent_total(b, w)).unwrap_or(0.0);
        out.push((action, value));
    }
    Ok(out)
}

/// Best-response action: argmax of the one-step total reward over the
/// candidate set, ties broken by the fixed preference order.
pub fn best_response(
    world: &WorldState,
    id: u64,
    candidates: &[MetaAction],
    w: &RewardWeights,
) -> Result<MetaAction> {
    if candidates.is_empty() {
        return Err(Error::Input("best_response needs a nonempty candidate set".into()));
    }
    let values = candidate_values(world, id, candidates, w)?;
    Ok(argmax_in_tie_order(&values).expect("nonempty candidates"))
}
