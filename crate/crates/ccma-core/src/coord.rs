//! Regional coordination: regions form around unmerged ramp vehicles, a
//! backend scores every member's actions, and a softmax + argmax pipeline
//! turns scores into per-member decisions and broadcast messages. The
//! deterministic rule oracle and the remote language-model backend share the
//! same pipeline; arbitration reconciles regional decisions with the
//! individual level under the hazard mask.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{build_prompt, lm_scores, parse_decision, LmSession};
use crate::reward::{agent_total, argmax_in_tie_order, breakdown_for, RewardWeights};
use crate::sim::{
    lane_change_target, step, IdmParams, JointAction, MetaAction, VehicleState, WorldState,
};

/// Default coordination radius in metres.
pub const DEFAULT_REGION_RADIUS: f64 = 50.0;
/// Alignment horizon (s) for matching the merge vehicle to a gap.
const GAP_ALIGN_HORIZON: f64 = 3.0;
/// Structural score bonus that puts an advisory action on top.
const ADVISORY_BONUS: f64 = 1.0;
/// Additive nudge on the centre vehicle's merge action. One-step rewards
/// cannot see the payoff of a merge (speed recovers over later steps) and
/// the cooperative term actively dislikes slotting in front of traffic, so
/// the oracle carries the merge intent structurally. Sized so that ordinary
/// merges always go while safety- or cooperation-heavy weightings can still
/// veto tight ones.
const CENTER_MERGE_BONUS: f64 = 0.25;
/// Additive nudge on the centre's speed action toward the chosen gap.
const CENTER_ALIGN_BONUS: f64 = 0.2;

/// A group of vehicles coordinated together, centred on an unmerged ramp
/// vehicle. Overlapping regions are merged, keeping the lowest centre id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center_id: u64,
    pub member_ids: BTreeSet<u64>,
    pub radius: f64,
}

/// Why a message was sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageReason {
    MergeRequest,
    GapOffer,
    Hold,
    YieldLeft,
}

impl MessageReason {
    pub fn name(self) -> &'static str {
        match self {
            MessageReason::MergeRequest => "merge_request",
            MessageReason::GapOffer => "gap_offer",
            MessageReason::Hold => "hold",
            MessageReason::YieldLeft => "yield_left",
        }
    }
}

/// Broadcast message carrying a sender's intended action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommMessage {
    pub sender: u64,
    pub tick: u64,
    pub intent: MetaAction,
    pub reason: MessageReason,
    pub target: Option<u64>,
}

/// Per-member action scores (logits) in canonical action order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionScores {
    pub scores: BTreeMap<u64, [f64; 5]>,
}

/// Where a regional decision came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    RuleOracle,
    RemoteLm,
    Fallback,
}

/// One member's chosen action with a short rationale tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionEntry {
    pub id: u64,
    pub action: MetaAction,
    pub reason: String,
}

/// The coordinator's output for one region. Serializes to the wire schema
/// `{"region", "source", "decisions", "messages"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalDecision {
    pub region: u64,
    pub source: DecisionSource,
    pub decisions: Vec<DecisionEntry>,
    pub messages: Vec<CommMessage>,
}

impl RegionalDecision {
    pub fn action_for(&self, id: u64) -> Option<MetaAction> {
        self.decisions.iter().find(|d| d.id == id).map(|d| d.action)
    }
}

/// Form one region per unmerged ramp vehicle and merge overlapping ones.
pub fn form_regions(world: &WorldState, radius: f64) -> Vec<Region> {
    let mut regions: Vec<Region> = Vec::new();
    for center in &world.vehicles {
        if !center.is_cav() || !center.on_ramp(&world.geometry) {
            continue;
        }
        let member_ids: BTreeSet<u64> = world
            .vehicles
            .iter()
            .filter(|v| v.distance_to(center, &world.geometry) <= radius)
            .map(|v| v.id)
            .collect();
        regions.push(Region {
            center_id: center.id,
            member_ids,
            radius,
        });
    }

    // Merge intersecting regions until stable; the union keeps the lowest
    // centre id.
    loop {
        let mut merged_any = false;
        'outer: for i in 0..regions.len() {
            for j in (i + 1)..regions.len() {
                if !regions[i].member_ids.is_disjoint(&regions[j].member_ids) {
                    let absorbed = regions.remove(j);
                    let host = &mut regions[i];
                    host.center_id = host.center_id.min(absorbed.center_id);
                    host.member_ids.extend(absorbed.member_ids);
                    merged_any = true;
                    break 'outer;
                }
            }
        }
        if !merged_any {
            break;
        }
    }
    regions.sort_by_key(|r| r.center_id);
    regions
}

/// Numerically stable softmax of one score row.
pub fn softmax_row(values: &[f64], temperature: f64) -> Vec<f64> {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|z| ((z - m) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-member softmax over backend scores.
pub fn softmax_policy(
    scores: &ActionScores,
    temperature: f64,
) -> Result<BTreeMap<u64, [f64; 5]>> {
    if temperature < 1e-6 {
        return Err(Error::Input(format!(
            "softmax temperature must be >= 1e-6, got {temperature}"
        )));
    }
    let mut out = BTreeMap::new();
    for (&id, row) in &scores.scores {
        if row.iter().any(|z| !z.is_finite()) {
            return Err(Error::Input(format!("non-finite score for member {id}")));
        }
        let probs = softmax_row(row, temperature);
        let mut fixed = [0.0; 5];
        fixed.copy_from_slice(&probs);
        out.insert(id, fixed);
    }
    Ok(out)
}

/// A candidate gap in the merge target lane.
#[derive(Debug, Clone, Copy)]
struct Gap {
    center_pos: f64,
    speed: f64,
    length: f64,
    lag_id: Option<u64>,
}

/// Enumerate the gaps of the merge target lane as seen by the centre
/// vehicle, and pick the one needing the least speed change to align with.
fn target_gap(world: &WorldState, center: &VehicleState) -> Option<Gap> {
    let lane = world.geometry.rightmost_main_lane();
    let mut in_lane: Vec<&VehicleState> =
        world.vehicles.iter().filter(|v| v.lane == lane).collect();
    in_lane.sort_by(|a, b| a.pos.partial_cmp(&b.pos).unwrap());

    let mut gaps: Vec<Gap> = Vec::new();
    if in_lane.is_empty() {
        gaps.push(Gap {
            center_pos: center.pos,
            speed: center.speed,
            length: f64::INFINITY,
            lag_id: None,
        });
    } else {
        let rear = in_lane[0];
        gaps.push(Gap {
            center_pos: rear.pos - 30.0,
            speed: rear.speed,
            length: f64::INFINITY,
            lag_id: None,
        });
        for pair in in_lane.windows(2) {
            let (follower, leader) = (pair[0], pair[1]);
            gaps.push(Gap {
                center_pos: (follower.pos + leader.pos) / 2.0,
                speed: (follower.speed + leader.speed) / 2.0,
                length: leader.pos - follower.pos - (leader.length + follower.length) / 2.0,
                lag_id: Some(follower.id),
            });
        }
        let front = in_lane[in_lane.len() - 1];
        gaps.push(Gap {
            center_pos: front.pos + 30.0,
            speed: front.speed,
            length: f64::INFINITY,
            lag_id: Some(front.id),
        });
    }

    let mut best: Option<(f64, Gap)> = None;
    for gap in gaps {
        let needed =
            (gap.center_pos + gap.speed * GAP_ALIGN_HORIZON - center.pos) / GAP_ALIGN_HORIZON;
        let dv = (needed - center.speed).abs();
        if best.map_or(true, |(b, _)| dv < b) {
            best = Some((dv, gap));
        }
    }
    best.map(|(_, g)| g)
}

/// One-step total reward of a member taking an action with everyone else
/// held to idle intent, plus whether the member collided in the lookahead.
/// Background vehicles are simulated through an advisory nudge instead of a
/// direct command.
fn member_action_value(
    world: &WorldState,
    member: &VehicleState,
    action: MetaAction,
    w: &RewardWeights,
) -> Result<(f64, bool)> {
    let joint = if member.is_cav() {
        JointAction::single(world, member.id, action)
    } else {
        let mut joint = JointAction::all_idle(world);
        joint.hdv_nudges.insert(member.id, action);
        joint
    };
    let (after, events) = step(world, &joint)?;
    let collided = events.iter().any(|e| e.a == member.id || e.b == member.id);
    let b = breakdown_for(&after, member.id, w);
    Ok((agent_total(&b, w), collided))
}

/// Deterministic gap-acceptance coordinator. The centre vehicle is scored by
/// its one-step best-response values; the lag vehicle of the chosen gap is
/// nudged to open space (yielding left when that is safe); every other
/// member is biased to hold.
pub fn rule_oracle_scores(
    region: &Region,
    world: &WorldState,
    w: &RewardWeights,
) -> Result<ActionScores> {
    let center = world
        .vehicle(region.center_id)
        .ok_or_else(|| Error::Input(format!("region centre {} not in world", region.center_id)))?;
    let gap = target_gap(world, center);
    let min_gap_needed = IdmParams::default().min_gap + center.length;

    let mut scores = BTreeMap::new();
    for &id in &region.member_ids {
        let Some(member) = world.vehicle(id) else {
            return Err(Error::Input(format!("region member {id} not in world")));
        };
        let mut row = [0.0; 5];
        let mut merge_collides = false;
        for action in MetaAction::ALL {
            let (value, collided) = member_action_value(world, member, action, w)?;
            row[action.index()] = value;
            if action == MetaAction::LaneLeft {
                merge_collides = collided;
            }
        }
        let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        if id == region.center_id {
            // The centre merges once its slot is physically safe; short of
            // that it adjusts speed toward the chosen gap's pace. Both
            // nudges are additive on top of the weighted one-step rewards,
            // which keep the veto in marginal situations.
            let target_lane = world.geometry.rightmost_main_lane();
            let merge_ok = member.on_ramp(&world.geometry)
                && lane_change_target(member, MetaAction::LaneLeft, &world.geometry).is_some()
                && crate::sim::mobil_safety_ok(world, member, target_lane)
                && !merge_collides;
            if merge_ok {
                row[MetaAction::LaneLeft.index()] += CENTER_MERGE_BONUS;
            } else if let Some(g) = &gap {
                let needed =
                    (g.center_pos + g.speed * GAP_ALIGN_HORIZON - member.pos) / GAP_ALIGN_HORIZON;
                let dv = needed - member.speed;
                if dv > 1.0 {
                    row[MetaAction::Faster.index()] += CENTER_ALIGN_BONUS;
                } else if dv < -1.0 {
                    row[MetaAction::Slower.index()] += CENTER_ALIGN_BONUS;
                }
            }
        } else if gap.as_ref().and_then(|g| g.lag_id) == Some(id)
            && gap.as_ref().map_or(false, |g| g.length < min_gap_needed)
        {
            // Gap too small: the lag vehicle yields left when safe, else
            // slows to open the gap.
            let advisory = if member.lane > 0
                && crate::sim::mobil_safety_ok(world, member, member.lane - 1)
            {
                MetaAction::LaneLeft
            } else {
                MetaAction::Slower
            };
            row[advisory.index()] = top + ADVISORY_BONUS;
        } else {
            row[MetaAction::Idle.index()] = top + ADVISORY_BONUS;
        }
        scores.insert(id, row);
    }
    Ok(ActionScores { scores })
}

/// Which backend drives a coordination call.
pub enum CoordinationBackend<'a> {
    RuleOracle,
    Remote {
        session: &'a mut LmSession,
        /// Degrade to the rule oracle on failure instead of erroring.
        fallback: bool,
    },
}

/// Options for the decision pipeline.
#[derive(Debug, Clone)]
pub struct CoordinateOptions {
    pub temperature: f64,
    /// Sample from the softmax instead of taking the argmax.
    pub sample: bool,
}

impl Default for CoordinateOptions {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            sample: false,
        }
    }
}

/// Coordinate one region: obtain scores, softmax, pick actions, and emit one
/// message per member that intends to act.
pub fn coordinate(
    region: &Region,
    world: &WorldState,
    backend: &mut CoordinationBackend<'_>,
    inbox: &[CommMessage],
    w: &RewardWeights,
    opts: &CoordinateOptions,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<RegionalDecision> {
    match backend {
        CoordinationBackend::RuleOracle => {
            let scores = rule_oracle_scores(region, world, w)?;
            finish_decision(region, world, &scores, DecisionSource::RuleOracle, None, opts, rng)
        }
        CoordinationBackend::Remote { session, fallback } => {
            match remote_scores(region, world, inbox, session) {
                Ok((scores, reasons)) => finish_decision(
                    region,
                    world,
                    &scores,
                    DecisionSource::RemoteLm,
                    Some(reasons),
                    opts,
                    rng,
                ),
                Err(_) if *fallback => {
                    let scores = rule_oracle_scores(region, world, w)?;
                    finish_decision(
                        region,
                        world,
                        &scores,
                        DecisionSource::Fallback,
                        None,
                        opts,
                        rng,
                    )
                }
                Err(err) => Err(Error::Coordination(format!(
                    "remote backend failed with fallback disabled: {err}"
                ))),
            }
        }
    }
}

/// Query the remote model, with one repair re-prompt on an invalid response.
fn remote_scores(
    region: &Region,
    world: &WorldState,
    inbox: &[CommMessage],
    session: &mut LmSession,
) -> Result<(ActionScores, BTreeMap<u64, String>)> {
    let prompt = build_prompt(region, world, inbox)?;
    let text = session.complete(&prompt)?;
    let decision = match parse_decision(&text, region) {
        Ok(d) => d,
        Err(first_err) => {
            let repair = prompt.with_repair_note(&first_err.to_string());
            let text = session.complete(&repair)?;
            parse_decision(&text, region)?
        }
    };
    let reasons = decision
        .decisions
        .iter()
        .map(|d| (d.id, d.reason.clone()))
        .collect();
    Ok((lm_scores(&decision, region, None), reasons))
}

fn finish_decision(
    region: &Region,
    world: &WorldState,
    scores: &ActionScores,
    source: DecisionSource,
    remote_reasons: Option<BTreeMap<u64, String>>,
    opts: &CoordinateOptions,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<RegionalDecision> {
    let probs = softmax_policy(scores, opts.temperature)?;
    let mut decisions = Vec::new();
    let mut messages = Vec::new();
    let tick = world.decision_step();

    for (&id, row) in &probs {
        let action = if opts.sample {
            let r = rng
                .as_deref_mut()
                .ok_or_else(|| Error::Input("sampling requested without an RNG".into()))?;
            sample_row(row, r)
        } else {
            let values: Vec<(MetaAction, f64)> =
                MetaAction::ALL.iter().map(|&a| (a, row[a.index()])).collect();
            argmax_in_tie_order(&values).expect("five actions")
        };

        let reason = match &remote_reasons {
            Some(map) => map.get(&id).cloned().unwrap_or_else(|| "hold".to_string()),
            None => oracle_reason(region, world, id, action),
        };
        decisions.push(DecisionEntry { id, action, reason });

        if action != MetaAction::Idle {
            messages.push(build_message(region, world, id, action, tick));
        }
    }

    Ok(RegionalDecision {
        region: region.center_id,
        source,
        decisions,
        messages,
    })
}

fn sample_row(row: &[f64; 5], rng: &mut ChaCha8Rng) -> MetaAction {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for action in MetaAction::ALL {
        acc += row[action.index()];
        if x < acc {
            return action;
        }
    }
    MetaAction::Slower
}

fn oracle_reason(region: &Region, world: &WorldState, id: u64, action: MetaAction) -> String {
    if id == region.center_id {
        return "merge_alignment".to_string();
    }
    let is_ramp_cav = world
        .vehicle(id)
        .map(|v| v.is_cav() && v.on_ramp(&world.geometry))
        .unwrap_or(false);
    if is_ramp_cav {
        return "queue_for_merge".to_string();
    }
    match action {
        MetaAction::Slower => "open_gap".to_string(),
        MetaAction::LaneLeft => "yield_left".to_string(),
        MetaAction::Idle => "hold".to_string(),
        _ => "adjust".to_string(),
    }
}

fn build_message(
    region: &Region,
    world: &WorldState,
    id: u64,
    action: MetaAction,
    tick: u64,
) -> CommMessage {
    let is_ramp_cav = world
        .vehicle(id)
        .map(|v| v.is_cav() && v.on_ramp(&world.geometry))
        .unwrap_or(false);
    let (reason, target) = if is_ramp_cav {
        (MessageReason::MergeRequest, None)
    } else if action == MetaAction::Slower {
        (MessageReason::GapOffer, Some(region.center_id))
    } else if action == MetaAction::LaneLeft {
        (MessageReason::YieldLeft, Some(region.center_id))
    } else {
        (MessageReason::Hold, None)
    };
    CommMessage {
        sender: id,
        tick,
        intent: action,
        reason,
        target,
    }
}

/// Deliver every decision's messages to all vehicles within `r_obs` of the
/// sender; inboxes come back sorted by (tick, sender).
pub fn broadcast(
    decisions: &[RegionalDecision],
    world: &WorldState,
    r_obs: f64,
) -> BTreeMap<u64, Vec<CommMessage>> {
    let mut inboxes: BTreeMap<u64, Vec<CommMessage>> = BTreeMap::new();
    for decision in decisions {
        for msg in &decision.messages {
            let Some(sender) = world.vehicle(msg.sender) else { continue };
            for v in &world.vehicles {
                if v.id != msg.sender && v.distance_to(sender, &world.geometry) <= r_obs {
                    inboxes.entry(v.id).or_default().push(msg.clone());
                }
            }
        }
    }
    for inbox in inboxes.values_mut() {
        inbox.sort_by(|a, b| a.tick.cmp(&b.tick).then(a.sender.cmp(&b.sender)));
    }
    inboxes
}

/// Reconcile regional decisions with the individual level. A regional action
/// wins only when the hazard mask allows it; background-vehicle advisories
/// pass through only when cooperative background traffic is enabled.
pub fn arbitrate(
    p1: &BTreeMap<u64, MetaAction>,
    p2: Option<&[RegionalDecision]>,
    masks: &BTreeMap<u64, Vec<MetaAction>>,
    hdv_cooperative: bool,
) -> JointAction {
    let mut joint = JointAction {
        cav: p1.clone(),
        hdv_nudges: BTreeMap::new(),
    };
    let Some(decisions) = p2 else { return joint };
    for decision in decisions {
        for entry in &decision.decisions {
            if p1.contains_key(&entry.id) {
                let allowed = masks
                    .get(&entry.id)
                    .map(|m| m.contains(&entry.action))
                    .unwrap_or(false);
                if allowed {
                    joint.cav.insert(entry.id, entry.action);
                }
            } else if hdv_cooperative && entry.action != MetaAction::Idle {
                joint.hdv_nudges.insert(entry.id, entry.action);
            }
        }
    }
    joint
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{RoadGeometry, VehicleKind, VehicleState};

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

    fn ramp_cav(id: u64, pos: f64, speed: f64) -> VehicleState {
        let g = RoadGeometry::default();
        cav(id, g.ramp_lane(), pos, speed)
    }

    #[test]
    fn no_unmerged_cavs_no_regions() {
        let mut merged = ramp_cav(1, 250.0, 20.0);
        merged.merged = true;
        merged.lane = 1;
        let w = world_with(vec![merged, hdv(2, 0, 100.0, 20.0)]);
        assert!(form_regions(&w, 50.0).is_empty());
    }

    #[test]
    fn region_collects_vehicles_within_radius() {
        let w = world_with(vec![
            ramp_cav(1, 250.0, 15.0),
            hdv(2, 1, 260.0, 20.0),
            hdv(3, 1, 230.0, 20.0),
            hdv(4, 0, 270.0, 20.0),
            hdv(5, 0, 100.0, 20.0), // far away
        ]);
        let regions = form_regions(&w, 50.0);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].center_id, 1);
        let ids: Vec<u64> = regions[0].member_ids.iter().copied().collect();
        assert_eq!(ids, vec![1, 2, 3, 4]);
    }

    #[test]
    fn overlapping_regions_merge_to_lowest_center() {
        let w = world_with(vec![ramp_cav(3, 250.0, 15.0), ramp_cav(7, 280.0, 15.0)]);
        let regions = form_regions(&w, 50.0);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].center_id, 3);
        assert!(regions[0].member_ids.contains(&7));
    }

    #[test]
    fn every_unmerged_ramp_cav_in_exactly_one_region() {
        use rand::Rng;
        let g = RoadGeometry::default();
        for seed in 0..50u64 {
            let mut r = crate::rng::seeded(seed);
            let mut vehicles = Vec::new();
            let n_ramp = r.gen_range(1..5);
            for k in 0..n_ramp {
                vehicles.push(ramp_cav(k as u64 + 1, r.gen_range(175.0..315.0), 10.0));
            }
            for k in 0..r.gen_range(0..8) {
                vehicles.push(hdv(100 + k as u64, r.gen_range(0..2), r.gen_range(0.0..500.0), 20.0));
            }
            let w = world_with(vehicles);
            let regions = form_regions(&w, 50.0);
            for v in &w.vehicles {
                if v.is_cav() && v.on_ramp(&g) {
                    let containing = regions.iter().filter(|r| r.member_ids.contains(&v.id)).count();
                    assert_eq!(containing, 1, "seed {seed} vehicle {}", v.id);
                }
            }
        }
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let probs = softmax_row(&[0.7; 5], 1.0);
        for p in probs {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_matches_analytic_two_action_case() {
        let probs = softmax_row(&[(2.0f64).ln(), 0.0], 1.0);
        assert!((probs[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((probs[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_low_temperature_concentrates() {
        let probs = softmax_row(&[4.0, 0.0, 0.0, 0.0, 0.0], 1e-6);
        assert!(probs[0] >= 1.0 - 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        use rand::Rng;
        let mut r = crate::rng::seeded(3);
        for _ in 0..200 {
            let row: Vec<f64> = (0..5).map(|_| r.gen_range(-30.0..30.0)).collect();
            let tau = r.gen_range(0.01..5.0);
            let probs = softmax_row(&row, tau);
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn softmax_is_permutation_equivariant() {
        let row = [1.0, -2.0, 0.5, 3.0, 0.0];
        let probs = softmax_row(&row, 0.7);
        let perm = [3usize, 0, 4, 1, 2];
        let permuted_row: Vec<f64> = perm.iter().map(|&i| row[i]).collect();
        let permuted_probs = softmax_row(&permuted_row, 0.7);
        for (k, &i) in perm.iter().enumerate() {
            assert!((permuted_probs[k] - probs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_policy_rejects_bad_inputs() {
        let mut scores = ActionScores { scores: BTreeMap::new() };
        scores.scores.insert(1, [0.0; 5]);
        assert!(matches!(softmax_policy(&scores, 1e-7), Err(Error::Input(_))));
        scores.scores.insert(2, [f64::NAN, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(softmax_policy(&scores, 1.0), Err(Error::Input(_))));
    }

    fn lone_ego_region(world: &WorldState, id: u64) -> Region {
        let mut member_ids = BTreeSet::new();
        member_ids.insert(id);
        Region { center_id: id, member_ids, radius: 50.0 }
    }

    #[test]
    fn lone_ego_oracle_matches_best_response() {
        let g = RoadGeometry::default();
        let mut ego = ramp_cav(1, 240.0, 15.0);
        ego.target_speed = 20.0;
        let w = world_with(vec![ego]);
        let region = lone_ego_region(&w, 1);
        let weights = RewardWeights::default();

        let mut backend = CoordinationBackend::RuleOracle;
        let decision = coordinate(
            &region,
            &w,
            &mut backend,
            &[],
            &weights,
            &CoordinateOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(decision.source, DecisionSource::RuleOracle);
        let expect =
            crate::reward::best_response(&w, 1, &MetaAction::ALL, &weights).unwrap();
        assert_eq!(decision.action_for(1), Some(expect));
        let _ = g;
    }

    #[test]
    fn tight_gap_lag_vehicle_yields_left() {
        // Ramp vehicle aligned with a too-small gap in the right main lane;
        // the lag vehicle has a free left lane and is advised to yield
        // there.
        let g = RoadGeometry::default();
        let mut ego = ramp_cav(10, 250.0, 20.0);
        ego.target_speed = 25.0;
        let mut leader = hdv(2, g.rightmost_main_lane(), 262.0, 20.0);
        leader.target_speed = 20.0;
        let mut lag = hdv(3, g.rightmost_main_lane(), 247.0, 20.0);
        lag.target_speed = 20.0;
        let w = world_with(vec![ego, leader, lag]);
        let region = Region {
            center_id: 10,
            member_ids: [2, 3, 10].into_iter().collect(),
            radius: 50.0,
        };
        let scores = rule_oracle_scores(&region, &w, &RewardWeights::default()).unwrap();
        let lag_row = scores.scores.get(&3).unwrap();
        let top = MetaAction::ALL
            .iter()
            .max_by(|a, b| lag_row[a.index()].partial_cmp(&lag_row[b.index()]).unwrap())
            .copied()
            .unwrap();
        assert_eq!(top, MetaAction::LaneLeft, "lag row {lag_row:?}");
    }

    #[test]
    fn coordinate_emits_one_message_per_acting_member() {
        let g = RoadGeometry::default();
        let mut ego = ramp_cav(10, 250.0, 20.0);
        ego.target_speed = 25.0;
        let mut leader = hdv(2, g.rightmost_main_lane(), 262.0, 20.0);
        leader.target_speed = 20.0;
        let mut lag = hdv(3, g.rightmost_main_lane(), 247.0, 20.0);
        lag.target_speed = 20.0;
        let w = world_with(vec![ego, leader, lag]);
        let region = Region {
            center_id: 10,
            member_ids: [2, 3, 10].into_iter().collect(),
            radius: 50.0,
        };
        let mut backend = CoordinationBackend::RuleOracle;
        let decision = coordinate(
            &region,
            &w,
            &mut backend,
            &[],
            &RewardWeights::default(),
            &CoordinateOptions::default(),
            None,
        )
        .unwrap();
        let acting = decision
            .decisions
            .iter()
            .filter(|d| d.action != MetaAction::Idle)
            .count();
        assert_eq!(decision.messages.len(), acting);
        for m in &decision.messages {
            assert_eq!(m.tick, 0);
        }
    }

    #[test]
    fn regional_decision_wire_schema() {
        let decision = RegionalDecision {
            region: 4,
            source: DecisionSource::Fallback,
            decisions: vec![DecisionEntry {
                id: 4,
                action: MetaAction::LaneLeft,
                reason: "merge".into(),
            }],
            messages: vec![CommMessage {
                sender: 4,
                tick: 2,
                intent: MetaAction::LaneLeft,
                reason: MessageReason::MergeRequest,
                target: None,
            }],
        };
        let json = serde_json::to_value(&decision).unwrap();
        assert_eq!(json["region"], 4);
        assert_eq!(json["source"], "fallback");
        assert_eq!(json["decisions"][0]["action"], "LANE_LEFT");
        assert_eq!(json["decisions"][0]["reason"], "merge");
        assert_eq!(json["messages"][0]["reason"], "merge_request");
        assert_eq!(json["messages"][0]["target"], serde_json::Value::Null);
    }

    #[test]
    fn broadcast_delivers_within_radius_only() {
        let w = world_with(vec![
            ramp_cav(1, 250.0, 15.0),
            hdv(2, 1, 260.0, 20.0),
            hdv(3, 0, 270.0, 20.0),
            hdv(4, 0, 420.0, 20.0), // out of range
        ]);
        let decision = RegionalDecision {
            region: 1,
            source: DecisionSource::RuleOracle,
            decisions: vec![],
            messages: vec![CommMessage {
                sender: 1,
                tick: 0,
                intent: MetaAction::LaneLeft,
                reason: MessageReason::MergeRequest,
                target: None,
            }],
        };
        let inboxes = broadcast(&[decision], &w, 50.0);
        assert!(inboxes.get(&2).map_or(false, |v| v.len() == 1));
        assert!(inboxes.get(&3).map_or(false, |v| v.len() == 1));
        assert!(!inboxes.contains_key(&4));
        assert!(!inboxes.contains_key(&1), "sender does not message itself");
        assert!(broadcast(&[], &w, 50.0).is_empty());
    }

    #[test]
    fn broadcast_inboxes_sorted_by_tick_then_sender() {
        let w = world_with(vec![ramp_cav(1, 250.0, 15.0), ramp_cav(2, 255.0, 15.0), hdv(3, 1, 252.0, 20.0)]);
        let msg = |sender: u64, tick: u64| CommMessage {
            sender,
            tick,
            intent: MetaAction::Slower,
            reason: MessageReason::Hold,
            target: None,
        };
        let decisions = vec![RegionalDecision {
            region: 1,
            source: DecisionSource::RuleOracle,
            decisions: vec![],
            messages: vec![msg(2, 1), msg(1, 1), msg(2, 0)],
        }];
        let inboxes = broadcast(&decisions, &w, 50.0);
        let inbox = inboxes.get(&3).unwrap();
        let keys: Vec<(u64, u64)> = inbox.iter().map(|m| (m.tick, m.sender)).collect();
        assert_eq!(keys, vec![(0, 2), (1, 1), (1, 2)]);
    }

    #[test]
    fn arbitrate_rules() {
        let mut p1 = BTreeMap::new();
        p1.insert(1u64, MetaAction::Idle);
        let mut masks = BTreeMap::new();
        masks.insert(1u64, vec![MetaAction::Idle, MetaAction::Faster]);

        // No regional decision: verbatim.
        let joint = arbitrate(&p1, None, &masks, true);
        assert_eq!(joint.cav.get(&1), Some(&MetaAction::Idle));
        assert!(joint.hdv_nudges.is_empty());

        let make = |action: MetaAction, hdv_action: MetaAction| RegionalDecision {
            region: 1,
            source: DecisionSource::RuleOracle,
            decisions: vec![
                DecisionEntry { id: 1, action, reason: "r".into() },
                DecisionEntry { id: 9, action: hdv_action, reason: "r".into() },
            ],
            messages: vec![],
        };

        // Inside the mask: regional action wins; cooperative advisory lands.
        let joint = arbitrate(&p1, Some(&[make(MetaAction::Faster, MetaAction::Slower)]), &masks, true);
        assert_eq!(joint.cav.get(&1), Some(&MetaAction::Faster));
        assert_eq!(joint.hdv_nudges.get(&9), Some(&MetaAction::Slower));

        // Outside the mask: the individual action stands.
        let joint = arbitrate(&p1, Some(&[make(MetaAction::LaneLeft, MetaAction::Slower)]), &masks, true);
        assert_eq!(joint.cav.get(&1), Some(&MetaAction::Idle));

        // Advisories are dropped when cooperative traffic is disabled, and
        // idle advisories are never forwarded.
        let joint = arbitrate(&p1, Some(&[make(MetaAction::Faster, MetaAction::Slower)]), &masks, false);
        assert!(joint.hdv_nudges.is_empty());
        let joint = arbitrate(&p1, Some(&[make(MetaAction::Faster, MetaAction::Idle)]), &masks, true);
        assert!(joint.hdv_nudges.is_empty());
    }
}
