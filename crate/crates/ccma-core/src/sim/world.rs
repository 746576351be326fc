//! World state and the deterministic transition function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::geometry::RoadGeometry;
use super::idm::{idm_accel, IdmParams};
use super::mobil::{mobil_lane_change, mobil_safety_ok};
use super::vehicle::{LaneChange, MetaAction, VehicleState};

/// One decision step in seconds.
pub const DECISION_DT: f64 = 1.0;
/// Physics substep in seconds.
pub const SUBSTEP_DT: f64 = 0.1;
/// Substeps per decision step.
pub const SUBSTEPS_PER_DECISION: u32 = 10;
/// Hard bound on vehicle acceleration magnitude (m/s^2).
pub const ACCEL_LIMIT: f64 = 5.0;
/// Speed cap for target speeds (m/s).
pub const SPEED_CAP: f64 = 35.0;
/// Target-speed shift applied by FASTER/SLOWER (m/s).
pub const TARGET_SPEED_STEP: f64 = 5.0;
/// Proportional speed-controller gain for controlled vehicles (1/s).
pub const SPEED_GAIN: f64 = 2.0;

/// A detected collision between two vehicles; ids are ordered `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub tick: u64,
    pub time: f64,
    pub a: u64,
    pub b: u64,
}

/// Joint action for one decision step: a meta-action per controlled vehicle
/// plus optional advisory nudges for cooperative background vehicles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    pub cav: BTreeMap<u64, MetaAction>,
    #[serde(default)]
    pub hdv_nudges: BTreeMap<u64, MetaAction>,
}

impl JointAction {
    /// All controlled vehicles idle; no advisories.
    pub fn all_idle(world: &WorldState) -> Self {
        let cav = world
            .vehicles
            .iter()
            .filter(|v| v.is_cav())
            .map(|v| (v.id, MetaAction::Idle))
            .collect();
        Self {
            cav,
            hdv_nudges: BTreeMap::new(),
        }
    }

    /// Idle map with one vehicle's action replaced.
    pub fn single(world: &WorldState, id: u64, action: MetaAction) -> Self {
        let mut joint = Self::all_idle(world);
        joint.cav.insert(id, action);
        joint
    }
}

/// Complete simulator state. Vehicles are kept sorted by id so iteration
/// order (and therefore every downstream computation) is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    /// Physics substeps elapsed since the start of the episode.
    pub tick: u64,
    pub vehicles: Vec<VehicleState>,
    pub geometry: RoadGeometry,
    /// Seed the world was spawned from (bookkeeping only; stepping is
    /// entirely deterministic).
    pub seed: u64,
    pub events: Vec<CollisionEvent>,
}

impl WorldState {
    pub fn new(geometry: RoadGeometry, seed: u64) -> Self {
        Self {
            tick: 0,
            vehicles: Vec::new(),
            geometry,
            seed,
            events: Vec::new(),
        }
    }

    /// Simulation time in seconds; exact integers at decision boundaries.
    pub fn time(&self) -> f64 {
        (self.tick / u64::from(SUBSTEPS_PER_DECISION)) as f64
            + (self.tick % u64::from(SUBSTEPS_PER_DECISION)) as f64 * SUBSTEP_DT
    }

    /// Decision steps completed.
    pub fn decision_step(&self) -> u64 {
        self.tick / u64::from(SUBSTEPS_PER_DECISION)
    }

    pub fn vehicle(&self, id: u64) -> Option<&VehicleState> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn vehicle_mut(&mut self, id: u64) -> Option<&mut VehicleState> {
        self.vehicles.iter_mut().find(|v| v.id == id)
    }

    pub fn cav_ids(&self) -> Vec<u64> {
        self.vehicles.iter().filter(|v| v.is_cav()).map(|v| v.id).collect()
    }

    /// Events recorded after the given tick (exclusive).
    pub fn events_after(&self, tick: u64) -> impl Iterator<Item = &CollisionEvent> {
        self.events.iter().filter(move |e| e.tick > tick)
    }

    /// Whether the vehicle collided during the most recent decision step.
    pub fn collided_last_step(&self, id: u64) -> bool {
        let from = self.tick.saturating_sub(u64::from(SUBSTEPS_PER_DECISION));
        self.events_after(from).any(|e| e.a == id || e.b == id)
    }

    /// Nearest vehicle ahead of `ego` in the given lane. Vehicles that are
    /// mid lane change are treated as occupying both of their lanes.
    pub fn leader_vehicle_in_lane(&self, ego: &VehicleState, lane: usize) -> Option<&VehicleState> {
        let mut best: Option<&VehicleState> = None;
        for v in &self.vehicles {
            if v.id == ego.id || v.pos <= ego.pos {
                continue;
            }
            if !vehicle_occupies_lane(v, lane) {
                continue;
            }
            if best.map_or(true, |b| v.pos < b.pos) {
                best = Some(v);
            }
        }
        best
    }

    /// Same-lane leader of `ego`: bumper gap and approach rate.
    pub fn leader_in_lane(&self, ego: &VehicleState, lane: usize) -> Option<(f64, f64)> {
        self.leader_vehicle_in_lane(ego, lane).map(|l| {
            let gap = l.pos - ego.pos - (l.length + ego.length) / 2.0;
            (gap, ego.speed - l.speed)
        })
    }

    /// Nearest same-lane follower of `id` by the same occupancy rule.
    pub fn follower_in_lane(&self, ego: &VehicleState, lane: usize) -> Option<&VehicleState> {
        let mut best: Option<&VehicleState> = None;
        for v in &self.vehicles {
            if v.id == ego.id || v.pos >= ego.pos {
                continue;
            }
            if !vehicle_occupies_lane(v, lane) {
                continue;
            }
            if best.map_or(true, |b| v.pos > b.pos) {
                best = Some(v);
            }
        }
        best
    }

    /// Bumper-to-bumper time to collision with the same-lane leader.
    /// Infinite when there is no leader or the gap is opening.
    pub fn ttc_front(&self, id: u64) -> f64 {
        let Some(ego) = self.vehicle(id) else {
            return f64::INFINITY;
        };
        let mut ttc = f64::INFINITY;
        for lane in occupied_lanes(ego) {
            if let Some((gap, dv)) = self.leader_in_lane(ego, lane) {
                if gap <= 0.0 {
                    return 0.0;
                }
                if dv > 0.0 {
                    ttc = ttc.min(gap / dv);
                }
            }
        }
        ttc
    }

    /// Front time-to-collision for safety scoring: like [`ttc_front`] but an
    /// unmerged ramp vehicle additionally sees the ramp end as a stationary
    /// obstacle. The divisor is floored at 5 m/s so that crawling or parking
    /// near the ramp end still scores as hazardous rather than settling into
    /// a comfortable waiting state.
    ///
    /// [`ttc_front`]: WorldState::ttc_front
    pub fn ttc_front_scored(&self, id: u64) -> f64 {
        let mut ttc = self.ttc_front(id);
        if let Some(ego) = self.vehicle(id) {
            if ego.on_ramp(&self.geometry) && ego.lane_change.is_none() {
                let wall_gap = self.geometry.merge_zone_end() - ego.pos - ego.length / 2.0;
                if wall_gap <= 0.0 {
                    return 0.0;
                }
                ttc = ttc.min(wall_gap / ego.speed.max(5.0));
            }
        }
        ttc
    }
}

/// Lanes a vehicle currently occupies (both endpoints while changing).
pub(crate) fn occupied_lanes(v: &VehicleState) -> Vec<usize> {
    match v.lane_change {
        Some(lc) if lc.from != lc.to => vec![lc.from, lc.to],
        _ => vec![v.lane],
    }
}

pub(crate) fn vehicle_occupies_lane(v: &VehicleState, lane: usize) -> bool {
    match v.lane_change {
        Some(lc) => lc.from == lane || lc.to == lane,
        None => v.lane == lane,
    }
}

/// Axis-aligned rectangle overlap between two vehicle footprints.
/// Rectangles are closed (touching counts as overlap) and the test is
/// symmetric in its arguments.
pub fn check_collision(a: &VehicleState, b: &VehicleState, geometry: &RoadGeometry) -> bool {
    let dx = (a.pos - b.pos).abs();
    let dy = (a.lateral_m(geometry) - b.lateral_m(geometry)).abs();
    dx <= (a.length + b.length) / 2.0 && dy <= (a.width + b.width) / 2.0
}

/// Events produced by one decision step.
pub type StepEvents = Vec<CollisionEvent>;

/// Advance the world by one decision step (10 physics substeps).
///
/// Controlled vehicles apply their meta-action at the step boundary: lane
/// actions start a kinematic lane change completed over exactly this step,
/// speed actions shift the target speed, and the longitudinal controller
/// tracks the target speed unless a leader forces the car-following law.
/// Background vehicles follow the car-following law plus the lane-change
/// model; advisory nudges shift their desired speed for this step only and
/// never override the car-following safety envelope.
pub fn step(world: &WorldState, actions: &JointAction) -> Result<(WorldState, StepEvents)> {
    for id in actions.cav.keys() {
        match world.vehicle(*id) {
            None => return Err(Error::Input(format!("action for unknown vehicle id {id}"))),
            Some(v) if !v.is_cav() => {
                return Err(Error::Input(format!("meta-action for non-CAV vehicle {id}")))
            }
            Some(_) => {}
        }
    }
    for id in actions.hdv_nudges.keys() {
        if world.vehicle(*id).is_none() {
            return Err(Error::Input(format!("advisory for unknown vehicle id {id}")));
        }
    }

    let mut w = world.clone();
    let mut new_events: StepEvents = Vec::new();

    // Decision boundary: remember last step's acceleration for jerk scoring.
    for v in &mut w.vehicles {
        v.prev_accel = v.accel;
    }

    apply_cav_actions(&mut w, actions);
    let speed_nudges = apply_hdv_decisions(&mut w, actions);

    for _ in 0..SUBSTEPS_PER_DECISION {
        substep(&mut w, &speed_nudges, &mut new_events);
    }

    Ok((w, new_events))
}

fn apply_cav_actions(w: &mut WorldState, actions: &JointAction) {
    let geometry = w.geometry.clone();
    for v in &mut w.vehicles {
        if !v.is_cav() || v.is_terminal() {
            continue;
        }
        let action = actions.cav.get(&v.id).copied().unwrap_or(MetaAction::Idle);
        match action {
            MetaAction::Idle => {}
            MetaAction::Faster => {
                v.target_speed = (v.target_speed + TARGET_SPEED_STEP).clamp(0.0, SPEED_CAP);
            }
            MetaAction::Slower => {
                v.target_speed = (v.target_speed - TARGET_SPEED_STEP).clamp(0.0, SPEED_CAP);
            }
            MetaAction::LaneLeft | MetaAction::LaneRight => {
                if let Some(to) = lane_change_target(v, action, &geometry) {
                    v.lane_change = Some(LaneChange {
                        from: v.lane,
                        to,
                        substeps_done: 0,
                    });
                }
            }
        }
    }
}

/// Structural validity of a lane action; `None` means the action degrades to
/// idle. Ramp vehicles may only merge left inside the merge zone and only
/// when the lane flip will complete before the ramp runs out.
pub fn lane_change_target(
    v: &VehicleState,
    action: MetaAction,
    geometry: &RoadGeometry,
) -> Option<usize> {
    if v.lane_change.is_some() {
        return None;
    }
    match action {
        MetaAction::LaneLeft => {
            if v.lane == 0 {
                return None;
            }
            if v.lane == geometry.ramp_lane() && !v.merged {
                let window_ok = v.pos >= geometry.merge_zone_start()
                    && v.pos + 0.5 * v.speed + 1.0 <= geometry.merge_zone_end();
                if !window_ok {
                    return None;
                }
                return Some(geometry.rightmost_main_lane());
            }
            Some(v.lane - 1)
        }
        MetaAction::LaneRight => {
            if v.lane + 1 >= geometry.ramp_lane() {
                // Never change onto (or beyond) the ramp.
                return None;
            }
            Some(v.lane + 1)
        }
        _ => None,
    }
}

fn apply_hdv_decisions(w: &mut WorldState, actions: &JointAction) -> BTreeMap<u64, f64> {
    let mut nudges = BTreeMap::new();
    let snapshot = w.clone();
    for v in &mut w.vehicles {
        if v.is_cav() || v.is_terminal() || v.lane_change.is_some() {
            continue;
        }
        match actions.hdv_nudges.get(&v.id) {
            Some(MetaAction::Slower) => {
                nudges.insert(v.id, -TARGET_SPEED_STEP);
            }
            Some(MetaAction::Faster) => {
                nudges.insert(v.id, TARGET_SPEED_STEP);
            }
            Some(a @ (MetaAction::LaneLeft | MetaAction::LaneRight)) => {
                if let Some(to) = lane_change_target(v, *a, &snapshot.geometry) {
                    if mobil_safety_ok(&snapshot, v, to) {
                        v.lane_change = Some(LaneChange {
                            from: v.lane,
                            to,
                            substeps_done: 0,
                        });
                    }
                }
            }
            _ => {}
        }
        if v.lane_change.is_none() && !actions.hdv_nudges.contains_key(&v.id) {
            if let Some(to) = mobil_lane_change(&snapshot, v.id) {
                v.lane_change = Some(LaneChange {
                    from: v.lane,
                    to,
                    substeps_done: 0,
                });
            }
        }
    }
    nudges
}

fn substep(w: &mut WorldState, nudges: &BTreeMap<u64, f64>, new_events: &mut StepEvents) {
    // Synchronous acceleration pass from a single snapshot so the update is
    // independent of vehicle order.
    let accels: Vec<f64> = w
        .vehicles
        .iter()
        .map(|v| {
            if v.is_terminal() {
                0.0
            } else {
                compute_accel(w, v, nudges.get(&v.id).copied().unwrap_or(0.0))
            }
        })
        .collect();

    for (v, &a) in w.vehicles.iter_mut().zip(&accels) {
        if v.is_terminal() {
            v.accel = 0.0;
            v.speed = 0.0;
            continue;
        }
        v.accel = a;
        v.speed = (v.speed + a * SUBSTEP_DT).max(0.0);
        v.pos += v.speed * SUBSTEP_DT;
    }

    w.tick += 1;
    let now = w.time();

    // Lane-change lateral progression: linear over the decision step, lane
    // index flipping at the halfway point.
    for v in &mut w.vehicles {
        let Some(mut lc) = v.lane_change else { continue };
        if v.is_terminal() {
            continue;
        }
        lc.substeps_done += 1;
        let p = f64::from(lc.substeps_done) / f64::from(SUBSTEPS_PER_DECISION);
        let sign = if lc.to > lc.from { 1.0 } else { -1.0 };
        if p >= 1.0 {
            v.lane = lc.to;
            v.lat = 0.0;
            v.lane_change = None;
            if lc.from == w.geometry.ramp_lane() && !v.merged {
                v.merged = true;
                v.merge_done_time = Some(now);
            }
        } else if p >= 0.5 {
            v.lane = lc.to;
            v.lat = -sign * (1.0 - p);
            v.lane_change = Some(lc);
        } else {
            v.lane = lc.from;
            v.lat = sign * p;
            v.lane_change = Some(lc);
        }
    }

    // Ramp bookkeeping: merge-zone entry time and end-of-ramp failure.
    let geometry = w.geometry.clone();
    for v in &mut w.vehicles {
        if v.lane != geometry.ramp_lane() || v.merged || v.is_terminal() {
            continue;
        }
        if v.merge_enter_time.is_none() && v.pos >= geometry.merge_zone_start() {
            v.merge_enter_time = Some(now);
        }
        if v.lane_change.is_none() && v.pos >= geometry.merge_zone_end() {
            v.pos = geometry.merge_zone_end();
            v.speed = 0.0;
            v.accel = 0.0;
            v.ramp_failed = true;
        }
    }

    // Collision scan against the pre-scan frozen flags, then freeze.
    let scan_start = new_events.len();
    let mut to_freeze: Vec<usize> = Vec::new();
    for i in 0..w.vehicles.len() {
        for j in (i + 1)..w.vehicles.len() {
            let (a, b) = (&w.vehicles[i], &w.vehicles[j]);
            if a.frozen && b.frozen {
                continue;
            }
            if check_collision(a, b, &w.geometry) {
                new_events.push(CollisionEvent {
                    tick: w.tick,
                    time: now,
                    a: a.id.min(b.id),
                    b: a.id.max(b.id),
                });
                to_freeze.push(i);
                to_freeze.push(j);
            }
        }
    }
    for i in to_freeze {
        let v = &mut w.vehicles[i];
        v.frozen = true;
        v.speed = 0.0;
        v.accel = 0.0;
        v.lane_change = None;
    }
    w.events.extend_from_slice(&new_events[scan_start..]);
}

/// Longitudinal acceleration demanded for one vehicle at the current substep.
fn compute_accel(w: &WorldState, v: &VehicleState, nudge: f64) -> f64 {
    let v0 = (v.target_speed + nudge).clamp(0.0, SPEED_CAP);
    let mut accel = if v.is_cav() {
        (SPEED_GAIN * (v0 - v.speed)).clamp(-ACCEL_LIMIT, ACCEL_LIMIT)
    } else {
        ACCEL_LIMIT
    };
    let params = if v.is_cav() {
        IdmParams::default()
    } else {
        IdmParams::for_style(&v.style)
    };
    let mut saw_leader = false;
    for lane in occupied_lanes(v) {
        if let Some((gap, dv)) = w.leader_in_lane(v, lane) {
            saw_leader = true;
            accel = accel.min(idm_accel(v.speed, v0, gap, dv, &params));
        }
    }
    if !v.is_cav() && !saw_leader {
        accel = idm_accel(v.speed, v0, f64::INFINITY, 0.0, &params);
    }
    // Unmerged ramp vehicles treat the ramp end as a stationary obstacle so
    // they wait for a gap instead of running off the ramp at speed.
    if v.lane == w.geometry.ramp_lane() && !v.merged && v.lane_change.is_none() {
        let gap = w.geometry.merge_zone_end() - v.pos - v.length / 2.0;
        accel = accel.min(idm_accel(v.speed, v0, gap, v.speed, &params));
    }
    accel.clamp(-ACCEL_LIMIT, ACCEL_LIMIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::geometry::RoadGeometry;
    use crate::sim::vehicle::{VehicleKind, VehicleState};

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
    fn empty_world_only_time_advances() {
        let w = world_with(vec![]);
        let (next, events) = step(&w, &JointAction::default()).unwrap();
        assert_eq!(next.time(), 1.0);
        assert!(events.is_empty());
        assert!(next.vehicles.is_empty());
    }

    #[test]
    fn constant_speed_advances_position() {
        let w = world_with(vec![cav(1, 0, 100.0, 20.0)]);
        let (next, _) = step(&w, &JointAction::single(&w, 1, MetaAction::Idle)).unwrap();
        let v = next.vehicle(1).unwrap();
        assert!((v.pos - 120.0).abs() < 1e-9, "pos {}", v.pos);
        assert_eq!(v.speed, 20.0);
    }

    #[test]
    fn faster_matches_substep_integration_oracle() {
        // Independent oracle: v' = v + dt * clamp(K_p * (target - v), ±5),
        // applied over ten substeps with target 25.
        let mut v_oracle = 20.0_f64;
        let mut pos_oracle = 100.0_f64;
        for _ in 0..10 {
            let a = (SPEED_GAIN * (25.0 - v_oracle)).clamp(-ACCEL_LIMIT, ACCEL_LIMIT);
            v_oracle = (v_oracle + a * SUBSTEP_DT).max(0.0);
            pos_oracle += v_oracle * SUBSTEP_DT;
        }

        let w = world_with(vec![cav(1, 0, 100.0, 20.0)]);
        let (next, _) = step(&w, &JointAction::single(&w, 1, MetaAction::Faster)).unwrap();
        let v = next.vehicle(1).unwrap();
        assert_eq!(v.target_speed, 25.0);
        assert_eq!(v.speed, v_oracle);
        assert_eq!(v.pos, pos_oracle);
    }

    #[test]
    fn target_speed_clamped_at_cap() {
        let mut v = cav(1, 0, 100.0, 33.0);
        v.target_speed = 33.0;
        let w = world_with(vec![v]);
        let (next, _) = step(&w, &JointAction::single(&w, 1, MetaAction::Faster)).unwrap();
        assert_eq!(next.vehicle(1).unwrap().target_speed, SPEED_CAP);
    }

    #[test]
    fn unknown_action_id_is_input_error() {
        let w = world_with(vec![cav(1, 0, 100.0, 20.0)]);
        let mut joint = JointAction::default();
        joint.cav.insert(99, MetaAction::Idle);
        assert!(matches!(step(&w, &joint), Err(crate::Error::Input(_))));
    }

    #[test]
    fn action_for_hdv_is_input_error() {
        let w = world_with(vec![hdv(1, 0, 100.0, 20.0)]);
        let mut joint = JointAction::default();
        joint.cav.insert(1, MetaAction::Idle);
        assert!(matches!(step(&w, &joint), Err(crate::Error::Input(_))));
    }

    #[test]
    fn step_is_deterministic() {
        let mut vehicles = vec![cav(1, 0, 100.0, 20.0)];
        for i in 0..6 {
            vehicles.push(hdv(2 + i, (i % 2) as usize, 50.0 + 40.0 * i as f64, 22.0));
        }
        let w = world_with(vehicles);
        let joint = JointAction::single(&w, 1, MetaAction::Faster);
        let (a, ea) = step(&w, &joint).unwrap();
        let (b, eb) = step(&w, &joint).unwrap();
        assert_eq!(a, b);
        assert_eq!(ea, eb);
    }

    #[test]
    fn collision_same_lane_same_pos() {
        let g = RoadGeometry::default();
        let a = hdv(1, 0, 100.0, 0.0);
        let b = hdv(2, 0, 100.0, 0.0);
        assert!(check_collision(&a, &b, &g));
        assert!(check_collision(&b, &a, &g));
    }

    #[test]
    fn collision_clear_longitudinal_gap() {
        let g = RoadGeometry::default();
        let a = hdv(1, 0, 100.0, 0.0);
        let b = hdv(2, 0, 110.0, 0.0);
        assert!(!check_collision(&a, &b, &g));
    }

    /// Dense point-sampling oracle over the two closed rectangles.
    fn sampled_overlap(a: &VehicleState, b: &VehicleState, g: &RoadGeometry) -> bool {
        let grid = 30;
        let (ya, yb) = (a.lateral_m(g), b.lateral_m(g));
        for i in 0..=grid {
            for j in 0..=grid {
                let px = a.pos - a.length / 2.0 + a.length * i as f64 / grid as f64;
                let py = ya - a.width / 2.0 + a.width * j as f64 / grid as f64;
                if (px - b.pos).abs() <= b.length / 2.0 && (py - yb).abs() <= b.width / 2.0 {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn mid_change_collision_matches_sampling_oracle() {
        let g = RoadGeometry::default();
        // lat = 0.4: 1.6 m toward the adjacent lane, centres 2.4 m apart.
        let mut a = hdv(1, 1, 100.0, 0.0);
        a.lat = 0.4;
        let b = hdv(2, 2, 100.0, 0.0);
        assert_eq!(check_collision(&a, &b, &g), sampled_overlap(&a, &b, &g));
        assert!(!check_collision(&a, &b, &g));

        // lat = 0.5: exactly abreast and touching.
        a.lat = 0.5;
        assert_eq!(check_collision(&a, &b, &g), sampled_overlap(&a, &b, &g));
        assert!(check_collision(&a, &b, &g));

        // Longitudinally offset beyond the half-length sum.
        a.lat = 0.5;
        let mut c = b.clone();
        c.pos = 105.5;
        assert_eq!(check_collision(&a, &c, &g), sampled_overlap(&a, &c, &g));
        assert!(!check_collision(&a, &c, &g));
    }

    #[test]
    fn colliding_vehicles_freeze_and_record_event() {
        // A fast vehicle directly behind a stopped one in the same lane;
        // the gap is too small to brake away in time.
        let mut chaser = hdv(1, 0, 95.0, 30.0);
        chaser.target_speed = 30.0;
        let stopped = hdv(2, 0, 103.0, 0.0);
        let w = world_with(vec![chaser, stopped]);
        let (next, events) = step(&w, &JointAction::default()).unwrap();
        assert!(!events.is_empty());
        let e = events[0];
        assert_eq!((e.a, e.b), (1, 2));
        let v1 = next.vehicle(1).unwrap();
        let v2 = next.vehicle(2).unwrap();
        assert!(v1.frozen && v2.frozen);
        assert_eq!(v1.speed, 0.0);
        assert_eq!(next.events.len(), events.len());

        // Frozen vehicles stay put on subsequent steps and the standing
        // overlap is not re-reported.
        let (after, more) = step(&next, &JointAction::default()).unwrap();
        assert!(more.is_empty());
        assert_eq!(after.vehicle(1).unwrap().pos, v1.pos);
    }

    #[test]
    fn lane_change_completes_in_one_decision_step() {
        let w = world_with(vec![cav(1, 1, 100.0, 20.0)]);
        let (next, _) = step(&w, &JointAction::single(&w, 1, MetaAction::LaneLeft)).unwrap();
        let v = next.vehicle(1).unwrap();
        assert_eq!(v.lane, 0);
        assert_eq!(v.lat, 0.0);
        assert!(v.lane_change.is_none());
        assert!(!v.merged);
    }

    #[test]
    fn lane_left_in_leftmost_degrades_to_idle() {
        let w = world_with(vec![cav(1, 0, 100.0, 20.0)]);
        let (next, _) = step(&w, &JointAction::single(&w, 1, MetaAction::LaneLeft)).unwrap();
        let v = next.vehicle(1).unwrap();
        assert_eq!(v.lane, 0);
        assert!(v.lane_change.is_none());
    }

    #[test]
    fn ramp_merge_sets_merged_flag_and_time() {
        let g = RoadGeometry::default();
        let mut v = cav(1, g.ramp_lane(), 250.0, 15.0);
        v.target_speed = 15.0;
        let w = world_with(vec![v]);
        let (next, _) = step(&w, &JointAction::single(&w, 1, MetaAction::LaneLeft)).unwrap();
        let v = next.vehicle(1).unwrap();
        assert!(v.merged);
        assert_eq!(v.lane, g.rightmost_main_lane());
        assert_eq!(v.merge_done_time, Some(1.0));
        assert!(v.merge_enter_time.is_some());
    }

    #[test]
    fn ramp_lane_left_outside_merge_zone_degrades_to_idle() {
        let g = RoadGeometry::default();
        let v = cav(1, g.ramp_lane(), 180.0, 15.0);
        let w = world_with(vec![v]);
        let (next, _) = step(&w, &JointAction::single(&w, 1, MetaAction::LaneLeft)).unwrap();
        assert!(!next.vehicle(1).unwrap().merged);
        assert_eq!(next.vehicle(1).unwrap().lane, g.ramp_lane());
    }

    #[test]
    fn ramp_end_marks_failure_and_holds() {
        let g = RoadGeometry::default();
        let mut v = cav(1, g.ramp_lane(), g.merge_zone_end() - 1.0, 20.0);
        v.target_speed = 20.0;
        let w = world_with(vec![v]);
        let (next, _) = step(&w, &JointAction::single(&w, 1, MetaAction::Idle)).unwrap();
        let v = next.vehicle(1).unwrap();
        assert!(v.ramp_failed);
        assert_eq!(v.pos, g.merge_zone_end());
        assert_eq!(v.speed, 0.0);
        assert!(!v.merged);
    }

    #[test]
    fn ramp_vehicle_waits_at_ramp_end_instead_of_running_off() {
        // From far back the ramp-end obstacle brings the vehicle to a stop
        // short of the end rather than triggering failure.
        let g = RoadGeometry::default();
        let mut v = cav(1, g.ramp_lane(), 230.0, 15.0);
        v.target_speed = 25.0;
        let mut w = world_with(vec![v]);
        for _ in 0..30 {
            let joint = JointAction::all_idle(&w);
            let (next, _) = step(&w, &joint).unwrap();
            w = next;
        }
        let v = w.vehicle(1).unwrap();
        assert!(!v.ramp_failed, "vehicle should stop before the ramp end");
        assert!(v.pos < g.merge_zone_end());
        assert!(v.speed < 1.0);
    }

    #[test]
    fn speeds_nonnegative_and_accels_bounded() {
        let mut vehicles = vec![];
        for i in 0..8 {
            let mut v = hdv(i, (i % 2) as usize, 20.0 + 55.0 * i as f64, 24.0);
            v.target_speed = 10.0 + i as f64;
            vehicles.push(v);
        }
        let mut w = world_with(vehicles);
        for _ in 0..20 {
            let (next, _) = step(&w, &JointAction::default()).unwrap();
            for v in &next.vehicles {
                assert!(v.speed >= 0.0);
                assert!(v.accel.abs() <= ACCEL_LIMIT + 1e-12);
                assert!((-0.5..=0.5).contains(&v.lat));
            }
            w = next;
        }
    }

    #[test]
    fn hdv_slower_nudge_reduces_speed() {
        let v = hdv(1, 0, 100.0, 24.0);
        let w = world_with(vec![v]);
        let mut joint = JointAction::default();
        joint.hdv_nudges.insert(1, MetaAction::Slower);
        let (nudged, _) = step(&w, &joint).unwrap();
        let (plain, _) = step(&w, &JointAction::default()).unwrap();
        assert!(nudged.vehicle(1).unwrap().speed < plain.vehicle(1).unwrap().speed);
        // The nudge is transient: target_speed itself is unchanged.
        assert_eq!(nudged.vehicle(1).unwrap().target_speed, 24.0);
    }
}
