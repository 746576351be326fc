//! Lane-change model for background traffic: a change is proposed when it is
//! safe for the new follower and the acceleration gain (own plus
//! politeness-weighted neighbour gains) clears a fixed threshold.

use super::idm::{idm_accel, IdmParams};
use super::vehicle::VehicleState;
use super::world::{WorldState, ACCEL_LIMIT};

/// Minimum net acceleration advantage (m/s^2) before a change is worthwhile.
const INCENTIVE_THRESHOLD: f64 = 0.1;

/// Acceleration a vehicle would choose following the given leader gap.
fn accel_with(v: &VehicleState, leader: Option<(f64, f64)>) -> f64 {
    let params = IdmParams::for_style(&v.style);
    match leader {
        Some((gap, dv)) => idm_accel(v.speed, v.target_speed, gap, dv, &params),
        None => idm_accel(v.speed, v.target_speed, f64::INFINITY, 0.0, &params),
    }
}

fn gap_between(rear: &VehicleState, front: &VehicleState) -> (f64, f64) {
    let gap = front.pos - rear.pos - (front.length + rear.length) / 2.0;
    (gap, rear.speed - front.speed)
}

/// Safety criterion alone: the target slot must be physically free and the
/// would-be follower must not be forced to brake harder than the emergency
/// limit.
pub fn mobil_safety_ok(world: &WorldState, ego: &VehicleState, target_lane: usize) -> bool {
    // Reject when any target-lane vehicle overlaps the ego longitudinally
    // (covers exactly-abreast vehicles that are neither leader nor
    // follower).
    for v in &world.vehicles {
        if v.id == ego.id || !crate::sim::world::vehicle_occupies_lane(v, target_lane) {
            continue;
        }
        if (v.pos - ego.pos).abs() <= (v.length + ego.length) / 2.0 + 0.5 {
            return false;
        }
    }
    // The ego itself must not need emergency braking behind its new leader.
    if let Some((gap, dv)) = world.leader_in_lane(ego, target_lane) {
        if gap <= 0.0 {
            return false;
        }
        let own = idm_accel(
            ego.speed,
            ego.target_speed,
            gap,
            dv,
            &IdmParams::for_style(&ego.style),
        );
        if own < -ACCEL_LIMIT + 1e-12 {
            return false;
        }
    }
    if let Some(follower) = world.follower_in_lane(ego, target_lane) {
        let (gap, dv) = gap_between(follower, ego);
        if gap <= 0.0 {
            return false;
        }
        let forced = idm_accel(
            follower.speed,
            follower.target_speed,
            gap,
            dv,
            &IdmParams::for_style(&follower.style),
        );
        if forced < -ACCEL_LIMIT + 1e-12 {
            return false;
        }
    }
    true
}

/// Incentive for moving `ego` into `target_lane`: own gain plus
/// politeness-weighted gains of the affected followers.
fn incentive(world: &WorldState, ego: &VehicleState, target_lane: usize) -> f64 {
    let own_now = accel_with(ego, world.leader_in_lane(ego, ego.lane));
    let own_after = accel_with(ego, world.leader_in_lane(ego, target_lane));
    let mut others = 0.0;

    if let Some(follower) = world.follower_in_lane(ego, target_lane) {
        let before = accel_with(follower, world.leader_in_lane(follower, target_lane));
        let after = accel_with(follower, Some(gap_between(follower, ego)));
        others += after - before;
    }
    if let Some(follower) = world.follower_in_lane(ego, ego.lane) {
        let before = accel_with(follower, Some(gap_between(follower, ego)));
        // The old follower inherits the ego's current leader once the ego
        // has left the lane.
        let after = match world.leader_vehicle_in_lane(ego, ego.lane) {
            Some(leader) => accel_with(follower, Some(gap_between(follower, leader))),
            None => accel_with(follower, None),
        };
        others += after - before;
    }

    (own_after - own_now) + ego.style.politeness * others
}

/// Propose a lane change for a background vehicle, or `None` to stay.
/// Both adjacent main lanes are evaluated; the higher incentive wins and
/// exact ties prefer the left lane.
pub fn mobil_lane_change(world: &WorldState, id: u64) -> Option<usize> {
    let ego = world.vehicle(id)?;
    if ego.lane_change.is_some() || ego.is_terminal() {
        return None;
    }
    let mut candidates: Vec<usize> = Vec::new();
    if ego.lane > 0 {
        candidates.push(ego.lane - 1);
    }
    if ego.lane + 1 < world.geometry.ramp_lane() {
        candidates.push(ego.lane + 1);
    }

    let mut best: Option<(usize, f64)> = None;
    for target in candidates {
        if !mobil_safety_ok(world, ego, target) {
            continue;
        }
        let gain = incentive(world, ego, target);
        if gain > INCENTIVE_THRESHOLD && best.map_or(true, |(_, g)| gain > g) {
            best = Some((target, gain));
        }
    }
    best.map(|(lane, _)| lane)
}
