//! Deterministic scenario generators shared by the property and acceptance
//! test suites.

use rand::Rng;

use crate::rng;
use crate::sim::{
    check_collision, DrivingStyle, RoadGeometry, VehicleKind, VehicleState, WorldState,
};

/// A random but physically valid world: vehicles on all lanes (including
/// unmerged ramp vehicles), random speeds and styles, no initial overlaps.
pub fn random_world(seed: u64) -> WorldState {
    let geometry = RoadGeometry::default();
    let mut r = rng::seeded(rng::derive(seed, 0x7477));
    let mut world = WorldState::new(geometry.clone(), seed);

    let n_main = r.gen_range(2..14);
    let n_ramp = r.gen_range(1..4);
    let mut id: u64 = 1;

    for _ in 0..n_main {
        for _attempt in 0..40 {
            let lane = r.gen_range(0..geometry.main_lane_count);
            let pos = r.gen_range(10.0..geometry.road_len() - 10.0);
            let kind = if r.gen_bool(0.25) { VehicleKind::Cav } else { VehicleKind::Hdv };
            let mut v = VehicleState::new(id, kind, lane, pos, r.gen_range(5.0..32.0));
            if kind == VehicleKind::Cav {
                v.merged = true;
            }
            v.target_speed = r.gen_range(8.0..32.0);
            v.style = match r.gen_range(0..3) {
                0 => DrivingStyle::aggressive(),
                1 => DrivingStyle::normal(),
                _ => DrivingStyle::conservative(),
            };
            let placeable = world.vehicles.iter().all(|o| {
                !check_collision(o, &v, &geometry)
                    && (o.lane != v.lane || (o.pos - v.pos).abs() > 12.0)
            });
            if placeable {
                world.vehicles.push(v);
                id += 1;
                break;
            }
        }
    }

    for _ in 0..n_ramp {
        for _attempt in 0..40 {
            let pos = r.gen_range(geometry.ramp_start() + 5.0..geometry.merge_zone_end() - 8.0);
            let mut v =
                VehicleState::new(id, VehicleKind::Cav, geometry.ramp_lane(), pos, r.gen_range(3.0..22.0));
            v.target_speed = r.gen_range(10.0..28.0);
            let placeable = world
                .vehicles
                .iter()
                .filter(|o| o.lane == geometry.ramp_lane())
                .all(|o| (o.pos - v.pos).abs() > 12.0);
            if placeable {
                world.vehicles.push(v);
                id += 1;
                break;
            }
        }
    }

    world.vehicles.sort_by_key(|v| v.id);
    world
}
