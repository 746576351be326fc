//! Local observation extraction: the ego plus its nearest neighbours.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::vehicle::VehicleState;
use super::world::WorldState;

/// Default observation radius in metres.
pub const DEFAULT_OBS_RADIUS: f64 = 50.0;
/// Maximum neighbours returned per observation.
pub const MAX_NEIGHBORS: usize = 8;

/// Ego-centric snapshot of nearby traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ego: VehicleState,
    /// Up to [`MAX_NEIGHBORS`] vehicles within the radius, sorted by planar
    /// distance ascending with ties broken by ascending id.
    pub neighbors: Vec<VehicleState>,
    /// Distance to the end of the ramp for unmerged ramp vehicles.
    pub dist_to_ramp_end: Option<f64>,
    pub time: f64,
}

/// Observe the world from one vehicle's viewpoint.
pub fn observe(world: &WorldState, id: u64, r_obs: f64) -> Result<Observation> {
    if !(r_obs > 0.0) {
        return Err(Error::Input(format!("observation radius must be > 0, got {r_obs}")));
    }
    let ego = world
        .vehicle(id)
        .ok_or_else(|| Error::Input(format!("unknown vehicle id {id}")))?
        .clone();

    let mut scored: Vec<(f64, &VehicleState)> = world
        .vehicles
        .iter()
        .filter(|v| v.id != id)
        .map(|v| (ego.distance_to(v, &world.geometry), v))
        .filter(|(d, _)| *d <= r_obs)
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.id.cmp(&b.1.id)));
    scored.truncate(MAX_NEIGHBORS);

    let dist_to_ramp_end = if ego.on_ramp(&world.geometry) {
        Some(world.geometry.merge_zone_end() - ego.pos)
    } else {
        None
    };

    Ok(Observation {
        neighbors: scored.into_iter().map(|(_, v)| v.clone()).collect(),
        dist_to_ramp_end,
        time: world.time(),
        ego,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::geometry::RoadGeometry;
    use crate::sim::vehicle::VehicleKind;

    fn world_with(vehicles: Vec<VehicleState>) -> WorldState {
        let mut w = WorldState::new(RoadGeometry::default(), 0);
        w.vehicles = vehicles;
        w
    }

    fn at(id: u64, lane: usize, pos: f64) -> VehicleState {
        VehicleState::new(id, VehicleKind::Hdv, lane, pos, 20.0)
    }

    #[test]
    fn lone_vehicle_sees_nothing() {
        let w = world_with(vec![at(1, 0, 100.0)]);
        let obs = observe(&w, 1, DEFAULT_OBS_RADIUS).unwrap();
        assert!(obs.neighbors.is_empty());
        assert_eq!(obs.ego.id, 1);
    }

    #[test]
    fn radius_boundary_excludes_beyond() {
        let w = world_with(vec![at(1, 0, 100.0), at(2, 0, 150.1), at(3, 0, 150.0)]);
        let obs = observe(&w, 1, 50.0).unwrap();
        let ids: Vec<u64> = obs.neighbors.iter().map(|v| v.id).collect();
        assert_eq!(ids, vec![3]);
    }

    #[test]
    fn neighbors_sorted_by_distance() {
        let w = world_with(vec![
            at(1, 0, 100.0),
            at(2, 0, 130.0),
            at(3, 0, 110.0),
            at(4, 0, 120.0),
        ]);
        let obs = observe(&w, 1, 50.0).unwrap();
        let ids: Vec<u64> = obs.neighbors.iter().map(|v| v.id).collect();
        assert_eq!(ids, vec![3, 4, 2]);
    }

    #[test]
    fn distance_ties_break_by_id() {
        let w = world_with(vec![at(5, 0, 100.0), at(9, 0, 110.0), at(2, 0, 90.0)]);
        let obs = observe(&w, 5, 50.0).unwrap();
        let ids: Vec<u64> = obs.neighbors.iter().map(|v| v.id).collect();
        assert_eq!(ids, vec![2, 9]);
    }

    #[test]
    fn neighbor_count_capped() {
        let mut vehicles = vec![at(0, 0, 100.0)];
        for i in 1..=12 {
            vehicles.push(at(i, 0, 100.0 + i as f64));
        }
        let mut w = world_with(vehicles);
        w.vehicles.sort_by_key(|v| v.id);
        let obs = observe(&w, 0, DEFAULT_OBS_RADIUS).unwrap();
        assert_eq!(obs.neighbors.len(), MAX_NEIGHBORS);
    }

    #[test]
    fn unknown_id_is_input_error() {
        let w = world_with(vec![at(1, 0, 100.0)]);
        assert!(matches!(observe(&w, 7, 50.0), Err(Error::Input(_))));
    }

    #[test]
    fn ramp_vehicle_reports_distance_to_ramp_end() {
        let g = RoadGeometry::default();
        let v = VehicleState::new(1, VehicleKind::Cav, g.ramp_lane(), 250.0, 15.0);
        let w = world_with(vec![v]);
        let obs = observe(&w, 1, 50.0).unwrap();
        assert_eq!(obs.dist_to_ramp_end, Some(70.0));
    }
}
