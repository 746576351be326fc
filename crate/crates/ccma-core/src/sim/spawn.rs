//! Scenario construction: seeded placement of background traffic on the main
//! lanes and controlled vehicles on the ramp.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::geometry::RoadGeometry;
use super::idm::IdmParams;
use super::vehicle::{DrivingStyle, VehicleKind, VehicleState};
use super::world::WorldState;

/// Traffic density preset; sets the background-vehicle count per main lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Easy,
    Medium,
    Hard,
}

impl Density {
    /// Background vehicles per main lane.
    pub fn hdvs_per_lane(self) -> usize {
        match self {
            Density::Easy => 4,
            Density::Medium => 7,
            Density::Hard => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Density::Easy => "easy",
            Density::Medium => "medium",
            Density::Hard => "hard",
        }
    }

    pub const ALL: [Density; 3] = [Density::Easy, Density::Medium, Density::Hard];
}

/// Mixing proportions over driving styles; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleMix {
    pub aggressive: f64,
    pub normal: f64,
    pub conservative: f64,
}

impl Default for StyleMix {
    fn default() -> Self {
        Self {
            aggressive: 0.2,
            normal: 0.6,
            conservative: 0.2,
        }
    }
}

impl StyleMix {
    pub fn all_normal() -> Self {
        Self {
            aggressive: 0.0,
            normal: 1.0,
            conservative: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.aggressive, self.normal, self.conservative];
        if parts.iter().any(|p| *p < 0.0) {
            return Err(Error::Config("style mix entries must be >= 0".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("style mix must sum to 1, got {sum}")));
        }
        Ok(())
    }

    pub fn as_vector(&self) -> [f64; 3] {
        [self.aggressive, self.normal, self.conservative]
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DrivingStyle {
        let x: f64 = rng.gen();
        if x < self.aggressive {
            DrivingStyle::aggressive()
        } else if x < self.aggressive + self.normal {
            DrivingStyle::normal()
        } else {
            DrivingStyle::conservative()
        }
    }
}

/// Everything needed to spawn one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub geometry: RoadGeometry,
    pub density: Density,
    #[serde(default)]
    pub style_mix: StyleMix,
    pub n_cavs: usize,
}

impl ScenarioConfig {
    pub fn new(density: Density, n_cavs: usize) -> Self {
        Self {
            geometry: RoadGeometry::default(),
            density,
            style_mix: StyleMix::default(),
            n_cavs,
        }
    }
}

/// Minimum bumper gap between spawned main-lane vehicles.
fn main_min_gap(length: f64) -> f64 {
    2.0 * (IdmParams::default().min_gap + length)
}

/// Minimum gap between controlled vehicles spawned on the ramp.
const RAMP_MIN_GAP: f64 = 20.0;

/// Build the initial world for a scenario. Identical inputs and seed produce
/// a bit-identical world.
pub fn spawn_scenario(
    geometry: &RoadGeometry,
    density: Density,
    style_mix: &StyleMix,
    n_cavs: usize,
    seed: u64,
) -> Result<WorldState> {
    geometry.validate()?;
    style_mix.validate()?;
    if n_cavs < 1 {
        return Err(Error::Config("n_cavs must be >= 1".into()));
    }

    let mut rng = rng::seeded(rng::derive(seed, 0x5747));
    let mut world = WorldState::new(geometry.clone(), seed);
    let length = 5.0;
    let per_lane = density.hdvs_per_lane();
    let mut next_id: u64 = 1;

    // Background traffic: per main lane, place vehicles front-to-back with
    // the minimum safe gap plus a random share of the leftover slack.
    let min_gap = main_min_gap(length);
    let span = geometry.road_len();
    for lane in 0..geometry.main_lane_count {
        let needed = per_lane as f64 * length + (per_lane.saturating_sub(1)) as f64 * min_gap;
        if needed > span {
            return Err(Error::Config(format!(
                "geometry too short for {per_lane} vehicles per lane: need {needed:.0} m, have {span:.0} m"
            )));
        }
        let slack = span - needed;
        // n+1 weights split the slack into a lead margin, inter-vehicle
        // extras and a tail margin.
        let weights: Vec<f64> = (0..=per_lane).map(|_| rng.gen::<f64>() + 0.05).collect();
        let wsum: f64 = weights.iter().sum();
        let mut pos = span - length / 2.0 - weights[0] / wsum * slack;
        for k in 0..per_lane {
            let speed = rng.gen_range(18.0..25.0);
            let mut v = VehicleState::new(next_id, VehicleKind::Hdv, lane, pos, speed);
            v.style = style_mix.sample(&mut rng);
            v.target_speed = speed + rng.gen_range(0.0..4.0);
            world.vehicles.push(v);
            next_id += 1;
            pos -= length + min_gap + weights[k + 1] / wsum * slack;
        }
    }

    // Controlled vehicles on the ramp, the leading one spawned closest to
    // the merge zone. The spawn window may reach a short way into the merge
    // zone but always leaves room to merge before the ramp ends.
    let ramp_lane = geometry.ramp_lane();
    let ramp_top = geometry.merge_zone_start() + 0.3 * geometry.merge_zone_len;
    let ramp_bottom = geometry.ramp_start() + length / 2.0;
    let needed = n_cavs as f64 * length + (n_cavs.saturating_sub(1)) as f64 * RAMP_MIN_GAP;
    let slack = ramp_top - ramp_bottom - needed;
    if slack < 0.0 {
        return Err(Error::Config(format!(
            "ramp too short for {n_cavs} controlled vehicles at {RAMP_MIN_GAP} m gaps"
        )));
    }
    let weights: Vec<f64> = (0..=n_cavs).map(|_| rng.gen::<f64>() + 0.05).collect();
    let wsum: f64 = weights.iter().sum();
    let mut pos = ramp_top - weights[0] / wsum * slack;
    for k in 0..n_cavs {
        let speed = rng.gen_range(14.0..18.0);
        let mut v = VehicleState::new(next_id, VehicleKind::Cav, ramp_lane, pos, speed);
        v.target_speed = 25.0;
        world.vehicles.push(v);
        next_id += 1;
        pos -= length + RAMP_MIN_GAP + weights[k + 1] / wsum * slack;
    }

    world.vehicles.sort_by_key(|v| v.id);
    Ok(world)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::check_collision;

    #[test]
    fn deterministic_given_seed() {
        let g = RoadGeometry::default();
        let a = spawn_scenario(&g, Density::Easy, &StyleMix::all_normal(), 1, 7).unwrap();
        let b = spawn_scenario(&g, Density::Easy, &StyleMix::all_normal(), 1, 7).unwrap();
        assert_eq!(a, b);
        let c = spawn_scenario(&g, Density::Easy, &StyleMix::all_normal(), 1, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn hard_density_counts() {
        let g = RoadGeometry::default();
        let w = spawn_scenario(&g, Density::Hard, &StyleMix::default(), 2, 3).unwrap();
        let hdvs = w.vehicles.iter().filter(|v| !v.is_cav()).count();
        let cavs = w.vehicles.iter().filter(|v| v.is_cav()).count();
        assert_eq!(hdvs, 20);
        assert_eq!(cavs, 2);
    }

    #[test]
    fn zero_cavs_is_config_error() {
        let g = RoadGeometry::default();
        let r = spawn_scenario(&g, Density::Easy, &StyleMix::default(), 0, 1);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn initial_world_is_collision_free() {
        let g = RoadGeometry::default();
        for seed in 0..20 {
            let w = spawn_scenario(&g, Density::Hard, &StyleMix::default(), 3, seed).unwrap();
            for i in 0..w.vehicles.len() {
                for j in (i + 1)..w.vehicles.len() {
                    assert!(
                        !check_collision(&w.vehicles[i], &w.vehicles[j], &g),
                        "seed {seed}: vehicles {} and {} overlap",
                        w.vehicles[i].id,
                        w.vehicles[j].id
                    );
                }
            }
        }
    }

    #[test]
    fn ramp_vehicles_respect_min_gap() {
        let g = RoadGeometry::default();
        let w = spawn_scenario(&g, Density::Easy, &StyleMix::default(), 3, 11).unwrap();
        let mut cavs: Vec<&VehicleState> = w.vehicles.iter().filter(|v| v.is_cav()).collect();
        cavs.sort_by(|a, b| a.pos.partial_cmp(&b.pos).unwrap());
        for pair in cavs.windows(2) {
            let gap = pair[1].pos - pair[0].pos - 5.0;
            assert!(gap >= RAMP_MIN_GAP - 1e-9, "gap {gap}");
        }
        for c in cavs {
            assert!(c.pos >= g.ramp_start());
            assert!(c.pos <= g.merge_zone_start() + 0.3 * g.merge_zone_len);
        }
    }

    #[test]
    fn geometry_too_short_is_config_error() {
        let mut g = RoadGeometry::default();
        g.pre_merge_len = 10.0;
        g.merge_zone_len = 10.0;
        g.post_merge_len = 10.0;
        g.ramp_len = 15.0;
        let r = spawn_scenario(&g, Density::Hard, &StyleMix::default(), 1, 1);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
