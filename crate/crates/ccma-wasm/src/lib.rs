//! Browser demo: an interactive episode of the merging simulator compiled to
//! WebAssembly. The page drives three operations — stepping an episode,
//! re-seeding the scenario, and adjusting the cooperation factor live.
//!
//! Build with `wasm-pack build crates/ccma-wasm --target web` (or
//! `cargo build --target wasm32-unknown-unknown` plus `wasm-bindgen`), then
//! serve `crates/ccma-wasm/www/`.

use wasm_bindgen::prelude::*;

use ccma_core::coord::{
    arbitrate, broadcast, coordinate, form_regions, CommMessage, CoordinateOptions,
    CoordinationBackend,
};
use ccma_core::harness::{compute_metrics_from_frames, CascadeLevel, StepFrame};
use ccma_core::policy::{act_individual, hazard_mask, train, PolicyArtifact, TrainConfig};
use ccma_core::reward::RewardWeights;
use ccma_core::sim::{
    observe, spawn_scenario, step, Density, MetaAction, RoadGeometry,
    ScenarioConfig, StyleMix, WorldState, DEFAULT_OBS_RADIUS,
};
use std::collections::BTreeMap;

fn parse_density(name: &str) -> Result<Density, JsValue> {
    match name {
        "easy" => Ok(Density::Easy),
        "medium" => Ok(Density::Medium),
        "hard" => Ok(Density::Hard),
        other => Err(JsValue::from_str(&format!("unknown density {other:?}"))),
    }
}

fn parse_level(name: &str) -> Result<CascadeLevel, JsValue> {
    match name {
        "P1" => Ok(CascadeLevel::Individual),
        "P1P2" => Ok(CascadeLevel::Regional),
        "P1P2P3" => Ok(CascadeLevel::Global),
        other => Err(JsValue::from_str(&format!("unknown level {other:?}"))),
    }
}

fn err_to_js(e: ccma_core::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// One interactive episode with a policy trained at construction time.
#[wasm_bindgen]
pub struct DemoSim {
    scenario: ScenarioConfig,
    level: CascadeLevel,
    policy: PolicyArtifact,
    weights: RewardWeights,
    world: WorldState,
    inboxes: BTreeMap<u64, Vec<CommMessage>>,
    frames: Vec<StepFrame>,
    horizon: usize,
}

#[wasm_bindgen]
impl DemoSim {
    /// Train a small policy and spawn the first episode. `train_episodes`
    /// around 80 keeps startup snappy; higher values sharpen the
    /// individual level.
    #[wasm_bindgen(constructor)]
    pub fn new(
        density: &str,
        n_cavs: u32,
        level: &str,
        coop_weight: f64,
        seed: u64,
        train_episodes: u32,
    ) -> Result<DemoSim, JsValue> {
        let scenario = ScenarioConfig {
            geometry: RoadGeometry::default(),
            density: parse_density(density)?,
            style_mix: StyleMix::default(),
            n_cavs: n_cavs as usize,
        };
        let weights = RewardWeights::default()
            .with_coop_weight(coop_weight)
            .map_err(err_to_js)?;
        let tc = TrainConfig {
            episodes: train_episodes as usize,
            seed,
            ..TrainConfig::default()
        };
        let policy = train(&scenario, &weights, &tc).map_err(err_to_js)?;
        let world = spawn_scenario(
            &scenario.geometry,
            scenario.density,
            &scenario.style_mix,
            scenario.n_cavs,
            seed,
        )
        .map_err(err_to_js)?;
        let frames = vec![StepFrame::from_world(&world, &[])];
        Ok(DemoSim {
            scenario,
            level: parse_level(level)?,
            policy,
            weights,
            world,
            inboxes: BTreeMap::new(),
            frames,
            horizon: 40,
        })
    }

    /// Static geometry for drawing, as JSON.
    pub fn geometry(&self) -> String {
        serde_json::to_string(&self.scenario.geometry).expect("geometry serializes")
    }

    /// Adjust the cooperation factor live; the remaining weights rescale.
    pub fn set_coop_weight(&mut self, value: f64) -> Result<(), JsValue> {
        self.weights = RewardWeights::default()
            .with_coop_weight(value)
            .map_err(err_to_js)?;
        Ok(())
    }

    /// Restart with a fresh seed, keeping scenario, level and weights.
    pub fn reset(&mut self, seed: u64) -> Result<(), JsValue> {
        self.world = spawn_scenario(
            &self.scenario.geometry,
            self.scenario.density,
            &self.scenario.style_mix,
            self.scenario.n_cavs,
            seed,
        )
        .map_err(err_to_js)?;
        self.inboxes.clear();
        self.frames = vec![StepFrame::from_world(&self.world, &[])];
        Ok(())
    }

    /// Whether the episode horizon has been reached.
    pub fn done(&self) -> bool {
        self.world.decision_step() as usize >= self.horizon
    }

    /// Advance one decision step and return the new frame as JSON:
    /// `{"time", "vehicles": [...], "events": [...], "messages": n}`.
    pub fn step_once(&mut self) -> Result<String, JsValue> {
        if self.done() {
            return self.current_frame();
        }
        let cav_ids = self.world.cav_ids();
        let mut masks = BTreeMap::new();
        let mut p1 = BTreeMap::new();
        for &id in &cav_ids {
            let mask = hazard_mask(&self.world, id).map_err(err_to_js)?;
            let action = if self.world.vehicle(id).map_or(true, |v| v.is_terminal()) {
                MetaAction::Idle
            } else {
                let obs = observe(&self.world, id, DEFAULT_OBS_RADIUS).map_err(err_to_js)?;
                act_individual(&self.policy, &obs, &mask, &self.world.geometry)
                    .map_err(err_to_js)?
            };
            masks.insert(id, mask);
            p1.insert(id, action);
        }

        let mut message_count = 0usize;
        let decisions = if self.level.coordinates() {
            let regions = form_regions(&self.world, 50.0);
            let mut out = Vec::new();
            for region in &regions {
                let inbox: Vec<CommMessage> = region
                    .member_ids
                    .iter()
                    .filter_map(|id| self.inboxes.get(id))
                    .flatten()
                    .cloned()
                    .collect();
                out.push(
                    coordinate(
                        region,
                        &self.world,
                        &mut CoordinationBackend::RuleOracle,
                        &inbox,
                        &self.weights,
                        &CoordinateOptions::default(),
                        None,
                    )
                    .map_err(err_to_js)?,
                );
            }
            message_count = out.iter().map(|d| d.messages.len()).sum();
            self.inboxes = broadcast(&out, &self.world, DEFAULT_OBS_RADIUS);
            Some(out)
        } else {
            None
        };

        let joint = arbitrate(&p1, decisions.as_deref(), &masks, true);
        let (next, events) = step(&self.world, &joint).map_err(err_to_js)?;
        self.world = next;
        self.frames.push(StepFrame::from_world(&self.world, &events));

        let mut value: serde_json::Value =
            serde_json::from_str(&self.frames.last().unwrap().to_json_line())
                .expect("frame round-trips");
        value["messages"] = serde_json::json!(message_count);
        Ok(value.to_string())
    }

    /// The most recent frame as JSON.
    pub fn current_frame(&self) -> Result<String, JsValue> {
        Ok(self.frames.last().expect("at least the spawn frame").to_json_line())
    }

    /// Episode metrics so far as JSON.
    pub fn metrics(&self) -> Result<String, JsValue> {
        let metrics = compute_metrics_from_frames(&self.frames, &self.scenario.geometry)
            .map_err(err_to_js)?;
        Ok(serde_json::to_string(&metrics).expect("metrics serialize"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_runs_a_full_episode_natively() {
        let mut sim = DemoSim::new("easy", 2, "P1P2", 0.4, 5, 30).unwrap();
        let geometry: serde_json::Value = serde_json::from_str(&sim.geometry()).unwrap();
        assert_eq!(geometry["main_lane_count"], 2);
        let mut steps = 0;
        while !sim.done() {
            let frame: serde_json::Value =
                serde_json::from_str(&sim.step_once().unwrap()).unwrap();
            assert!(frame["vehicles"].as_array().unwrap().len() >= 2);
            steps += 1;
            assert!(steps <= 40);
        }
        let metrics: serde_json::Value = serde_json::from_str(&sim.metrics().unwrap()).unwrap();
        assert!(metrics["success_rate"].as_f64().unwrap() >= 0.0);

        sim.set_coop_weight(0.8).unwrap();
        sim.reset(9).unwrap();
        assert!(!sim.done());
        let frame: serde_json::Value = serde_json::from_str(&sim.current_frame().unwrap()).unwrap();
        assert_eq!(frame["time"], 0.0);
    }
}
