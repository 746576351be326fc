//! Discrete-time highway + on-ramp world: geometry, kinematics, background
//! traffic models, observation extraction and the transition function.

mod geometry;
mod idm;
mod mobil;
mod observe;
mod spawn;
mod vehicle;
mod world;

pub use geometry::RoadGeometry;
pub use idm::{idm_accel, IdmParams};
pub use mobil::{mobil_lane_change, mobil_safety_ok};
pub use observe::{observe, Observation, DEFAULT_OBS_RADIUS, MAX_NEIGHBORS};
pub use spawn::{spawn_scenario, Density, ScenarioConfig, StyleMix};
pub use vehicle::{DrivingStyle, MetaAction, StyleLabel, VehicleKind, VehicleState};
pub use world::{
    check_collision, lane_change_target, step, CollisionEvent, JointAction, StepEvents,
    WorldState, ACCEL_LIMIT, DECISION_DT, SPEED_CAP, SPEED_GAIN, SUBSTEPS_PER_DECISION,
    SUBSTEP_DT, TARGET_SPEED_STEP,
};
