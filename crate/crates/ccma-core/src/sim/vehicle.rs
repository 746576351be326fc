//! Per-vehicle state, driving styles and the discrete action set.

use serde::{Deserialize, Serialize};

use super::geometry::RoadGeometry;

/// Behavioural archetype for background traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleLabel {
    Aggressive,
    Normal,
    Conservative,
}

/// Driving style parameters: multipliers on the car-following model plus a
/// politeness factor for lane-change incentives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivingStyle {
    pub label: StyleLabel,
    pub headway_mult: f64,
    pub accel_mult: f64,
    pub politeness: f64,
}

impl DrivingStyle {
    pub fn aggressive() -> Self {
        Self {
            label: StyleLabel::Aggressive,
            headway_mult: 0.7,
            accel_mult: 1.3,
            politeness: 0.1,
        }
    }

    pub fn normal() -> Self {
        Self {
            label: StyleLabel::Normal,
            headway_mult: 1.0,
            accel_mult: 1.0,
            politeness: 0.3,
        }
    }

    pub fn conservative() -> Self {
        Self {
            label: StyleLabel::Conservative,
            headway_mult: 1.4,
            accel_mult: 0.8,
            politeness: 0.6,
        }
    }

    pub fn from_label(label: StyleLabel) -> Self {
        match label {
            StyleLabel::Aggressive => Self::aggressive(),
            StyleLabel::Normal => Self::normal(),
            StyleLabel::Conservative => Self::conservative(),
        }
    }
}

/// Controlled (CAV) versus background (HDV) vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VehicleKind {
    Cav,
    Hdv,
}

/// The five high-level commands a controlled vehicle can take each decision
/// step. `FASTER`/`SLOWER` shift the target speed by ±5 m/s (clamped to
/// [0, 35]); the lane actions start a one-step kinematic lane change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetaAction {
    LaneLeft,
    Idle,
    LaneRight,
    Faster,
    Slower,
}

impl MetaAction {
    /// Canonical index order used for score vectors and serialized tables.
    pub const ALL: [MetaAction; 5] = [
        MetaAction::LaneLeft,
        MetaAction::Idle,
        MetaAction::LaneRight,
        MetaAction::Faster,
        MetaAction::Slower,
    ];

    /// Preference order used to break exact ties between equally-valued
    /// actions: IDLE > FASTER > SLOWER > LANE_LEFT > LANE_RIGHT.
    pub const TIE_ORDER: [MetaAction; 5] = [
        MetaAction::Idle,
        MetaAction::Faster,
        MetaAction::Slower,
        MetaAction::LaneLeft,
        MetaAction::LaneRight,
    ];

    /// Position in [`MetaAction::ALL`].
    pub fn index(self) -> usize {
        match self {
            MetaAction::LaneLeft => 0,
            MetaAction::Idle => 1,
            MetaAction::LaneRight => 2,
            MetaAction::Faster => 3,
            MetaAction::Slower => 4,
        }
    }

    /// Uppercase wire name, e.g. `LANE_LEFT`.
    pub fn name(self) -> &'static str {
        match self {
            MetaAction::LaneLeft => "LANE_LEFT",
            MetaAction::Idle => "IDLE",
            MetaAction::LaneRight => "LANE_RIGHT",
            MetaAction::Faster => "FASTER",
            MetaAction::Slower => "SLOWER",
        }
    }

    /// Parse an uppercase wire name.
    pub fn from_name(name: &str) -> Option<Self> {
        MetaAction::ALL.into_iter().find(|a| a.name() == name)
    }
}

/// In-flight kinematic lane change, completed over exactly one decision step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChange {
    pub from: usize,
    pub to: usize,
    /// Completed physics substeps, 0..=10.
    pub substeps_done: u32,
}

/// Full kinematic and bookkeeping state of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u64,
    pub kind: VehicleKind,
    /// Lane index; the ramp is encoded as `main_lane_count`.
    pub lane: usize,
    /// Longitudinal position of the vehicle centre along the road axis (m).
    pub pos: f64,
    /// Lateral offset from the lane centre in lane-widths, in [-0.5, 0.5].
    pub lat: f64,
    pub speed: f64,
    pub accel: f64,
    pub prev_accel: f64,
    pub target_speed: f64,
    pub length: f64,
    pub width: f64,
    pub style: DrivingStyle,
    pub merged: bool,
    pub merge_enter_time: Option<f64>,
    pub merge_done_time: Option<f64>,
    /// Set when the vehicle collided; frozen vehicles no longer move.
    pub frozen: bool,
    /// Set when a ramp vehicle reached the ramp end without merging.
    pub ramp_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_change: Option<LaneChange>,
}

impl VehicleState {
    pub fn new(id: u64, kind: VehicleKind, lane: usize, pos: f64, speed: f64) -> Self {
        Self {
            id,
            kind,
            lane,
            pos,
            lat: 0.0,
            speed,
            accel: 0.0,
            prev_accel: 0.0,
            target_speed: speed,
            length: 5.0,
            width: 2.0,
            style: DrivingStyle::normal(),
            merged: false,
            merge_enter_time: None,
            merge_done_time: None,
            frozen: false,
            ramp_failed: false,
            lane_change: None,
        }
    }

    pub fn is_cav(&self) -> bool {
        self.kind == VehicleKind::Cav
    }

    /// True for a ramp vehicle that has not yet merged onto the main road.
    pub fn on_ramp(&self, geometry: &RoadGeometry) -> bool {
        self.lane == geometry.ramp_lane() && !self.merged
    }

    /// Lateral centre position in metres.
    pub fn lateral_m(&self, geometry: &RoadGeometry) -> f64 {
        (self.lane as f64 + self.lat) * geometry.lane_width
    }

    /// Planar distance to another vehicle.
    pub fn distance_to(&self, other: &VehicleState, geometry: &RoadGeometry) -> f64 {
        let dx = self.pos - other.pos;
        let dy = self.lateral_m(geometry) - other.lateral_m(geometry);
        (dx * dx + dy * dy).sqrt()
    }

    /// A vehicle that can no longer act: collided or stuck at the ramp end.
    pub fn is_terminal(&self) -> bool {
        self.frozen || self.ramp_failed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_wire_names_round_trip() {
        for a in MetaAction::ALL {
            assert_eq!(MetaAction::from_name(a.name()), Some(a));
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert_eq!(MetaAction::from_name("TURBO"), None);
    }

    #[test]
    fn canonical_index_order() {
        assert_eq!(MetaAction::Faster.index(), 3);
        for (i, a) in MetaAction::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
        }
    }

    #[test]
    fn style_parameters() {
        assert_eq!(DrivingStyle::aggressive().politeness, 0.1);
        assert_eq!(DrivingStyle::normal().headway_mult, 1.0);
        assert_eq!(DrivingStyle::conservative().accel_mult, 0.8);
    }

    #[test]
    fn lateral_position_tracks_lane_and_offset() {
        let g = RoadGeometry::default();
        let mut v = VehicleState::new(1, VehicleKind::Hdv, 1, 100.0, 20.0);
        assert_eq!(v.lateral_m(&g), 4.0);
        v.lat = 0.5;
        assert_eq!(v.lateral_m(&g), 6.0);
    }
}
