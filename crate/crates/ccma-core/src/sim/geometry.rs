//! Road layout for the merge map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A straight multi-lane highway with a single on-ramp feeding the rightmost
/// lane. Longitudinal positions run along the road axis; the merge zone is
/// the only stretch where ramp traffic may change onto the main road.
///
/// Lane indices: `0` is the leftmost main lane, `main_lane_count - 1` the
/// rightmost main lane, and `main_lane_count` denotes the ramp itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    pub main_lane_count: usize,
    pub lane_width: f64,
    pub pre_merge_len: f64,
    pub merge_zone_len: f64,
    pub post_merge_len: f64,
    pub ramp_len: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            main_lane_count: 2,
            lane_width: 4.0,
            pre_merge_len: 220.0,
            merge_zone_len: 100.0,
            post_merge_len: 180.0,
            ramp_len: 150.0,
        }
    }
}

impl RoadGeometry {
    /// Validate the field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.main_lane_count < 1 {
            return Err(Error::Config("main_lane_count must be >= 1".into()));
        }
        let lengths = [
            ("lane_width", self.lane_width),
            ("pre_merge_len", self.pre_merge_len),
            ("merge_zone_len", self.merge_zone_len),
            ("post_merge_len", self.post_merge_len),
            ("ramp_len", self.ramp_len),
        ];
        for (name, v) in lengths {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Lane index encoding the ramp.
    pub fn ramp_lane(&self) -> usize {
        self.main_lane_count
    }

    /// Rightmost main lane, the one the ramp merges into.
    pub fn rightmost_main_lane(&self) -> usize {
        self.main_lane_count - 1
    }

    /// Start of the merge zone along the road axis.
    pub fn merge_zone_start(&self) -> f64 {
        self.pre_merge_len
    }

    /// End of the merge zone; also where the ramp physically ends.
    pub fn merge_zone_end(&self) -> f64 {
        self.pre_merge_len + self.merge_zone_len
    }

    /// Longitudinal position where the ramp begins.
    pub fn ramp_start(&self) -> f64 {
        self.merge_zone_end() - self.ramp_len
    }

    /// Total road length (pre-merge + merge + post-merge).
    pub fn road_len(&self) -> f64 {
        self.pre_merge_len + self.merge_zone_len + self.post_merge_len
    }

    /// Lateral centre of a lane in metres (lane 0 at 0.0, increasing right).
    pub fn lane_center(&self, lane: usize) -> f64 {
        lane as f64 * self.lane_width
    }
}
