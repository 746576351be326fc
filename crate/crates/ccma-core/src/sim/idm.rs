//! Car-following acceleration law used for background traffic.

use serde::{Deserialize, Serialize};

use super::vehicle::DrivingStyle;
use super::world::ACCEL_LIMIT;

/// Parameters of the car-following law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Minimum standstill gap s0 (m).
    pub min_gap: f64,
    /// Desired time headway T (s).
    pub headway: f64,
    /// Maximum acceleration a (m/s^2).
    pub max_accel: f64,
    /// Comfortable braking b (m/s^2).
    pub comf_decel: f64,
    /// Free-road exponent.
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            min_gap: 10.0,
            headway: 1.5,
            max_accel: 3.0,
            comf_decel: 5.0,
            delta: 4.0,
        }
    }
}

impl IdmParams {
    /// Defaults scaled by a driving style (headway and acceleration).
    pub fn for_style(style: &DrivingStyle) -> Self {
        let base = Self::default();
        Self {
            headway: base.headway * style.headway_mult,
            max_accel: base.max_accel * style.accel_mult,
            ..base
        }
    }
}

/// Acceleration demanded by the car-following law.
///
/// `v` is the follower speed, `v0` its desired speed, `gap` the
/// bumper-to-bumper distance to the leader (`f64::INFINITY` when the road is
/// free) and `dv` the approach rate `v - v_leader`. A non-positive gap with a
/// leader present returns the emergency deceleration, signalling an imminent
/// collision rather than raising an error.
pub fn idm_accel(v: f64, v0: f64, gap: f64, dv: f64, params: &IdmParams) -> f64 {
    if gap <= 0.0 {
        return -ACCEL_LIMIT;
    }
    let free = if v0 > 0.0 {
        (v / v0).powf(params.delta)
    } else if v > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    let interaction = if gap.is_finite() {
        let s_star = params.min_gap
            + v * params.headway
            + v * dv / (2.0 * (params.max_accel * params.comf_decel).sqrt());
        (s_star / gap).powi(2)
    } else {
        0.0
    };
    let accel = params.max_accel * (1.0 - free - interaction);
    accel.clamp(-ACCEL_LIMIT, ACCEL_LIMIT)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_free_road() {
        let p = IdmParams::default();
        let a = idm_accel(25.0, 25.0, f64::INFINITY, 0.0, &p);
        assert!(a.abs() < 1e-12);
    }

    #[test]
    fn standstill_free_road_accelerates_at_max() {
        let p = IdmParams::default();
        assert_eq!(idm_accel(0.0, 30.0, f64::INFINITY, 0.0, &p), 3.0);
    }

    #[test]
    fn following_case_matches_hand_evaluation() {
        // v=20, v0=30, gap=30, dv=0:
        // s* = 10 + 20*1.5 = 40; a = 3*(1 - (2/3)^4 - (40/30)^2) = -2.9259...
        let p = IdmParams::default();
        let a = idm_accel(20.0, 30.0, 30.0, 0.0, &p);
        assert!((a - (-2.926)).abs() < 1e-3, "got {a}");
    }

    #[test]
    fn nonpositive_gap_is_emergency_braking() {
        let p = IdmParams::default();
        assert_eq!(idm_accel(10.0, 30.0, 0.0, 5.0, &p), -5.0);
        assert_eq!(idm_accel(10.0, 30.0, -2.0, 5.0, &p), -5.0);
    }

    #[test]
    fn output_always_clamped() {
        let p = IdmParams::default();
        for &(v, gap, dv) in &[(0.0, 1e-3, 30.0), (35.0, 2.0, 20.0), (35.0, 1000.0, -30.0)] {
            let a = idm_accel(v, 25.0, gap, dv, &p);
            assert!((-5.0..=5.0).contains(&a));
        }
    }

    #[test]
    fn zero_desired_speed_brakes() {
        let p = IdmParams::default();
        assert!(idm_accel(5.0, 0.0, f64::INFINITY, 0.0, &p) <= -5.0 + 1e-12);
    }
}
