//! Gap-based car-following law (Intelligent Driver Model).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Maximum acceleration, m/s^2.
    pub max_accel: f64,
    /// Comfortable deceleration, m/s^2.
    pub comfort_decel: f64,
    /// Hard floor on deceleration, m/s^2.
    pub max_decel: f64,
    /// Desired time headway, s.
    pub headway: f64,
    /// Jam distance, m.
    pub min_gap: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            max_accel: 2.0,
            comfort_decel: 3.0,
            max_decel: 9.0,
            headway: 1.5,
            min_gap: 2.0,
            delta: 4.0,
        }
    }
}

/// Leader as seen by a follower: bumper-to-bumper gap (m) and speed (m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub v: f64,
}

impl IdmParams {
    pub fn free_road(&self, v: f64, desired: f64) -> f64 {
        if desired <= 1e-6 {
            return if v > 0.0 { -self.comfort_decel } else { 0.0 };
        }
        // above the desired speed (e.g. entering a slower segment) brake comfortably
        (self.max_accel * (1.0 - (v / desired).powf(self.delta))).max(-self.comfort_decel)
    }

    pub fn desired_gap(&self, v: f64, v_lead: f64) -> f64 {
        let dyn_term = v * self.headway
            + v * (v - v_lead) / (2.0 * (self.max_accel * self.comfort_decel).sqrt());
        self.min_gap + dyn_term.max(0.0)
    }

    pub fn accel(&self, v: f64, desired: f64, leader: Option<Leader>) -> f64 {
        let mut a = self.free_road(v, desired);
        if let Some(l) = leader {
            let s_star = self.desired_gap(v, l.v);
            let gap = l.gap.max(0.05);
            a -= self.max_accel * (s_star / gap).powi(2);
        }
        a.clamp(-self.max_decel, self.max_accel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_road_accelerates_below_desired() {
        let p = IdmParams::default();
        assert!(p.accel(10.0, 20.0, None) > 0.0);
        assert_eq!(p.accel(20.0, 20.0, None), 0.0);
        assert!(p.accel(25.0, 20.0, None) < 0.0);
    }

    #[test]
    fn free_road_decel_is_bounded() {
        let p = IdmParams::default();
        assert_eq!(p.accel(22.0, 8.0, None), -3.0);
    }

    #[test]
    fn close_leader_brakes_hard() {
        let p = IdmParams::default();
        assert_eq!(p.accel(20.0, 22.0, Some(Leader { gap: 5.0, v: 0.0 })), -9.0);
    }
}
