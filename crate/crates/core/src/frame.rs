use serde::{Deserialize, Serialize};

use crate::{CoreError, Point};

/// Planar pose in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }

    /// Global point -> ego-local (x forward, y left).
    pub fn to_local(&self, p: Point) -> Point {
        let (sin, cos) = self.heading.sin_cos();
        let dx = p.0 - self.x;
        let dy = p.1 - self.y;
        (cos * dx + sin * dy, -sin * dx + cos * dy)
    }

    /// Ego-local point -> global.
    pub fn to_global(&self, p: Point) -> Point {
        let (sin, cos) = self.heading.sin_cos();
        (self.x + cos * p.0 - sin * p.1, self.y + sin * p.0 + cos * p.1)
    }
}

/// Express future global positions in the frame of `ego`: rotate the
/// displacement by `-heading`.
pub fn to_local_frame(ego: Pose, future_globals: &[Point]) -> Result<Vec<Point>, CoreError> {
    if future_globals.is_empty() {
        return Err(CoreError::Empty("future positions"));
    }
    if !ego.is_finite() {
        return Err(CoreError::NonFinite("ego pose"));
    }
    if future_globals.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(CoreError::NonFinite("future positions"));
    }
    Ok(future_globals.iter().map(|&p| ego.to_local(p)).collect())
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close(a: Point, b: Point) -> bool {
        (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12
    }

    #[test]
    fn zero_heading_is_subtraction() {
        let out = to_local_frame(Pose::new(5.0, 5.0, 0.0), &[(6.0, 7.0)]).unwrap();
        assert!(close(out[0], (1.0, 2.0)));
    }

    #[test]
    fn quarter_turn_matches_hand_rotation() {
        // cos = 0, sin = 1: (x, y) -> (y, -x)
        let out = to_local_frame(Pose::new(0.0, 0.0, FRAC_PI_2), &[(1.0, 2.0)]).unwrap();
        assert!(close(out[0], (2.0, -1.0)), "{out:?}");
    }

    #[test]
    fn own_position_maps_to_origin() {
        for h in [-3.0, -1.0, 0.3, 2.9] {
            let ego = Pose::new(12.5, -7.25, h);
            let out = to_local_frame(ego, &[(12.5, -7.25)]).unwrap();
            assert!(close(out[0], (0.0, 0.0)));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(to_local_frame(Pose::default(), &[]), Err(CoreError::Empty("future positions")));
        assert!(to_local_frame(Pose::default(), &[(f64::NAN, 0.0)]).is_err());
        assert!(to_local_frame(Pose::new(0.0, 0.0, f64::INFINITY), &[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn global_inverts_local() {
        let ego = Pose::new(3.0, -2.0, 0.7);
        let p = (10.0, 4.0);
        let back = ego.to_global(ego.to_local(p));
        assert!(close(back, p));
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn local_frame_is_isometry(
            ex in -1e3f64..1e3, ey in -1e3f64..1e3, h in -PI..PI,
            pts in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 5),
        ) {
            let local = to_local_frame(Pose::new(ex, ey, h), &pts).unwrap();
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let dg = (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1);
                    let dl = (local[i].0 - local[j].0).hypot(local[i].1 - local[j].1);
                    prop_assert!((dg - dl).abs() <= 1e-9 * dg.max(1.0));
                }
            }
        }
    }
}
