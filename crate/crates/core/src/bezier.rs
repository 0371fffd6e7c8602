//! Quartic Bezier curves anchored at the ego origin.
//!
//! The first control point is fixed at `(0, 0)`, so a curve is described by
//! the remaining four. Future ego positions sampled every 0.5 s over 2.5 s
//! map to the curve parameters `t = 0.2, 0.4, ..., 1.0`.

use serde::{Deserialize, Serialize};

use crate::{CoreError, Point};

/// Curve parameters of the five future points.
pub const FUTURE_TIMES: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

const BINOMIAL: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BezierCurve {
    /// Control points C1..C4; C0 is the origin.
    pub ctrl: [Point; 4],
}

impl BezierCurve {
    pub fn new(ctrl: [Point; 4]) -> Self {
        Self { ctrl }
    }

    /// Flattened `[x1, y1, ..., x4, y4]`.
    pub fn to_flat(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (k, p) in self.ctrl.iter().enumerate() {
            out[2 * k] = p.0;
            out[2 * k + 1] = p.1;
        }
        out
    }

    pub fn from_flat(v: &[f64; 8]) -> Self {
        let mut ctrl = [(0.0, 0.0); 4];
        for (k, c) in ctrl.iter_mut().enumerate() {
            *c = (v[2 * k], v[2 * k + 1]);
        }
        Self { ctrl }
    }

    /// Points at [`FUTURE_TIMES`].
    pub fn sample_future(&self) -> [Point; 5] {
        let mut out = [(0.0, 0.0); 5];
        for (o, &t) in out.iter_mut().zip(FUTURE_TIMES.iter()) {
            *o = eval_unchecked(self, t);
        }
        out
    }
}

/// Bernstein weights of the quartic basis at `t`, index 0..=4.
pub fn bernstein(t: f64) -> [f64; 5] {
    let s = 1.0 - t;
    let mut w = [0.0; 5];
    for (k, wk) in w.iter_mut().enumerate() {
        *wk = BINOMIAL[k] * s.powi(4 - k as i32) * t.powi(k as i32);
    }
    w
}

/// 5x4 design matrix mapping C1..C4 to the curve at [`FUTURE_TIMES`]
/// (row i, column k-1 = k-th Bernstein weight at t_i).
pub fn future_design_matrix() -> [[f64; 4]; 5] {
    let mut a = [[0.0; 4]; 5];
    for (row, &t) in a.iter_mut().zip(FUTURE_TIMES.iter()) {
        let w = bernstein(t);
        row.copy_from_slice(&w[1..]);
    }
    a
}

fn eval_unchecked(curve: &BezierCurve, t: f64) -> Point {
    let w = bernstein(t);
    let mut x = 0.0;
    let mut y = 0.0;
    for k in 0..4 {
        x += w[k + 1] * curve.ctrl[k].0;
        y += w[k + 1] * curve.ctrl[k].1;
    }
    (x, y)
}

pub fn bezier_eval(curve: &BezierCurve, t: f64) -> Result<Point, CoreError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(CoreError::ParameterOutOfRange(t));
    }
    Ok(eval_unchecked(curve, t))
}

/// Least-squares fit result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierFit {
    pub curve: BezierCurve,
    /// Sum of squared point errors, m^2.
    pub residual: f64,
}

/// Fit C1..C4 to five future points by linear least squares against the
/// fixed design matrix. The normal matrix is constant and full rank.
pub fn bezier_fit(points: &[Point; 5]) -> BezierFit {
    let a = future_design_matrix();
    let mut ata = [[0.0; 4]; 4];
    let mut atx = [0.0; 4];
    let mut aty = [0.0; 4];
    for (row, p) in a.iter().zip(points.iter()) {
        for i in 0..4 {
            atx[i] += row[i] * p.0;
            aty[i] += row[i] * p.1;
            for j in 0..4 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let l = cholesky4(&ata);
    let cx = cholesky_solve(&l, atx);
    let cy = cholesky_solve(&l, aty);
    let mut ctrl = [(0.0, 0.0); 4];
    for k in 0..4 {
        ctrl[k] = (cx[k], cy[k]);
    }
    let curve = BezierCurve { ctrl };
    let residual = curve
        .sample_future()
        .iter()
        .zip(points.iter())
        .map(|(q, p)| (q.0 - p.0).powi(2) + (q.1 - p.1).powi(2))
        .sum();
    BezierFit { curve, residual }
}

fn cholesky4(m: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut l = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(sum > 0.0, "Bernstein normal matrix must be positive definite");
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    l
}

fn cholesky_solve(l: &[[f64; 4]; 4], b: [f64; 4]) -> [f64; 4] {
    let mut z = [0.0; 4];
    for i in 0..4 {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * z[k];
        }
        z[i] = s / l[i][i];
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        let mut s = z[i];
        for k in i + 1..4 {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_curve() -> BezierCurve {
        BezierCurve::new([(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)])
    }

    #[test]
    fn endpoints() {
        let c = BezierCurve::new([(1.0, 2.0), (-3.0, 4.0), (5.0, 6.0), (7.0, -8.0)]);
        assert_eq!(bezier_eval(&c, 0.0).unwrap(), (0.0, 0.0));
        let end = bezier_eval(&c, 1.0).unwrap();
        assert!((end.0 - 7.0).abs() < 1e-15 && (end.1 + 8.0).abs() < 1e-15);
    }

    #[test]
    fn equispaced_collinear_is_linear() {
        let p = bezier_eval(&line_curve(), 0.5).unwrap();
        assert!((p.0 - 2.0).abs() < 1e-12 && p.1.abs() < 1e-12);
    }

    #[test]
    fn out_of_domain() {
        assert_eq!(bezier_eval(&line_curve(), 1.5), Err(CoreError::ParameterOutOfRange(1.5)));
        assert!(bezier_eval(&line_curve(), -0.1).is_err());
    }

    #[test]
    fn bernstein_partition_of_unity() {
        for t in [0.0, 0.13, 0.5, 0.99, 1.0] {
            let s: f64 = bernstein(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn fit_zero_points() {
        let fit = bezier_fit(&[(0.0, 0.0); 5]);
        assert_eq!(fit.curve.ctrl, [(0.0, 0.0); 4]);
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn fit_straight_line() {
        let pts: [Point; 5] = std::array::from_fn(|i| (4.0 * FUTURE_TIMES[i], 0.0));
        let fit = bezier_fit(&pts);
        for (k, c) in fit.curve.ctrl.iter().enumerate() {
            assert!((c.0 - (k + 1) as f64).abs() < 1e-9, "{:?}", fit.curve);
            assert!(c.1.abs() < 1e-9);
        }
        assert!(fit.residual < 1e-18);
    }

    #[test]
    fn fit_recovers_known_curve() {
        let c = BezierCurve::new([(3.0, 0.5), (9.0, 1.5), (14.0, 3.0), (20.0, 3.5)]);
        let fit = bezier_fit(&c.sample_future());
        for (a, b) in fit.curve.ctrl.iter().zip(c.ctrl.iter()) {
            assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
        }
    }

    #[test]
    fn flat_round_trip() {
        let c = BezierCurve::new([(1.0, 2.0), (3.0, 4.0), (5.0, 6.0), (7.0, 8.0)]);
        assert_eq!(BezierCurve::from_flat(&c.to_flat()), c);
    }

    proptest! {
        #[test]
        fn fit_inverts_sampling(ctrl in proptest::collection::vec((-80f64..80.0, -80f64..80.0), 4)) {
            let c = BezierCurve::new([ctrl[0], ctrl[1], ctrl[2], ctrl[3]]);
            let fit = bezier_fit(&c.sample_future());
            for (a, b) in fit.curve.ctrl.iter().zip(c.ctrl.iter()) {
                prop_assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
            }
        }
    }
}
