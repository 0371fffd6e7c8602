//! Closed-loop highway tracks built from straights and circular arcs.
//!
//! Longitudinal positions are centerline arclength `s` for every lane; the
//! lateral coordinate `d` is positive to the left of the direction of travel.
//! Lane 0 is the rightmost lane.

use std::f64::consts::{PI, TAU};

use osha_core::frame::wrap_angle;
use osha_core::units::kmh_to_ms;
use osha_core::Point;
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Piece {
    Straight { length: f64 },
    /// Positive `angle` turns left.
    Arc { radius: f64, angle: f64 },
}

impl Piece {
    pub fn length(&self) -> f64 {
        match *self {
            Piece::Straight { length } => length,
            Piece::Arc { radius, angle } => radius * angle.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSegment {
    pub start_s: f64,
    pub end_s: f64,
    /// m/s
    pub limit: f64,
}

#[derive(Debug, Clone, Copy)]
struct PlacedPiece {
    piece: Piece,
    start_s: f64,
    start: Point,
    start_heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackId {
    Training,
    Evaluation,
    /// 3-lane loop with 2 km straights, used by scripted scenarios.
    Straightaway,
}

impl TrackId {
    pub fn code(self) -> u8 {
        match self {
            TrackId::Training => 0,
            TrackId::Evaluation => 1,
            TrackId::Straightaway => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TrackId::Training),
            1 => Some(TrackId::Evaluation),
            2 => Some(TrackId::Straightaway),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrackId::Training => "training",
            TrackId::Evaluation => "evaluation",
            TrackId::Straightaway => "straightaway",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [TrackId::Training, TrackId::Evaluation, TrackId::Straightaway]
            .into_iter()
            .find(|t| t.name() == name)
    }

    pub fn build(self) -> Track {
        match self {
            TrackId::Training => Track::training(),
            TrackId::Evaluation => Track::evaluation(),
            TrackId::Straightaway => Track::straightaway(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: TrackId,
    pub lane_count: usize,
    pub lane_width: f64,
    pub segments: Vec<SpeedSegment>,
    pieces: Vec<PlacedPiece>,
    length: f64,
}

impl Track {
    pub fn new(
        id: TrackId,
        pieces: &[Piece],
        lane_count: usize,
        lane_width: f64,
        limits_kmh: &[(f64, u32)],
    ) -> Result<Self, SimError> {
        if lane_count < 2 {
            return Err(SimError::Config("a track needs at least two lanes".into()));
        }
        let mut placed = Vec::with_capacity(pieces.len());
        let mut s = 0.0;
        let mut pos = (0.0, 0.0);
        let mut heading = 0.0;
        for &piece in pieces {
            placed.push(PlacedPiece { piece, start_s: s, start: pos, start_heading: heading });
            let (p, h) = advance(pos, heading, piece, piece.length());
            pos = p;
            heading = h;
            s += piece.length();
        }
        let closure = pos.0.hypot(pos.1);
        let turn = wrap_angle(heading).abs();
        if closure > 1e-6 || turn > 1e-9 {
            return Err(SimError::Config(format!(
                "track does not close: end offset {closure:.3} m, heading {heading:.4} rad"
            )));
        }
        let length = s;
        // limits given as (start fraction of length, km/h)
        let mut segments = Vec::with_capacity(limits_kmh.len());
        for (i, &(frac, kmh)) in limits_kmh.iter().enumerate() {
            let end = limits_kmh.get(i + 1).map_or(1.0, |n| n.0);
            segments.push(SpeedSegment {
                start_s: frac * length,
                end_s: end * length,
                limit: kmh_to_ms(kmh as f64),
            });
        }
        if segments.first().map(|s| s.start_s) != Some(0.0) {
            return Err(SimError::Config("speed segments must start at s = 0".into()));
        }
        Ok(Self { id, lane_count, lane_width, segments, pieces: placed, length })
    }

    /// Stadium loop, ~4 km.
    pub fn training() -> Self {
        let pieces = [
            Piece::Straight { length: 1300.0 },
            Piece::Arc { radius: 220.0, angle: PI },
            Piece::Straight { length: 1300.0 },
            Piece::Arc { radius: 220.0, angle: PI },
        ];
        let limits = [
            (0.0, 80),
            (0.12, 60),
            (0.25, 70),
            (0.38, 50),
            (0.5, 80),
            (0.62, 40),
            (0.72, 70),
            (0.86, 60),
        ];
        Self::new(TrackId::Training, &pieces, 3, 3.5, &limits).expect("built-in track closes")
    }

    /// Rounded-rectangle loop with tighter corners and an S-bend, ~4 km.
    pub fn evaluation() -> Self {
        let r = 150.0;
        let q = PI / 2.0;
        let pieces = [
            Piece::Straight { length: 700.0 },
            Piece::Arc { radius: r, angle: q },
            Piece::Straight { length: 300.0 },
            // S-bends: net zero turn; the two lateral shifts cancel around the loop
            Piece::Arc { radius: 300.0, angle: -PI / 6.0 },
            Piece::Arc { radius: 300.0, angle: PI / 6.0 },
            Piece::Straight { length: 300.0 },
            Piece::Arc { radius: r, angle: q },
            Piece::Straight { length: 700.0 },
            Piece::Arc { radius: r, angle: q },
            Piece::Straight { length: 300.0 },
            Piece::Arc { radius: 300.0, angle: -PI / 6.0 },
            Piece::Arc { radius: 300.0, angle: PI / 6.0 },
            Piece::Straight { length: 300.0 },
            Piece::Arc { radius: r, angle: q },
        ];
        let limits = [(0.0, 70), (0.15, 80), (0.33, 50), (0.45, 80), (0.6, 60), (0.75, 80), (0.9, 70)];
        Self::new(TrackId::Evaluation, &pieces, 3, 3.5, &limits).expect("built-in track closes")
    }

    /// Long straights joined by wide arcs; a single 80 km/h limit.
    pub fn straightaway() -> Self {
        let pieces = [
            Piece::Straight { length: 2000.0 },
            Piece::Arc { radius: 400.0, angle: PI },
            Piece::Straight { length: 2000.0 },
            Piece::Arc { radius: 400.0, angle: PI },
        ];
        Self::new(TrackId::Straightaway, &pieces, 3, 3.5, &[(0.0, 80)]).expect("built-in track closes")
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn wrap(&self, s: f64) -> f64 {
        s.rem_euclid(self.length)
    }

    /// Signed shortest arclength from `from` to `to`, in (-L/2, L/2].
    pub fn ds(&self, from: f64, to: f64) -> f64 {
        let mut d = (to - from).rem_euclid(self.length);
        if d > self.length / 2.0 {
            d -= self.length;
        }
        d
    }

    /// Forward arclength from `from` to `to`, in [0, L).
    pub fn ds_ahead(&self, from: f64, to: f64) -> f64 {
        (to - from).rem_euclid(self.length)
    }

    pub fn speed_limit(&self, s: f64) -> f64 {
        let s = self.wrap(s);
        let i = self.segments.partition_point(|seg| seg.start_s <= s);
        self.segments[i.saturating_sub(1)].limit
    }

    /// Lateral offset of a lane center.
    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 - (self.lane_count as f64 - 1.0) / 2.0) * self.lane_width
    }

    /// Lane containing lateral offset `d`, if on the road.
    pub fn lane_at(&self, d: f64) -> Option<usize> {
        let half = self.lane_width * self.lane_count as f64 / 2.0;
        if d < -half || d >= half {
            return None;
        }
        Some((((d + half) / self.lane_width) as usize).min(self.lane_count - 1))
    }

    fn piece_index(&self, s: f64) -> usize {
        let i = self.pieces.partition_point(|p| p.start_s <= s);
        i.saturating_sub(1)
    }

    /// Centerline point and heading at arclength `s`.
    pub fn centerline(&self, s: f64) -> (Point, f64) {
        let s = self.wrap(s);
        let p = &self.pieces[self.piece_index(s)];
        let (pos, h) = advance(p.start, p.start_heading, p.piece, s - p.start_s);
        (pos, wrap_angle(h))
    }

    /// Global point and heading at (`s`, lateral `d`).
    pub fn to_global(&self, s: f64, d: f64) -> (Point, f64) {
        let (c, h) = self.centerline(s);
        ((c.0 - d * h.sin(), c.1 + d * h.cos()), h)
    }

    /// Project a global point onto the centerline, searching pieces that
    /// overlap `s_hint ± window`. Returns (s, d).
    pub fn project(&self, p: Point, s_hint: f64, window: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let n = self.pieces.len();
        let start = self.piece_index(self.wrap(s_hint - window));
        let mut covered = 0.0;
        let mut i = start;
        for _ in 0..n {
            let pp = &self.pieces[i];
            let (dist2, s_local, d) = closest_on_piece(pp, p);
            if dist2 < best.0 {
                best = (dist2, pp.start_s + s_local, d);
            }
            covered += if i == start {
                pp.start_s + pp.piece.length() - self.wrap(s_hint - window)
            } else {
                pp.piece.length()
            };
            if covered >= 2.0 * window {
                break;
            }
            i = (i + 1) % n;
        }
        (self.wrap(best.1), best.2)
    }
}

fn advance(start: Point, heading: f64, piece: Piece, dist: f64) -> (Point, f64) {
    match piece {
        Piece::Straight { .. } => {
            ((start.0 + dist * heading.cos(), start.1 + dist * heading.sin()), heading)
        }
        Piece::Arc { radius, angle } => {
            let sign = angle.signum();
            let dphi = sign * dist / radius;
            // center lies on the turning side
            let cx = start.0 - sign * radius * heading.sin();
            let cy = start.1 + sign * radius * heading.cos();
            let h = heading + dphi;
            ((cx + sign * radius * h.sin(), cy - sign * radius * h.cos()), h)
        }
    }
}

/// (squared distance, arclength within piece, signed lateral offset)
fn closest_on_piece(pp: &PlacedPiece, p: Point) -> (f64, f64, f64) {
    let h = pp.start_heading;
    match pp.piece {
        Piece::Straight { length } => {
            let dx = p.0 - pp.start.0;
            let dy = p.1 - pp.start.1;
            let along = dx * h.cos() + dy * h.sin();
            let lat = -dx * h.sin() + dy * h.cos();
            let t = along.clamp(0.0, length);
            let overshoot = along - t;
            (overshoot * overshoot + lat * lat, t, lat)
        }
        Piece::Arc { radius, angle } => {
            let sign = angle.signum();
            let cx = pp.start.0 - sign * radius * h.sin();
            let cy = pp.start.1 + sign * radius * h.cos();
            let rx = p.0 - cx;
            let ry = p.1 - cy;
            let r = rx.hypot(ry);
            // polar angle of the start point around the center
            let a0 = (pp.start.1 - cy).atan2(pp.start.0 - cx);
            let a = ry.atan2(rx);
            let swept = (sign * (a - a0)).rem_euclid(TAU);
            let total = angle.abs();
            let swept = if swept > total {
                // beyond the end: snap to the nearer end
                if swept - total < TAU - swept { total } else { 0.0 }
            } else {
                swept
            };
            let s_local = swept * radius;
            let (q, _) = advance(pp.start, h, pp.piece, s_local);
            let dist2 = (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
            // left turn: center is on the left, so d = radius - r
            let lat = sign * (radius - r);
            (dist2, s_local, lat)
        }
    }
}
