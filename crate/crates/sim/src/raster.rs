//! Ego-centric top-down lane raster.
//!
//! 50 columns by 100 rows at 0.5 m per pixel. Row 0 is the farthest ahead;
//! the ego sits at column 25, row 60, so the image covers 30 m ahead and
//! 20 m behind. Pixel codes: background 0, lane i is 40 + 20 i, other
//! vehicles 220, ego 255.

use std::io::Cursor;
use std::path::Path;

use osha_core::Pose;

use crate::world::{World, VEHICLE_WIDTH};
use crate::SimError;

pub const RASTER_WIDTH: usize = 50;
pub const RASTER_HEIGHT: usize = 100;
pub const METERS_PER_PIXEL: f64 = 0.5;
pub const EGO_COL: usize = 25;
pub const EGO_ROW: usize = 60;
pub const BACKGROUND: u8 = 0;
pub const VEHICLE_CODE: u8 = 220;
pub const EGO_CODE: u8 = 255;

pub fn lane_code(lane: usize) -> u8 {
    (40 + 20 * lane).min(200) as u8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneRaster {
    /// Row-major, `RASTER_HEIGHT` rows of `RASTER_WIDTH`.
    pub pixels: Vec<u8>,
}

impl Default for LaneRaster {
    fn default() -> Self {
        Self { pixels: vec![BACKGROUND; RASTER_WIDTH * RASTER_HEIGHT] }
    }
}

impl LaneRaster {
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * RASTER_WIDTH + col]
    }

    fn set(&mut self, col: usize, row: usize, v: u8) {
        self.pixels[row * RASTER_WIDTH + col] = v;
    }

    /// Ego-local (forward, left) of a pixel center.
    pub fn pixel_center(col: usize, row: usize) -> (f64, f64) {
        (
            (EGO_ROW as f64 - row as f64) * METERS_PER_PIXEL,
            (EGO_COL as f64 - col as f64) * METERS_PER_PIXEL,
        )
    }

    pub fn to_png(&self) -> Result<Vec<u8>, SimError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, RASTER_WIDTH as u32, RASTER_HEIGHT as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| SimError::Png(e.to_string()))?;
            writer.write_image_data(&self.pixels).map_err(|e| SimError::Png(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, SimError> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(|e| SimError::Png(e.to_string()))?;
        let info = reader.info();
        if info.width as usize != RASTER_WIDTH
            || info.height as usize != RASTER_HEIGHT
            || info.color_type != png::ColorType::Grayscale
            || info.bit_depth != png::BitDepth::Eight
        {
            return Err(SimError::Png(format!("unexpected raster format {}x{}", info.width, info.height)));
        }
        let mut buf = vec![0u8; RASTER_WIDTH * RASTER_HEIGHT];
        reader.next_frame(&mut buf).map_err(|e| SimError::Png(e.to_string()))?;
        Ok(Self { pixels: buf })
    }

    pub fn write_png(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }

    pub fn read_png(path: &Path) -> Result<Self, SimError> {
        Self::from_png(&std::fs::read(path)?)
    }
}

pub fn render_lane_raster(world: &World) -> LaneRaster {
    let mut img = LaneRaster::default();
    let ego_pose = world.ego_pose();
    let track = &world.track;
    let ego_s = world.state.ego.s;

    for row in 0..RASTER_HEIGHT {
        for col in 0..RASTER_WIDTH {
            let (fwd, left) = LaneRaster::pixel_center(col, row);
            let g = ego_pose.to_global((fwd, left));
            let (_, d) = track.project(g, ego_s + fwd, 40.0);
            if let Some(lane) = track.lane_at(d) {
                img.set(col, row, lane_code(lane));
            }
        }
    }

    let reach = (RASTER_HEIGHT as f64 + RASTER_WIDTH as f64) * METERS_PER_PIXEL;
    for agent in &world.state.agents {
        if track.ds(ego_s, agent.s).abs() > reach {
            continue;
        }
        let p = world.agent_pose(agent);
        let (x, y) = ego_pose.to_local((p.x, p.y));
        let local = Pose { x, y, heading: p.heading - ego_pose.heading };
        fill_box(&mut img, local, agent.length, VEHICLE_WIDTH, VEHICLE_CODE);
    }
    fill_box(&mut img, Pose::new(0.0, 0.0, 0.0), world.state.ego.length, VEHICLE_WIDTH, EGO_CODE);
    img
}

/// Paint every pixel whose center lies inside an oriented rectangle given in
/// the ego frame.
fn fill_box(img: &mut LaneRaster, pose: Pose, length: f64, width: f64, code: u8) {
    let radius = 0.5 * length.hypot(width);
    let row_of = |fwd: f64| EGO_ROW as f64 - fwd / METERS_PER_PIXEL;
    let col_of = |left: f64| EGO_COL as f64 - left / METERS_PER_PIXEL;
    let r0 = row_of(pose.x + radius).floor().max(0.0) as usize;
    let r1 = row_of(pose.x - radius).ceil().min(RASTER_HEIGHT as f64 - 1.0);
    let c0 = col_of(pose.y + radius).floor().max(0.0) as usize;
    let c1 = col_of(pose.y - radius).ceil().min(RASTER_WIDTH as f64 - 1.0);
    if r1 < 0.0 || c1 < 0.0 {
        return;
    }
    for row in r0..=r1 as usize {
        for col in c0..=c1 as usize {
            let (fwd, left) = LaneRaster::pixel_center(col, row);
            let (lx, ly) = pose.to_local((fwd, left));
            if lx.abs() <= length / 2.0 && ly.abs() <= width / 2.0 {
                img.set(col, row, code);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::TrackId;
    use crate::world::{AgentSpawn, Behavior, EgoSpawn};

    #[test]
    fn straight_empty_road_is_three_bands() {
        let w = World::scripted(TrackId::Straightaway, EgoSpawn { s: 500.0, lane: 1, v: 0.0 }, &[]);
        let img = render_lane_raster(&w);
        // with the ego in the middle lane, lane edges sit at +-5.25 m
        for row in 0..RASTER_HEIGHT {
            for col in 0..RASTER_WIDTH {
                let (fwd, left) = LaneRaster::pixel_center(col, row);
                if fwd.abs() <= 3.0 && left.abs() <= 1.5 {
                    continue; // ego footprint
                }
                let expect = match left {
                    l if l >= 5.25 || l < -5.25 => BACKGROUND,
                    l if l >= 1.75 => lane_code(2),
                    l if l >= -1.75 => lane_code(1),
                    _ => lane_code(0),
                };
                assert_eq!(img.get(col, row), expect, "col {col} row {row}");
            }
        }
    }

    #[test]
    fn vehicle_ten_meters_ahead_centered_at_row_40() {
        let a = AgentSpawn { s: 510.0, lane: 1, v: 0.0, length: 4.5, behavior: Behavior::Normal, speed_cap: None };
        let w = World::scripted(TrackId::Straightaway, EgoSpawn { s: 500.0, lane: 1, v: 0.0 }, &[a]);
        let img = render_lane_raster(&w);
        assert_eq!(img.get(25, 40), VEHICLE_CODE);
        let rows: Vec<usize> = (0..RASTER_HEIGHT).filter(|&r| img.get(25, r) == VEHICLE_CODE).collect();
        let mean = rows.iter().sum::<usize>() as f64 / rows.len() as f64;
        assert!((mean - 40.0).abs() <= 0.5, "rows {rows:?}");
    }

    #[test]
    fn ego_pixel_fixed() {
        let w = World::reset(&crate::SimConfig::new(TrackId::Evaluation, 25.0, 9)).unwrap();
        let mut w = w;
        for _ in 0..10 {
            let img = render_lane_raster(&w);
            assert_eq!(img.get(EGO_COL, EGO_ROW), EGO_CODE);
            for _ in 0..200 {
                let c = crate::EgoControl::keep(w.state.ego.lane, 1.0);
                w.step(&c);
            }
        }
    }

    #[test]
    fn png_round_trip() {
        let w = World::reset(&crate::SimConfig::new(TrackId::Training, 15.0, 2)).unwrap();
        let img = render_lane_raster(&w);
        let bytes = img.to_png().unwrap();
        assert_eq!(LaneRaster::from_png(&bytes).unwrap(), img);
    }
}
