//! Fixed-layout little-endian record rows. See `SCHEMA.md` for the byte map.

use osha_core::{EgoState, LaneChangeCommand, ObjectState, TaState, MAX_OBJECTS};

use crate::DatasetError;

pub const RECORDS_MAGIC: &[u8; 8] = b"OSHAREC\0";
pub const RECORDS_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 16;
const EGO_BYTES: usize = 8 + 8 + 4 + 8 * 3;
const OBJECT_BYTES: usize = 8 * 3 + 1 + 8 + 1;
pub const ROW_BYTES: usize = 4 + EGO_BYTES + MAX_OBJECTS * OBJECT_BYTES + 2;

/// One 25 Hz snapshot as recorded during collection.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    /// Simulation step of the snapshot.
    pub step: u32,
    /// `ego.command` carries the expert's issued command, same as `command`.
    pub ego: EgoState,
    pub objects: [ObjectState; MAX_OBJECTS],
    pub command: LaneChangeCommand,
    pub ta_state: TaState,
}

struct Writer<'a>(&'a mut Vec<u8>);

impl Writer<'_> {
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.buf[self.pos..self.pos + N].try_into().expect("row length checked");
        self.pos += N;
        out
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take::<8>())
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn bool(&mut self) -> Result<bool, DatasetError> {
        match self.u8() {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(DatasetError::Format(format!("invalid boolean byte {b}"))),
        }
    }
}

impl RawRecord {
    pub fn encode(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(&self.step.to_le_bytes());
        let mut w = Writer(out);
        let e = &self.ego;
        w.f64(e.v);
        w.f64(e.speed_limit);
        w.u8(e.lane_id);
        w.u8(e.left_avail as u8);
        w.u8(e.right_avail as u8);
        w.u8(e.command.code());
        w.f64(e.x);
        w.f64(e.y);
        w.f64(e.heading);
        for o in &self.objects {
            w.f64(o.v);
            w.f64(o.x);
            w.f64(o.y);
            w.u8(o.lane_id);
            w.f64(o.length);
            w.u8(o.present as u8);
        }
        w.u8(self.command.code());
        w.u8(self.ta_state.code());
        debug_assert_eq!(out.len() - start, ROW_BYTES);
    }

    pub fn decode(row: &[u8]) -> Result<Self, DatasetError> {
        if row.len() != ROW_BYTES {
            return Err(DatasetError::Format(format!("row of {} bytes, expected {ROW_BYTES}", row.len())));
        }
        let mut r = Reader { buf: row, pos: 0 };
        let step = u32::from_le_bytes(r.take::<4>());
        let ego = EgoState {
            v: r.f64(),
            speed_limit: r.f64(),
            lane_id: r.u8(),
            left_avail: r.bool()?,
            right_avail: r.bool()?,
            command: LaneChangeCommand::from_code(r.u8())?,
            x: r.f64(),
            y: r.f64(),
            heading: r.f64(),
        };
        let mut objects = [ObjectState::ABSENT; MAX_OBJECTS];
        for o in objects.iter_mut() {
            *o = ObjectState {
                v: r.f64(),
                x: r.f64(),
                y: r.f64(),
                lane_id: r.u8(),
                length: r.f64(),
                present: r.bool()?,
            };
        }
        let command = LaneChangeCommand::from_code(r.u8())?;
        let ta_state = TaState::from_code(r.u8())?;
        Ok(Self { step, ego, objects, command, ta_state })
    }
}

pub fn encode_records(records: &[RawRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + records.len() * ROW_BYTES);
    out.extend_from_slice(RECORDS_MAGIC);
    out.extend_from_slice(&RECORDS_VERSION.to_le_bytes());
    out.extend_from_slice(&(ROW_BYTES as u32).to_le_bytes());
    for r in records {
        r.encode(&mut out);
    }
    out
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<RawRecord>, DatasetError> {
    if bytes.len() < HEADER_BYTES || &bytes[..8] != RECORDS_MAGIC {
        return Err(DatasetError::Format("missing record file header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let row = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if version != RECORDS_VERSION || row != ROW_BYTES {
        return Err(DatasetError::Format(format!("unsupported record file v{version} with {row}-byte rows")));
    }
    let body = &bytes[HEADER_BYTES..];
    if body.len() % ROW_BYTES != 0 {
        return Err(DatasetError::Format("truncated record file".into()));
    }
    body.chunks_exact(ROW_BYTES).map(RawRecord::decode).collect()
}
