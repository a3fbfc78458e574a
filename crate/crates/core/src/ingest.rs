//! VeReMi log ingestion.
//!
//! Log files hold one JSON object per line. Only received-beacon records
//! (`"type": 3`) enter the pipeline; everything else is counted in a
//! [`SkipReport`] so that `messages + skips == lines` always holds.
//! Ground-truth files are keyed by `messageID` and merged with the logs to
//! produce labeled [`CanonicalRecord`]s.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::label::LabelId;

/// Record type of a beacon received from another vehicle.
pub const RECEIVED_BEACON_TYPE: i64 = 3;

/// Absolute tolerance used when comparing transmitted and true kinematics.
pub const LABEL_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct RawMessage {
    pub rx: i64,
    pub send_time: f64,
    pub sender_pseudo: i64,
    pub message_id: i64,
    pub pos: [f64; 2],
    pub spd: [f64; 2],
    pub acl: [f64; 2],
    pub hed: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthRecord {
    pub message_id: i64,
    pub pos: [f64; 2],
    pub spd: [f64; 2],
    pub acl: [f64; 2],
    pub hed: [f64; 2],
}

/// One row of the canonical dataset table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub rx: i64,
    #[serde(rename = "senderPseudo")]
    pub sender_pseudo: i64,
    #[serde(rename = "sendTime")]
    pub send_time: f64,
    pub posx: f64,
    pub posy: f64,
    pub spdx: f64,
    pub spdy: f64,
    pub acl: f64,
    pub hed: f64,
    pub lab: LabelId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SkipReason {
    /// Well-formed record of a type other than a received beacon.
    OtherType(i64),
    Blank,
    Malformed(String),
    MissingField(&'static str),
    DuplicateId(i64),
    NoTruth(i64),
    ZeroHeading(i64),
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::OtherType(t) => write!(f, "record type {t} ignored"),
            SkipReason::Blank => f.write_str("blank line"),
            SkipReason::Malformed(e) => write!(f, "malformed json: {e}"),
            SkipReason::MissingField(name) => write!(f, "missing or invalid field '{name}'"),
            SkipReason::DuplicateId(id) => write!(f, "duplicate messageID {id}, first kept"),
            SkipReason::NoTruth(id) => write!(f, "messageID {id} has no ground-truth record"),
            SkipReason::ZeroHeading(id) => write!(f, "messageID {id} has a zero heading vector"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipEntry {
    /// 1-based line number for parse skips, 0 for merge-stage entries.
    pub line: usize,
    pub reason: SkipReason,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub entries: Vec<SkipEntry>,
}

impl SkipReport {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, line: usize, reason: SkipReason) {
        self.entries.push(SkipEntry { line, reason });
    }

    pub fn extend(&mut self, other: SkipReport) {
        self.entries.extend(other.entries);
    }

    pub fn write_to<W: Write>(&self, source: &str, mut w: W) -> Result<()> {
        for e in &self.entries {
            writeln!(w, "{source}\t{}\t{}", e.line, e.reason)?;
        }
        Ok(())
    }
}

fn field<'a>(obj: &'a Value, name: &'static str) -> Result<&'a Value, SkipReason> {
    obj.get(name).ok_or(SkipReason::MissingField(name))
}

fn int_field(obj: &Value, name: &'static str) -> Result<i64, SkipReason> {
    let v = field(obj, name)?;
    v.as_i64()
        .or_else(|| v.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
        .ok_or(SkipReason::MissingField(name))
}

fn num_field(obj: &Value, name: &'static str) -> Result<f64, SkipReason> {
    field(obj, name)?
        .as_f64()
        .filter(|f| f.is_finite())
        .ok_or(SkipReason::MissingField(name))
}

/// Reads a `[x, y, z]` array, dropping the elevation component.
fn vec2_field(obj: &Value, name: &'static str) -> Result<[f64; 2], SkipReason> {
    let arr = field(obj, name)?
        .as_array()
        .ok_or(SkipReason::MissingField(name))?;
    if arr.len() < 2 {
        return Err(SkipReason::MissingField(name));
    }
    let x = arr[0].as_f64().filter(|f| f.is_finite());
    let y = arr[1].as_f64().filter(|f| f.is_finite());
    match (x, y) {
        (Some(x), Some(y)) => Ok([x, y]),
        _ => Err(SkipReason::MissingField(name)),
    }
}

fn parse_lines<R, T, F>(stream: R, mut handle: F) -> Result<SkipReport>
where
    R: BufRead,
    F: FnMut(usize, Value) -> Result<Option<T>, SkipReason>,
{
    let mut report = SkipReport::default();
    for (idx, line) in stream.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            report.push(line_no, SkipReason::Blank);
            continue;
        }
        let value: Value = match serde_json::from_str(trimmed) {
            Ok(v) => v,
            Err(e) => {
                report.push(line_no, SkipReason::Malformed(e.to_string()));
                continue;
            }
        };
        if let Err(reason) = handle(line_no, value) {
            report.push(line_no, reason);
        }
    }
    Ok(report)
}

/// Parses a receiver's log stream. `rx` identifies the receiving vehicle
/// (VeReMi encodes it in the log file name, see [`receiver_from_filename`]).
pub fn parse_log_stream<R: BufRead>(stream: R, rx: i64) -> Result<(Vec<RawMessage>, SkipReport)> {
    let mut out = Vec::new();
    let report = parse_lines(stream, |_, obj| {
        let ty = int_field(&obj, "type")?;
        if ty != RECEIVED_BEACON_TYPE {
            return Err(SkipReason::OtherType(ty));
        }
        let send_time = num_field(&obj, "sendTime")?;
        if send_time < 0.0 {
            return Err(SkipReason::MissingField("sendTime"));
        }
        out.push(RawMessage {
            rx,
            send_time,
            sender_pseudo: int_field(&obj, "senderPseudo")?,
            message_id: int_field(&obj, "messageID")?,
            pos: vec2_field(&obj, "pos")?,
            spd: vec2_field(&obj, "spd")?,
            acl: vec2_field(&obj, "acl")?,
            hed: vec2_field(&obj, "hed")?,
        });
        Ok(Some(()))
    })?;
    Ok((out, report))
}

/// Parses a ground-truth stream into a map keyed by message id. Duplicate ids
/// keep the first record and are reported.
pub fn parse_ground_truth<R: BufRead>(
    stream: R,
) -> Result<(BTreeMap<i64, TruthRecord>, SkipReport)> {
    let mut map = BTreeMap::new();
    let report = parse_lines(stream, |_, obj| {
        let message_id = int_field(&obj, "messageID")?;
        let rec = TruthRecord {
            message_id,
            pos: vec2_field(&obj, "pos")?,
            spd: vec2_field(&obj, "spd")?,
            acl: vec2_field(&obj, "acl")?,
            hed: vec2_field(&obj, "hed")?,
        };
        if map.contains_key(&message_id) {
            return Err(SkipReason::DuplicateId(message_id));
        }
        map.insert(message_id, rec);
        Ok(Some(()))
    })?;
    Ok((map, report))
}

/// Extracts the receiver id from a VeReMi log name such as
/// `traceJSON-1011-1009-A0-25200-7.json` (the first number is the vehicle id).
pub fn receiver_from_filename(name: &str) -> Option<i64> {
    let stem = name.rsplit('/').next()?;
    let rest = stem.strip_prefix("traceJSON-")?;
    rest.split('-').next()?.parse().ok()
}

/// Direction of `(x, y)` in degrees, in `(-180, 180]`.
pub fn horizontal_angle(x: f64, y: f64) -> Result<f64> {
    if x == 0.0 && y == 0.0 {
        return Err(Error::UndefinedDirection { x, y });
    }
    let deg = y.atan2(x).to_degrees();
    // atan2 returns -180 for (negative x, -0.0)
    Ok(if deg <= -180.0 { deg + 360.0 } else { deg })
}

/// Minimal absolute difference between two angles in degrees, in `[0, 180]`.
pub fn circular_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Acceleration magnitude, negated when it points more than 90 degrees away
/// from the heading.
pub fn signed_acceleration(ax: f64, ay: f64, heading_deg: f64) -> f64 {
    let magnitude = ax.hypot(ay);
    match horizontal_angle(ax, ay) {
        Ok(angle) if circular_difference(heading_deg, angle) > 90.0 => -magnitude,
        Ok(_) => magnitude,
        Err(_) => 0.0,
    }
}

fn differs(a: f64, b: f64) -> bool {
    (a - b).abs() > LABEL_TOLERANCE
}

/// Joins messages with their truth records and assigns `scenario_label` to
/// every message whose transmitted position or speed deviates from truth.
pub fn merge_and_label(
    messages: &[RawMessage],
    truth: &BTreeMap<i64, TruthRecord>,
    scenario_label: LabelId,
) -> (Vec<CanonicalRecord>, SkipReport) {
    let mut report = SkipReport::default();
    let mut out = Vec::with_capacity(messages.len());
    for m in messages {
        let Some(t) = truth.get(&m.message_id) else {
            report.push(0, SkipReason::NoTruth(m.message_id));
            continue;
        };
        let Ok(hed) = horizontal_angle(m.hed[0], m.hed[1]) else {
            report.push(0, SkipReason::ZeroHeading(m.message_id));
            continue;
        };
        let falsified = differs(m.pos[0], t.pos[0])
            || differs(m.pos[1], t.pos[1])
            || differs(m.spd[0], t.spd[0])
            || differs(m.spd[1], t.spd[1]);
        out.push(CanonicalRecord {
            rx: m.rx,
            sender_pseudo: m.sender_pseudo,
            send_time: m.send_time,
            posx: m.pos[0],
            posy: m.pos[1],
            spdx: m.spd[0],
            spdy: m.spd[1],
            acl: signed_acceleration(m.acl[0], m.acl[1], hed),
            hed,
            lab: if falsified {
                scenario_label
            } else {
                LabelId::REGULAR
            },
        });
    }
    (out, report)
}

pub fn write_canonical<W: Write>(records: &[CanonicalRecord], w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_canonical<R: std::io::Read>(r: R) -> Result<Vec<CanonicalRecord>> {
    let mut reader = csv::Reader::from_reader(r);
    reader
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
