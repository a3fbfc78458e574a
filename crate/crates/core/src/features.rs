//! Jumping-window delta embedding, class balancing, standard scaling and the
//! train/validation split.
//!
//! A window is five consecutive beacons from one sender as seen by one
//! receiver. The first beacon is the reference: rows 1..=4 hold the position,
//! speed and acceleration of each later beacon minus the reference, plus the
//! time elapsed since the previous beacon.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::CanonicalRecord;
use crate::label::LabelId;

/// Beacons per jumping window.
pub const WINDOW_LEN: usize = 5;
/// Delta rows per window.
pub const ROWS: usize = WINDOW_LEN - 1;
/// Feature columns: dt, dposx, dposy, dspdx, dspdy, dacl.
pub const FEATURES: usize = 6;
pub const FEATURE_NAMES: [&str; FEATURES] = ["dt", "dposx", "dposy", "dspdx", "dspdy", "dacl"];

/// Fraction of windows assigned to validation.
pub const VALIDATION_FRACTION: f64 = 0.33;

pub type Rows = [[f64; FEATURES]; ROWS];

/// Kinematic content of one beacon as used by the embedding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub send_time: f64,
    pub posx: f64,
    pub posy: f64,
    pub spdx: f64,
    pub spdy: f64,
    pub acl: f64,
}

impl From<&CanonicalRecord> for Sample {
    fn from(r: &CanonicalRecord) -> Self {
        Sample {
            send_time: r.send_time,
            posx: r.posx,
            posy: r.posy,
            spdx: r.spdx,
            spdy: r.spdy,
            acl: r.acl,
        }
    }
}

impl Sample {
    /// Delta row of `self` against the window reference `first`, with `dt`
    /// measured from the previous beacon `prev`.
    pub fn delta_row(&self, prev: &Sample, first: &Sample) -> [f64; FEATURES] {
        [
            self.send_time - prev.send_time,
            self.posx - first.posx,
            self.posy - first.posy,
            self.spdx - first.spdx,
            self.spdy - first.spdy,
            self.acl - first.acl,
        ]
    }
}

/// Embeds five time-ordered samples. Returns `None` on a time regression.
pub fn embed(samples: &[Sample; WINDOW_LEN]) -> Option<Rows> {
    let mut rows = [[0.0; FEATURES]; ROWS];
    for k in 1..WINDOW_LEN {
        if samples[k].send_time < samples[k - 1].send_time {
            return None;
        }
        rows[k - 1] = samples[k].delta_row(&samples[k - 1], &samples[0]);
    }
    Some(rows)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowOrigin {
    pub rx: i64,
    pub sender: i64,
    pub first_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureWindow {
    pub rows: Rows,
    pub label: LabelId,
    pub origin: WindowOrigin,
}

/// A chunk dropped by [`make_windows`] because its timestamps go backwards.
#[derive(Clone, Debug, PartialEq)]
pub struct RejectedWindow {
    pub origin: WindowOrigin,
    pub chunk: usize,
}

/// Groups records by `(rx, senderPseudo)`, sorts each group by send time and
/// drops the tail so every group length is a multiple of [`WINDOW_LEN`].
pub fn group_sort_trim(records: &[CanonicalRecord]) -> Vec<Vec<CanonicalRecord>> {
    let mut groups: BTreeMap<(i64, i64), Vec<CanonicalRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.rx, r.sender_pseudo))
            .or_default()
            .push(r.clone());
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort_by(|a, b| a.send_time.total_cmp(&b.send_time));
            let keep = g.len() - g.len() % WINDOW_LEN;
            g.truncate(keep);
            g
        })
        .collect()
}

/// Cuts a grouped, time-sorted sequence into non-overlapping windows. The
/// window label is the label of its last beacon.
pub fn make_windows(group: &[CanonicalRecord]) -> (Vec<FeatureWindow>, Vec<RejectedWindow>) {
    let mut windows = Vec::with_capacity(group.len() / WINDOW_LEN);
    let mut rejected = Vec::new();
    for (chunk_idx, chunk) in group.chunks_exact(WINDOW_LEN).enumerate() {
        let samples: [Sample; WINDOW_LEN] = std::array::from_fn(|k| Sample::from(&chunk[k]));
        let origin = WindowOrigin {
            rx: chunk[0].rx,
            sender: chunk[0].sender_pseudo,
            first_time: chunk[0].send_time,
        };
        match embed(&samples) {
            Some(rows) => windows.push(FeatureWindow {
                rows,
                label: chunk[WINDOW_LEN - 1].lab,
                origin,
            }),
            None => rejected.push(RejectedWindow {
                origin,
                chunk: chunk_idx,
            }),
        }
    }
    (windows, rejected)
}

/// Full record-to-window pass.
pub fn windows_from_records(
    records: &[CanonicalRecord],
) -> (Vec<FeatureWindow>, Vec<RejectedWindow>) {
    let mut windows = Vec::new();
    let mut rejected = Vec::new();
    for g in group_sort_trim(records) {
        let (w, r) = make_windows(&g);
        windows.extend(w);
        rejected.extend(r);
    }
    (windows, rejected)
}

/// Keeps every misbehavior window and down-samples regular windows to twice
/// the mean misbehavior-class size. Input order is preserved.
pub fn balance(windows: &[FeatureWindow], seed: u64) -> Result<Vec<FeatureWindow>> {
    let mut class_counts = [0usize; crate::label::NUM_LABELS];
    for w in windows {
        class_counts[w.label.index()] += 1;
    }
    if class_counts[0] == 0 {
        return Err(Error::InvalidInput(
            "cannot balance: no regular windows".into(),
        ));
    }
    let present: Vec<usize> = class_counts[1..]
        .iter()
        .copied()
        .filter(|&c| c > 0)
        .collect();
    if present.is_empty() {
        return Ok(windows.to_vec());
    }
    let mean = present.iter().sum::<usize>() as f64 / present.len() as f64;
    let target = (2.0 * mean).round() as usize;
    let regular_idx: Vec<usize> = windows
        .iter()
        .enumerate()
        .filter(|(_, w)| w.label.is_regular())
        .map(|(i, _)| i)
        .collect();
    let mut keep = vec![true; windows.len()];
    if regular_idx.len() > target {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &i in &regular_idx {
            keep[i] = false;
        }
        for &i in regular_idx.choose_multiple(&mut rng, target) {
            keep[i] = true;
        }
    }
    Ok(windows
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(w, _)| w.clone())
        .collect())
}

/// Per-column standardization parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalerParams {
    pub mean: [f64; FEATURES],
    pub std: [f64; FEATURES],
}

impl ScalerParams {
    pub fn identity() -> Self {
        ScalerParams {
            mean: [0.0; FEATURES],
            std: [1.0; FEATURES],
        }
    }

    pub fn transform_row(&self, row: &[f64; FEATURES]) -> [f64; FEATURES] {
        std::array::from_fn(|c| (row[c] - self.mean[c]) / self.std[c])
    }

    pub fn inverse_row(&self, row: &[f64; FEATURES]) -> [f64; FEATURES] {
        std::array::from_fn(|c| row[c] * self.std[c] + self.mean[c])
    }

    pub fn transform(&self, rows: &Rows) -> Rows {
        std::array::from_fn(|r| self.transform_row(&rows[r]))
    }

    pub fn inverse(&self, rows: &Rows) -> Rows {
        std::array::from_fn(|r| self.inverse_row(&rows[r]))
    }

    /// Writes `mean[6]; std[6]` on one line with 17 significant digits.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let fmt = |v: &[f64; FEATURES]| {
            v.iter()
                .map(|x| format!("{x:.16e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(w, "{}; {}", fmt(&self.mean), fmt(&self.std))?;
        Ok(())
    }

    pub fn read_text<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let (m, s) = text
            .trim()
            .split_once(';')
            .ok_or_else(|| Error::Format("scaler file needs 'mean; std'".into()))?;
        let parse = |part: &str| -> Result<[f64; FEATURES]> {
            let vals: Vec<f64> = part
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Format(e.to_string())))
                .collect::<Result<_>>()?;
            vals.try_into()
                .map_err(|v: Vec<f64>| Error::Format(format!("expected 6 values, got {}", v.len())))
        };
        let params = ScalerParams {
            mean: parse(m)?,
            std: parse(s)?,
        };
        if params.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Format("scaler std must be positive".into()));
        }
        Ok(params)
    }
}

/// Columns whose spread is negligible next to their magnitude are treated as
/// constant (std 1), so rounding noise is not blown up.
fn is_degenerate(std: f64, mean: f64) -> bool {
    std == 0.0 || std <= 1e-9 * mean.abs()
}

/// Fits column means and population standard deviations over every row of
/// every window. Returns the indices of degenerate columns alongside.
pub fn fit_scaler(windows: &[FeatureWindow]) -> Result<(ScalerParams, Vec<usize>)> {
    let n = windows.len() * ROWS;
    if n < 2 {
        return Err(Error::InvalidInput("scaler needs at least two rows".into()));
    }
    let mut mean = [0.0; FEATURES];
    for w in windows {
        for row in &w.rows {
            for c in 0..FEATURES {
                mean[c] += row[c];
            }
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = [0.0; FEATURES];
    for w in windows {
        for row in &w.rows {
            for c in 0..FEATURES {
                let d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
    }
    let mut std = [0.0; FEATURES];
    let mut degenerate = Vec::new();
    for c in 0..FEATURES {
        let s = (var[c] / n as f64).sqrt();
        if !s.is_finite() {
            return Err(Error::NonFinite("scaler fit"));
        }
        if is_degenerate(s, mean[c]) {
            std[c] = 1.0;
            degenerate.push(c);
        } else {
            std[c] = s;
        }
    }
    Ok((ScalerParams { mean, std }, degenerate))
}

pub fn apply_scaler(window: &FeatureWindow, params: &ScalerParams) -> FeatureWindow {
    FeatureWindow {
        rows: params.transform(&window.rows),
        ..window.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<FeatureWindow>,
    pub val: Vec<FeatureWindow>,
    pub fraction: f64,
    pub seed: u64,
}

/// Number of validation windows for `n` windows: `ceil(fraction * n)`.
pub fn validation_count(n: usize, fraction: f64) -> usize {
    // guard against 0.33 * 100 = 33.000000000000004
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Seeded shuffle, then the first `ceil(fraction * n)` windows go to validation.
pub fn split(windows: &[FeatureWindow], fraction: f64, seed: u64) -> Result<SplitDataset> {
    if windows.len() < 3 {
        return Err(Error::InvalidInput(
            "split needs at least three windows".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..windows.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = validation_count(windows.len(), fraction);
    let val = idx[..n_val].iter().map(|&i| windows[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| windows[i].clone()).collect();
    Ok(SplitDataset {
        train,
        val,
        fraction,
        seed,
    })
}

const TENSOR_MAGIC: &[u8; 4] = b"MDSW";
const TENSOR_VERSION: u32 = 1;

/// Writes windows as `MDSW`, version (u32), rank (u32), dims (u64 each), then
/// row-major little-endian float64 data. Labels go to a separate text stream,
/// one per line.
pub fn write_tensor<W: Write, L: Write>(
    windows: &[FeatureWindow],
    mut data: W,
    mut labels: L,
) -> Result<()> {
    data.write_all(TENSOR_MAGIC)?;
    data.write_all(&TENSOR_VERSION.to_le_bytes())?;
    data.write_all(&3u32.to_le_bytes())?;
    for d in [windows.len(), ROWS, FEATURES] {
        data.write_all(&(d as u64).to_le_bytes())?;
    }
    for w in windows {
        for row in &w.rows {
            for v in row {
                data.write_all(&v.to_le_bytes())?;
            }
        }
        writeln!(labels, "{}", w.label)?;
    }
    data.flush()?;
    labels.flush()?;
    Ok(())
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated tensor file: {e}")))?;
    Ok(buf)
}

pub fn read_tensor<R: Read, L: Read>(mut data: R, mut labels: L) -> Result<Vec<FeatureWindow>> {
    if &read_exact::<4, _>(&mut data)? != TENSOR_MAGIC {
        return Err(Error::Format("not a window tensor file".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut data)?);
    let rank = u32::from_le_bytes(read_exact(&mut data)?);
    if version != TENSOR_VERSION || rank != 3 {
        return Err(Error::Format(format!(
            "unsupported tensor version {version} rank {rank}"
        )));
    }
    let mut dims = [0u64; 3];
    for d in &mut dims {
        *d = u64::from_le_bytes(read_exact(&mut data)?);
    }
    if dims[1] as usize != ROWS || dims[2] as usize != FEATURES {
        return Err(Error::Shape(format!(
            "expected [n, {ROWS}, {FEATURES}], got {dims:?}"
        )));
    }
    let mut text = String::new();
    labels.read_to_string(&mut text)?;
    let labels: Vec<LabelId> = text
        .lines()
        .map(|l| {
            l.trim()
                .parse::<u8>()
                .map_err(|e| Error::Format(e.to_string()))
                .and_then(LabelId::new)
        })
        .collect::<Result<_>>()?;
    if labels.len() as u64 != dims[0] {
        return Err(Error::Shape(format!(
            "{} labels for {} windows",
            labels.len(),
            dims[0]
        )));
    }
    let mut out = Vec::with_capacity(labels.len());
    for label in labels {
        let mut rows = [[0.0; FEATURES]; ROWS];
        for row in &mut rows {
            for v in row.iter_mut() {
                *v = f64::from_le_bytes(read_exact(&mut data)?);
            }
        }
        out.push(FeatureWindow {
            rows,
            label,
            origin: WindowOrigin {
                rx: -1,
                sender: -1,
                first_time: f64::NAN,
            },
        });
    }
    Ok(out)
}

/// Output of the full offline pipeline on a record set.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSet {
    pub split: SplitDataset,
    pub scaler: ScalerParams,
    pub degenerate: Vec<usize>,
    /// Windows before balancing, per label.
    pub raw_counts: [usize; crate::label::NUM_LABELS],
    pub rejected: Vec<RejectedWindow>,
}

/// Windowing, balancing, scaling fitted on the balanced set, then the split.
pub fn prepare_training_set(records: &[CanonicalRecord], seed: u64) -> Result<PreparedSet> {
    let (windows, rejected) = windows_from_records(records);
    let mut raw_counts = [0usize; crate::label::NUM_LABELS];
    for w in &windows {
        raw_counts[w.label.index()] += 1;
    }
    let balanced = balance(&windows, seed)?;
    let (scaler, degenerate) = fit_scaler(&balanced)?;
    let scaled: Vec<FeatureWindow> = balanced.iter().map(|w| apply_scaler(w, &scaler)).collect();
    let split = split(&scaled, VALIDATION_FRACTION, seed)?;
    Ok(PreparedSet {
        split,
        scaler,
        degenerate,
        raw_counts,
        rejected,
    })
}
