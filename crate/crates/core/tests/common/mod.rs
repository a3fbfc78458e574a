//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use mds_core::features::{Rows, ScalerParams};
use mds_core::ingest::CanonicalRecord;
use mds_core::lstm::network::{mean_loss, TENSOR_NAMES};
use mds_core::lstm::{loss_and_gradients, DetectorModel, LstmParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central finite-difference step.
pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so entries whose true gradient
/// is numerically zero are compared on an absolute scale.
pub const FLOOR: f64 = 1e-6;

pub struct CheckReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

pub fn gradient_check(seed: u64, hidden: usize, dense: usize, n: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = LstmParams::init(hidden, dense, seed);
    let xs: Vec<Rows> = (0..n)
        .map(|_| std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.5..1.5))))
        .collect();
    let ys: Vec<usize> = (0..n).map(|_| rng.gen_range(0..9)).collect();
    let (_, grad) = loss_and_gradients(&params, &xs, &ys).unwrap();

    let mut report = CheckReport {
        checked: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    let mut probe = params.clone();
    for (t, name) in TENSOR_NAMES.iter().enumerate() {
        let len = params.tensors()[t].data.len();
        for k in 0..len {
            let orig = params.tensors()[t].data[k];
            probe.tensors_mut()[t].data[k] = orig + STEP;
            let up = mean_loss(&probe, &xs, &ys);
            probe.tensors_mut()[t].data[k] = orig - STEP;
            let down = mean_loss(&probe, &xs, &ys);
            probe.tensors_mut()[t].data[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grad.tensors()[t].data[k];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(FLOOR);
            if rel > report.worst {
                report.worst = rel;
                report.worst_at = format!("{name}[{k}] analytic {analytic:e} numeric {numeric:e}");
            }
            report.checked += 1;
        }
    }
    report
}

/// Untrained model with a random non-trivial scaler.
pub fn random_model(seed: u64, hidden: usize) -> DetectorModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    DetectorModel {
        params: LstmParams::init(hidden, 12, seed),
        scaler: ScalerParams {
            mean: std::array::from_fn(|_| rng.gen_range(-2.0..2.0)),
            std: std::array::from_fn(|_| rng.gen_range(0.5..3.0)),
        },
    }
}

/// Tolerance of the naive pipeline oracle.
pub const ORACLE_TOL: f64 = 1e-12;

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= ORACLE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// A naive window: delta rows, label of the last beacon, `(rx, sender)`.
pub type NaiveWindow = (Vec<Vec<f64>>, u8, (i64, i64));

/// Window rows, label and `(rx, sender)` computed with plain loops: collect
/// each pair's records by linear scan, insertion-sort by time, cut groups of
/// five, subtract the first beacon.
pub fn naive_windows(records: &[CanonicalRecord]) -> Vec<NaiveWindow> {
    let mut keys: Vec<(i64, i64)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.rx, r.sender_pseudo)) {
            keys.push((r.rx, r.sender_pseudo));
        }
    }
    keys.sort();
    let mut out = Vec::new();
    for key in keys {
        let mut g: Vec<&CanonicalRecord> = Vec::new();
        for r in records {
            if (r.rx, r.sender_pseudo) == key {
                let mut at = g.len();
                while at > 0 && g[at - 1].send_time > r.send_time {
                    at -= 1;
                }
                g.insert(at, r);
            }
        }
        let full = g.len() / 5;
        for w in 0..full {
            let c = &g[w * 5..w * 5 + 5];
            let mut rows = Vec::new();
            for k in 1..5 {
                rows.push(vec![
                    c[k].send_time - c[k - 1].send_time,
                    c[k].posx - c[0].posx,
                    c[k].posy - c[0].posy,
                    c[k].spdx - c[0].spdx,
                    c[k].spdy - c[0].spdy,
                    c[k].acl - c[0].acl,
                ]);
            }
            out.push((rows, c[4].lab.value(), key));
        }
    }
    out
}

/// Column mean and population std over all rows, with the constant-column
/// rule: zero or negligible spread becomes 1.
pub fn naive_scaler(windows: &[NaiveWindow]) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; 6];
    let mut std = vec![0.0; 6];
    for c in 0..6 {
        let col: Vec<f64> = windows
            .iter()
            .flat_map(|w| w.0.iter().map(move |r| r[c]))
            .collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
        let s = v.sqrt();
        mean[c] = m;
        std[c] = if s == 0.0 || s <= 1e-9 * m.abs() {
            1.0
        } else {
            s
        };
    }
    (mean, std)
}
