//! Scoring and aggregation of campaign results.
//!
//! Everything is accumulated as integer counts, so the metrics do not depend
//! on the order of the results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{RunResult, TIME_EPS};
use crate::defense::{FsmState, TransitionCause};
use crate::error::Result;
use crate::label::{LabelId, MisbehaviorKind, NUM_LABELS};

/// Detection must happen within this many windows ending at or after
/// activation.
pub const SCORING_WINDOWS: usize = 2;
pub const Z_95: f64 = 1.96;

/// Labels of the first windows whose last beacon was sent at or after
/// activation.
pub fn scored_windows(r: &RunResult) -> Vec<LabelId> {
    let act = r.activation_time as f64;
    r.predictions
        .iter()
        .filter(|p| p.time >= act - TIME_EPS)
        .take(SCORING_WINDOWS)
        .map(|p| p.label)
        .collect()
}

pub fn score_single_label(r: &RunResult) -> bool {
    scored_windows(r).iter().any(|l| !l.is_regular())
}

/// First misbehavior prediction among the scored windows, if any.
pub fn first_detection(r: &RunResult) -> Option<LabelId> {
    scored_windows(r).into_iter().find(|l| !l.is_regular())
}

pub fn score_multi_label(r: &RunResult) -> bool {
    first_detection(r) == Some(r.kind.label())
}

/// Normal-approximation interval of a 0/1 sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub n: usize,
    pub hits: usize,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// `mean ± 1.96·s/√n` clipped to `[0, 1]`, `s` the sample standard
    /// deviation. Fewer than two samples give a degenerate interval.
    pub fn from_counts(hits: usize, n: usize) -> Self {
        if n == 0 {
            return Interval {
                n,
                hits,
                mean: f64::NAN,
                lo: f64::NAN,
                hi: f64::NAN,
            };
        }
        let mean = hits as f64 / n as f64;
        if n < 2 {
            return Interval {
                n,
                hits,
                mean,
                lo: mean,
                hi: mean,
            };
        }
        let (k, nf) = (hits as f64, n as f64);
        let var = k * (nf - k) / (nf * (nf - 1.0));
        let half = Z_95 * var.sqrt() / nf.sqrt();
        Interval {
            n,
            hits,
            mean,
            lo: (mean - half).max(0.0),
            hi: (mean + half).min(1.0),
        }
    }
}

pub fn confidence_interval(samples: &[bool]) -> Interval {
    Interval::from_counts(samples.iter().filter(|&&b| b).count(), samples.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyRow {
    /// Kind name, or `size/id` for the per-attacker table.
    pub group: String,
    pub single: Interval,
    pub multi: Interval,
}

/// Defense-on runs are the only ones with detector output.
fn scored_runs(results: &[RunResult]) -> impl Iterator<Item = &RunResult> {
    results.iter().filter(|r| r.defense)
}

fn accuracy_rows<K: Ord + Clone>(
    results: &[RunResult],
    key: impl Fn(&RunResult) -> K,
    name: impl Fn(&K) -> String,
) -> Vec<AccuracyRow> {
    let mut counts: BTreeMap<K, (usize, usize, usize)> = BTreeMap::new();
    for r in scored_runs(results) {
        let c = counts.entry(key(r)).or_default();
        c.0 += 1;
        c.1 += score_single_label(r) as usize;
        c.2 += score_multi_label(r) as usize;
    }
    counts
        .iter()
        .map(|(k, &(n, s, m))| AccuracyRow {
            group: name(k),
            single: Interval::from_counts(s, n),
            multi: Interval::from_counts(m, n),
        })
        .collect()
}

pub fn accuracy_per_kind(results: &[RunResult]) -> Vec<AccuracyRow> {
    accuracy_rows(results, |r| r.kind, |k| k.name().to_string())
}

pub fn accuracy_per_id(results: &[RunResult]) -> Vec<AccuracyRow> {
    accuracy_rows(
        results,
        |r| (r.size, r.attacker),
        |(s, id)| format!("{s}/{id}"),
    )
}

/// `(misbehavior predictions, windows)` completed strictly before activation
/// across all vehicles of the defense-on runs.
pub fn false_positive_report(results: &[RunResult]) -> (usize, usize) {
    scored_runs(results).fold((0, 0), |(fp, total), r| {
        (
            fp + r.pre_activation[1..].iter().sum::<usize>(),
            total + r.pre_activation.iter().sum::<usize>(),
        )
    })
}

/// Rows are the true label, columns the predicted one. Misbehavior rows use
/// the first misbehavior prediction among the scored windows, or regular when
/// there is none. The regular row uses pre-activation windows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NUM_LABELS]; NUM_LABELS],
}

impl ConfusionMatrix {
    /// Row-normalized; rows without samples stay zero.
    pub fn normalized(&self) -> [[f64; NUM_LABELS]; NUM_LABELS] {
        let mut out = [[0.0; NUM_LABELS]; NUM_LABELS];
        for (row, counts) in out.iter_mut().zip(&self.counts) {
            let total: usize = counts.iter().sum();
            if total > 0 {
                for (o, &c) in row.iter_mut().zip(counts) {
                    *o = c as f64 / total as f64;
                }
            }
        }
        out
    }
}

pub fn confusion_matrix(results: &[RunResult]) -> ConfusionMatrix {
    let mut counts = [[0; NUM_LABELS]; NUM_LABELS];
    for r in scored_runs(results) {
        let predicted = first_detection(r).unwrap_or(LabelId::REGULAR);
        counts[r.kind.label().index()][predicted.index()] += 1;
        for (c, &n) in counts[0].iter_mut().zip(&r.pre_activation) {
            *c += n;
        }
    }
    ConfusionMatrix { counts }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccidentRow {
    pub group: String,
    /// Matched defense off/on pairs.
    pub pairs: usize,
    pub off_accidents: usize,
    pub on_accidents: usize,
    pub off_fraction: f64,
    pub on_fraction: f64,
    /// `None` when no defense-off run crashed.
    pub gain: Option<f64>,
}

fn accident_row(group: String, pairs: usize, off: usize, on: usize) -> AccidentRow {
    let frac = |k: usize| {
        if pairs == 0 {
            f64::NAN
        } else {
            k as f64 / pairs as f64
        }
    };
    let (off_fraction, on_fraction) = (frac(off), frac(on));
    let gain = (off > 0).then(|| (off_fraction - on_fraction) / off_fraction);
    AccidentRow {
        group,
        pairs,
        off_accidents: off,
        on_accidents: on,
        off_fraction,
        on_fraction,
        gain,
    }
}

fn matched_pairs(results: &[RunResult]) -> Vec<(&RunResult, &RunResult)> {
    let mut by_pair: BTreeMap<usize, (Option<&RunResult>, Option<&RunResult>)> = BTreeMap::new();
    for r in results {
        let e = by_pair.entry(r.pair).or_default();
        if r.defense {
            e.1 = Some(r);
        } else {
            e.0 = Some(r);
        }
    }
    by_pair
        .into_values()
        .filter_map(|(off, on)| Some((off?, on?)))
        .collect()
}

/// Per-kind rows plus a final `all` row, over matched pairs.
pub fn accident_table(results: &[RunResult]) -> Vec<AccidentRow> {
    let mut per_kind: BTreeMap<MisbehaviorKind, (usize, usize, usize)> = BTreeMap::new();
    let mut all = (0, 0, 0);
    for (off, on) in matched_pairs(results) {
        let e = per_kind.entry(off.kind).or_default();
        for c in [e, &mut all] {
            c.0 += 1;
            c.1 += off.accident() as usize;
            c.2 += on.accident() as usize;
        }
    }
    let mut rows: Vec<_> = per_kind
        .into_iter()
        .map(|(k, (n, off, on))| accident_row(k.name().to_string(), n, off, on))
        .collect();
    rows.push(accident_row("all".into(), all.0, all.1, all.2));
    rows
}

/// `(off − on) / off` over matched pairs; `None` when nothing crashed with
/// the defense off.
pub fn accident_gain(results: &[RunResult]) -> Option<f64> {
    accident_table(results).pop().and_then(|r| r.gain)
}

/// Checks the transition log of one run: states only move forward, warnings
/// stay latched, and every vehicle enters GAP_CONTROL within
/// `size · 0.1 s + 0.2 s` of the first detection.
pub fn fsm_violations(r: &RunResult) -> Vec<String> {
    let mut out = Vec::new();
    let tag = format!("run {}", r.index);
    if !r.defense {
        if !r.transitions.is_empty() {
            out.push(format!("{tag}: transitions with the defense disabled"));
        }
        return out;
    }
    if r.warning_relapses > 0 {
        out.push(format!(
            "{tag}: {} beacons dropped a latched warning",
            r.warning_relapses
        ));
    }
    let mut state = vec![FsmState::Following; r.size];
    let mut last_time = vec![f64::NEG_INFINITY; r.size];
    let mut entered = vec![None; r.size];
    for t in &r.transitions {
        let v = t.vehicle;
        if v >= r.size {
            out.push(format!("{tag}: transition for unknown vehicle {v}"));
            continue;
        }
        let legal = matches!(
            (t.from, t.to),
            (FsmState::Following, FsmState::GapControl)
                | (FsmState::GapControl, FsmState::Downgrade)
        );
        if !legal || t.from != state[v] || t.time < last_time[v] {
            out.push(format!(
                "{tag}: vehicle {v} illegal transition {} -> {} at {}",
                t.from, t.to, t.time
            ));
        }
        if t.to == FsmState::GapControl {
            entered[v] = Some(t.time);
        }
        state[v] = t.to;
        last_time[v] = t.time;
    }
    let first = r
        .transitions
        .iter()
        .filter(|t| {
            matches!(
                t.cause,
                TransitionCause::Prediction | TransitionCause::Forced
            )
        })
        .map(|t| t.time)
        .reduce(f64::min);
    if let Some(t0) = first {
        let deadline = t0 + r.size as f64 * 0.1 + 0.2 + TIME_EPS;
        for (v, e) in entered.iter().enumerate() {
            match e {
                Some(t) if *t <= deadline => {}
                Some(t) => out.push(format!(
                    "{tag}: vehicle {v} warned at {t}, first detection {t0}"
                )),
                None => out.push(format!(
                    "{tag}: vehicle {v} never warned, first detection {t0}"
                )),
            }
        }
    } else if !r.transitions.is_empty() {
        out.push(format!("{tag}: transitions without a detection"));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub runs: usize,
    pub per_kind: Vec<AccuracyRow>,
    pub per_id: Vec<AccuracyRow>,
    pub confusion: ConfusionMatrix,
    pub false_positives: (usize, usize),
    pub accidents: Vec<AccidentRow>,
    pub fsm_violations: Vec<String>,
}

fn fmt_interval(i: &Interval) -> String {
    format!("{:.4} [{:.4}, {:.4}] n={}", i.mean, i.lo, i.hi, i.n)
}

fn fmt_gain(g: Option<f64>) -> String {
    g.map_or_else(|| "undefined".to_string(), |g| format!("{g:.4}"))
}

impl MetricsReport {
    pub fn build(results: &[RunResult]) -> Self {
        let mut sorted: Vec<&RunResult> = results.iter().collect();
        sorted.sort_by_key(|r| r.index);
        MetricsReport {
            runs: results.len(),
            per_kind: accuracy_per_kind(results),
            per_id: accuracy_per_id(results),
            confusion: confusion_matrix(results),
            false_positives: false_positive_report(results),
            accidents: accident_table(results),
            fsm_violations: sorted.into_iter().flat_map(fsm_violations).collect(),
        }
    }

    pub fn accuracy_of(&self, kind: MisbehaviorKind) -> Option<&AccuracyRow> {
        self.per_kind.iter().find(|r| r.group == kind.name())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "runs: {}", self.runs);
        for (title, rows) in [
            ("accuracy per kind", &self.per_kind),
            ("accuracy per size/id", &self.per_id),
        ] {
            let _ = writeln!(s, "\n{title} (single label | multi label)");
            for r in rows {
                let _ = writeln!(
                    s,
                    "  {:<13} {} | {}",
                    r.group,
                    fmt_interval(&r.single),
                    fmt_interval(&r.multi)
                );
            }
        }
        let _ = writeln!(s, "\nconfusion matrix (rows: truth, columns: prediction)");
        for row in self.confusion.normalized() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(s, "  {}", cells.join(" "));
        }
        let (fp, total) = self.false_positives;
        let _ = writeln!(
            s,
            "\nfalse positives before activation: {fp} of {total} windows"
        );
        let _ = writeln!(s, "\naccidents (pairs, defense off, defense on, gain)");
        for a in &self.accidents {
            let _ = writeln!(
                s,
                "  {:<13} {:>4} {:.4} {:.4} {}",
                a.group,
                a.pairs,
                a.off_fraction,
                a.on_fraction,
                fmt_gain(a.gain)
            );
        }
        let _ = writeln!(s, "\nfsm violations: {}", self.fsm_violations.len());
        for v in &self.fsm_violations {
            let _ = writeln!(s, "  {v}");
        }
        s
    }

    /// Writes `report.txt` and one delimited table per metric.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), self.to_text())?;
        for (file, rows) in [
            ("accuracy_per_kind.csv", &self.per_kind),
            ("accuracy_per_id.csv", &self.per_id),
        ] {
            let mut w = csv::Writer::from_path(dir.join(file))?;
            w.write_record([
                "group",
                "n",
                "single_mean",
                "single_lo",
                "single_hi",
                "multi_mean",
                "multi_lo",
                "multi_hi",
            ])?;
            for r in rows {
                w.write_record([
                    r.group.clone(),
                    r.single.n.to_string(),
                    r.single.mean.to_string(),
                    r.single.lo.to_string(),
                    r.single.hi.to_string(),
                    r.multi.mean.to_string(),
                    r.multi.lo.to_string(),
                    r.multi.hi.to_string(),
                ])?;
            }
            w.flush()?;
        }
        let mut w = csv::Writer::from_path(dir.join("confusion.csv"))?;
        let mut header = vec!["truth".to_string()];
        header.extend((0..NUM_LABELS).map(|l| format!("pred_{l}")));
        w.write_record(&header)?;
        for (l, row) in self.confusion.normalized().iter().enumerate() {
            let mut rec = vec![l.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("false_positives.csv"))?;
        w.write_record(["misbehavior_predictions", "windows"])?;
        w.write_record([
            self.false_positives.0.to_string(),
            self.false_positives.1.to_string(),
        ])?;
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("accidents.csv"))?;
        w.write_record([
            "group",
            "pairs",
            "off_accidents",
            "on_accidents",
            "off_fraction",
            "on_fraction",
            "gain",
        ])?;
        for a in &self.accidents {
            w.write_record([
                a.group.clone(),
                a.pairs.to_string(),
                a.off_accidents.to_string(),
                a.on_accidents.to_string(),
                a.off_fraction.to_string(),
                a.on_fraction.to_string(),
                a.gain
                    .map(|g| g.to_string())
                    .unwrap_or_else(|| "undefined".into()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::WindowPrediction;
    use crate::sim::{CollisionEvent, TransitionEvent};

    fn run(kind: MisbehaviorKind, labels: &[(f64, u8)]) -> RunResult {
        RunResult {
            index: 0,
            pair: 0,
            size: 4,
            attacker: 1,
            kind,
            defense: true,
            repetition: 0,
            seed: 0,
            activation_time: 30,
            detector: 2,
            predictions: labels
                .iter()
                .map(|&(time, l)| WindowPrediction {
                    time,
                    label: LabelId::new(l).unwrap(),
                })
                .collect(),
            pre_activation: [0; NUM_LABELS],
            collisions: vec![],
            transitions: vec![],
            min_command: 0.0,
            max_command: 0.0,
            warning_relapses: 0,
            replay_fallbacks: 0,
        }
    }

    #[test]
    fn two_window_rule() {
        let k = MisbehaviorKind::EventualStop;
        assert!(score_single_label(&run(k, &[(29.5, 3), (30.2, 6)])));
        assert!(!score_single_label(&run(
            k,
            &[(30.2, 0), (30.7, 0), (31.2, 4)]
        )));
        assert!(score_single_label(&run(k, &[(30.0, 0), (30.5, 2)])));
        assert!(!score_single_label(&run(k, &[(29.5, 6)])));
        assert!(!score_single_label(&run(k, &[])));
        assert!(score_multi_label(&run(
            MisbehaviorKind::PosOffset,
            &[(30.1, 0), (30.6, 3)]
        )));
        assert!(!score_multi_label(&run(
            MisbehaviorKind::Disruptive,
            &[(30.1, 8), (30.6, 7)]
        )));
        assert!(!score_multi_label(&run(
            MisbehaviorKind::Disruptive,
            &[(30.1, 0), (30.6, 0)]
        )));
    }

    #[test]
    fn intervals() {
        let all = confidence_interval(&[true; 10]);
        assert_eq!((all.mean, all.lo, all.hi), (1.0, 1.0, 1.0));
        let half: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let h = confidence_interval(&half);
        assert_eq!(h.mean, 0.5);
        assert!(
            (h.lo - 0.4015).abs() < 5e-4 && (h.hi - 0.5985).abs() < 5e-4,
            "{h:?}"
        );
        let one = confidence_interval(&[true]);
        assert_eq!((one.lo, one.hi), (1.0, 1.0));
        assert!(confidence_interval(&[]).mean.is_nan());
    }

    #[test]
    fn gain_cases() {
        let mk = |pair, defense, crash: bool| {
            let mut r = run(MisbehaviorKind::RandomPos, &[]);
            r.pair = pair;
            r.defense = defense;
            if crash {
                r.collisions.push(CollisionEvent {
                    time: 40.0,
                    front: 1,
                    rear: 2,
                });
            }
            r
        };
        let mut rs = Vec::new();
        for p in 0..10 {
            rs.push(mk(p, false, p < 2));
            rs.push(mk(p, true, false));
        }
        assert_eq!(accident_gain(&rs), Some(1.0));
        let none: Vec<_> = (0..4)
            .flat_map(|p| [mk(p, false, false), mk(p, true, false)])
            .collect();
        assert_eq!(accident_gain(&none), None);
        assert_eq!(false_positive_report(&[]), (0, 0));
    }

    #[test]
    fn confusion_diagonal_matches_multi_label() {
        let rs = vec![
            run(MisbehaviorKind::ConstPos, &[(30.1, 1)]),
            run(MisbehaviorKind::ConstPos, &[(30.1, 2)]),
            run(MisbehaviorKind::SpdOffset, &[(30.1, 0), (30.6, 0)]),
        ];
        let cm = confusion_matrix(&rs);
        let diag: usize = (1..NUM_LABELS).map(|l| cm.counts[l][l]).sum();
        let multi = rs.iter().filter(|r| score_multi_label(r)).count();
        assert_eq!(diag, multi);
        let n = cm.normalized();
        assert_eq!(n[1][1], 0.5);
        assert_eq!(n[5][0], 1.0);
        assert!(n[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fsm_checks() {
        let ev = |time, vehicle, from, to, cause| TransitionEvent {
            time,
            vehicle,
            from,
            to,
            cause,
        };
        use FsmState::*;
        let mut r = run(MisbehaviorKind::ConstPos, &[]);
        r.transitions = vec![
            ev(31.0, 2, Following, GapControl, TransitionCause::Prediction),
            ev(31.05, 0, Following, GapControl, TransitionCause::Warning),
            ev(31.05, 0, GapControl, Downgrade, TransitionCause::GapReached),
            ev(31.07, 1, Following, GapControl, TransitionCause::Warning),
            ev(31.09, 3, Following, GapControl, TransitionCause::Warning),
            ev(50.0, 2, GapControl, Downgrade, TransitionCause::GapReached),
        ];
        assert!(fsm_violations(&r).is_empty(), "{:?}", fsm_violations(&r));
        let mut late = r.clone();
        late.transitions[4].time = 32.0;
        assert_eq!(fsm_violations(&late).len(), 1);
        let mut back = r.clone();
        back.transitions
            .push(ev(60.0, 2, Downgrade, Following, TransitionCause::Warning));
        assert_eq!(fsm_violations(&back).len(), 1);
        let mut off = r;
        off.defense = false;
        assert_eq!(fsm_violations(&off).len(), 1);
    }
}
