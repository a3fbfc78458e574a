//! Aggregation invariants over synthetic campaign results.

use mds_core::campaign::{
    accident_gain, accident_table, confusion_matrix, score_multi_label, score_single_label,
    MetricsReport, RunResult, WindowPrediction,
};
use mds_core::sim::CollisionEvent;
use mds_core::{LabelId, MisbehaviorKind, NUM_LABELS};
use proptest::prelude::*;

fn run(
    pair: usize,
    kind: MisbehaviorKind,
    defense: bool,
    act: u32,
    labels: &[(f64, u8)],
    pre: [usize; NUM_LABELS],
    crashed: bool,
) -> RunResult {
    RunResult {
        index: 2 * pair + defense as usize,
        pair,
        size: 4,
        attacker: pair % 3,
        kind,
        defense,
        repetition: 0,
        seed: pair as u64,
        activation_time: act,
        detector: pair % 3 + 1,
        predictions: labels
            .iter()
            .map(|&(dt, l)| WindowPrediction {
                time: act as f64 + dt,
                label: LabelId::new(l).unwrap(),
            })
            .collect(),
        pre_activation: pre,
        collisions: if crashed {
            vec![CollisionEvent {
                time: act as f64 + 3.0,
                front: 0,
                rear: 1,
            }]
        } else {
            Vec::new()
        },
        transitions: Vec::new(),
        min_command: -1.0,
        max_command: 1.0,
        warning_relapses: 0,
        replay_fallbacks: 0,
    }
}

type PairDraw = (usize, u32, Vec<(f64, u8)>, [usize; NUM_LABELS], bool, bool);

fn pair_draw() -> impl Strategy<Value = PairDraw> {
    (
        0usize..8,
        15u32..80,
        prop::collection::vec((-1.0f64..3.0, 0u8..9), 0..6),
        prop::array::uniform9(0usize..20),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(k, act, mut preds, pre, off_crash, on_crash)| {
            preds.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, act, preds, pre, off_crash, on_crash)
        })
}

fn campaign(draws: &[PairDraw]) -> Vec<RunResult> {
    let mut out = Vec::new();
    for (pair, (k, act, preds, pre, off_crash, on_crash)) in draws.iter().enumerate() {
        let kind = MisbehaviorKind::ALL[*k];
        out.push(run(
            pair,
            kind,
            false,
            *act,
            &[],
            [0; NUM_LABELS],
            *off_crash,
        ));
        out.push(run(pair, kind, true, *act, preds, *pre, *on_crash));
    }
    out
}

proptest! {
    #[test]
    fn report_does_not_depend_on_result_order(
        draws in prop::collection::vec(pair_draw(), 0..40),
        perm_seed in any::<u64>(),
    ) {
        let results = campaign(&draws);
        let mut shuffled = results.clone();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let a = MetricsReport::build(&results);
        let b = MetricsReport::build(&shuffled);
        prop_assert_eq!(a.to_text(), b.to_text());
        prop_assert_eq!(a.confusion, b.confusion);
        prop_assert_eq!(a.false_positives, b.false_positives);
    }

    #[test]
    fn accuracy_and_confusion_agree(draws in prop::collection::vec(pair_draw(), 1..40)) {
        let results = campaign(&draws);
        let report = MetricsReport::build(&results);
        for row in &report.per_kind {
            prop_assert!(row.single.hits >= row.multi.hits, "{}", row.group);
            prop_assert_eq!(row.single.n, row.multi.n);
        }
        let on: Vec<_> = results.iter().filter(|r| r.defense).collect();
        let multi = on.iter().filter(|r| score_multi_label(r)).count();
        let single = on.iter().filter(|r| score_single_label(r)).count();
        prop_assert!(single >= multi);
        let m = confusion_matrix(&results);
        let diag: usize = (1..NUM_LABELS).map(|i| m.counts[i][i]).sum();
        prop_assert_eq!(diag, multi);
        for (row, counts) in m.normalized().iter().zip(&m.counts) {
            let s: f64 = row.iter().sum();
            if counts.iter().sum::<usize>() == 0 {
                prop_assert_eq!(s, 0.0);
            } else {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gain_follows_its_definition(draws in prop::collection::vec(pair_draw(), 0..40)) {
        let results = campaign(&draws);
        let all = accident_table(&results).pop().unwrap();
        prop_assert_eq!(all.pairs, draws.len());
        let off = draws.iter().filter(|d| d.4).count();
        let on = draws.iter().filter(|d| d.5).count();
        match accident_gain(&results) {
            None => prop_assert_eq!(off, 0),
            Some(g) => {
                prop_assert!(off > 0);
                prop_assert!(g <= 1.0);
                prop_assert!((g - (off as f64 - on as f64) / off as f64).abs() < 1e-12);
                if on <= off {
                    prop_assert!(g >= 0.0);
                }
            }
        }
    }
}

#[test]
fn two_window_rule_examples() {
    let k = MisbehaviorKind::SpdOffset;
    let r = |labels: &[(f64, u8)]| run(0, k, true, 30, labels, [0; NUM_LABELS], false);
    assert!(score_single_label(&r(&[(0.0, 6)])));
    assert!(score_single_label(&r(&[(-0.5, 0), (0.3, 0), (0.8, 2)])));
    assert!(!score_single_label(&r(&[(0.3, 0), (0.8, 0), (1.3, 4)])));
    assert!(!score_single_label(&r(&[(-0.5, 3)])));
    assert!(!score_single_label(&r(&[])));
    // the straddling window ends after activation and counts as window one
    assert!(score_single_label(&r(&[(0.05, 1), (0.55, 0)])));
    assert!(!score_multi_label(&r(&[(0.1, 8), (0.6, 5)])));
    assert!(score_multi_label(&r(&[(0.1, 0), (0.6, 5)])));
}

#[test]
fn empty_campaign() {
    let report = MetricsReport::build(&[]);
    assert_eq!(report.false_positives, (0, 0));
    assert_eq!(accident_gain(&[]), None);
}
