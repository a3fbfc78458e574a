//! Streaming inference must label a beacon trace exactly as batch windowing
//! followed by a forward pass does.

mod common;

use mds_core::features::{make_windows, Sample};
use mds_core::ingest::CanonicalRecord;
use mds_core::lstm::{Observation, OnlineWindowState};
use mds_core::LabelId;
use proptest::prelude::*;

fn as_record(s: &Sample) -> CanonicalRecord {
    CanonicalRecord {
        rx: 1,
        sender_pseudo: 0,
        send_time: s.send_time,
        posx: s.posx,
        posy: s.posy,
        spdx: s.spdx,
        spdy: s.spdy,
        acl: s.acl,
        hed: 0.0,
        lab: LabelId::REGULAR,
    }
}

/// Non-decreasing send times with irregular gaps and random kinematics.
fn trace() -> impl Strategy<Value = Vec<Sample>> {
    prop::collection::vec(
        (
            0.0f64..0.3,
            -50.0f64..50.0,
            -2.0f64..2.0,
            -30.0f64..30.0,
            -1.0f64..1.0,
            -6.0f64..2.5,
        ),
        0..60,
    )
    .prop_map(|steps| {
        let mut t = 0.0;
        let mut x = 1000.0;
        steps
            .into_iter()
            .map(|(dt, dx, y, vx, vy, a)| {
                t += dt;
                x += dx;
                Sample {
                    send_time: t,
                    posx: x,
                    posy: 5.2 + y,
                    spdx: vx,
                    spdy: vy,
                    acl: a,
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn online_labels_equal_batch_labels(samples in trace(), seed in 0u64..1000, hidden in 2usize..10) {
        let model = common::random_model(seed, hidden);

        let mut state = OnlineWindowState::new();
        let mut online = Vec::new();
        for s in &samples {
            match state.observe(*s, &model).unwrap() {
                Observation::Prediction(l) => online.push(l),
                Observation::Pending => {}
                Observation::Discarded => prop_assert!(false, "monotone trace discarded"),
            }
        }
        prop_assert_eq!(state.count(), samples.len() % 5);

        let records: Vec<_> = samples.iter().map(as_record).collect();
        let (windows, rejected) = make_windows(&records);
        prop_assert!(rejected.is_empty());
        let batch: Vec<_> = windows.iter().map(|w| model.classify(&w.rows).unwrap()).collect();
        prop_assert_eq!(online, batch);
    }

    #[test]
    fn time_regression_drops_only_the_partial_window(samples in trace(), cut in 1usize..4) {
        prop_assume!(samples.len() >= 10);
        let model = common::random_model(3, 4);
        let mut state = OnlineWindowState::new();
        for s in &samples[..5 + cut] {
            state.observe(*s, &model).unwrap();
        }
        prop_assert_eq!(state.count(), cut);
        let mut back = samples[4 + cut];
        back.send_time -= 1.0;
        prop_assert_eq!(state.observe(back, &model).unwrap(), Observation::Discarded);
        prop_assert_eq!(state.count(), 0);
    }
}
