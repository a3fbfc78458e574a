//! Per-sender jumping-window state for inference on a live beacon stream.

use super::DetectorModel;
use crate::error::Result;
use crate::features::{Rows, Sample, FEATURES, ROWS};
use crate::label::LabelId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    /// Beacon absorbed, window not complete yet.
    Pending,
    /// Fifth beacon of a window; the window has been classified.
    Prediction(LabelId),
    /// Send time went backwards; the partial window was dropped.
    Discarded,
}

/// The first beacon of the current window and the scaled delta rows
/// accumulated since.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OnlineWindowState {
    reference: Option<Sample>,
    prev: Option<Sample>,
    rows: Vec<[f64; FEATURES]>,
}

impl OnlineWindowState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Beacons absorbed into the current window, 0 to 4.
    pub fn count(&self) -> usize {
        match self.reference {
            None => 0,
            Some(_) => 1 + self.rows.len(),
        }
    }

    pub fn clear(&mut self) {
        self.reference = None;
        self.prev = None;
        self.rows.clear();
    }

    pub fn observe(&mut self, beacon: Sample, model: &DetectorModel) -> Result<Observation> {
        let (Some(first), Some(prev)) = (self.reference, self.prev) else {
            self.reference = Some(beacon);
            self.prev = Some(beacon);
            return Ok(Observation::Pending);
        };
        if beacon.send_time < prev.send_time {
            self.clear();
            return Ok(Observation::Discarded);
        }
        self.rows
            .push(model.scaler.transform_row(&beacon.delta_row(&prev, &first)));
        self.prev = Some(beacon);
        if self.rows.len() < ROWS {
            return Ok(Observation::Pending);
        }
        let window: Rows = std::array::from_fn(|r| self.rows[r]);
        self.clear();
        Ok(Observation::Prediction(model.classify_scaled(&window)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ScalerParams;
    use crate::lstm::LstmParams;

    fn sample(t: f64, x: f64) -> Sample {
        Sample {
            send_time: t,
            posx: x,
            posy: 5.2,
            spdx: 27.8,
            spdy: 0.0,
            acl: 0.0,
        }
    }

    fn model() -> DetectorModel {
        DetectorModel {
            params: LstmParams::init(4, 6, 1),
            scaler: ScalerParams::identity(),
        }
    }

    #[test]
    fn fifth_beacon_predicts_and_resets() {
        let m = model();
        let mut s = OnlineWindowState::new();
        for k in 0..4 {
            assert_eq!(
                s.observe(sample(k as f64 * 0.1, k as f64), &m).unwrap(),
                Observation::Pending
            );
        }
        assert_eq!(s.count(), 4);
        assert!(matches!(
            s.observe(sample(0.4, 4.0), &m).unwrap(),
            Observation::Prediction(_)
        ));
        assert_eq!(s.count(), 0);
        assert_eq!(
            s.observe(sample(0.5, 5.0), &m).unwrap(),
            Observation::Pending
        );
        assert_eq!(s.count(), 1);
        assert_eq!(s.reference, Some(sample(0.5, 5.0)));
    }

    #[test]
    fn regression_discards_window() {
        let m = model();
        let mut s = OnlineWindowState::new();
        s.observe(sample(1.0, 0.0), &m).unwrap();
        s.observe(sample(1.1, 0.0), &m).unwrap();
        assert_eq!(
            s.observe(sample(1.05, 0.0), &m).unwrap(),
            Observation::Discarded
        );
        assert_eq!(s.count(), 0);
    }
}
