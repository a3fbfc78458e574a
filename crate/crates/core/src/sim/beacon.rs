use serde::{Deserialize, Serialize};

use crate::features::Sample;

/// One periodic V2V status message.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeaconMessage {
    pub sender: usize,
    pub send_time: f64,
    pub posx: f64,
    pub posy: f64,
    pub spdx: f64,
    pub spdy: f64,
    pub acl: f64,
    pub heading: f64,
    pub desired_accel: f64,
    pub warning: bool,
}

impl BeaconMessage {
    pub fn sample(&self) -> Sample {
        Sample {
            send_time: self.send_time,
            posx: self.posx,
            posy: self.posy,
            spdx: self.spdx,
            spdy: self.spdy,
            acl: self.acl,
        }
    }

    /// Whether any transmitted kinematic field differs from `truth` by more
    /// than `tol`.
    pub fn differs_from(&self, truth: &BeaconMessage, tol: f64) -> bool {
        [
            (self.posx, truth.posx),
            (self.posy, truth.posy),
            (self.spdx, truth.spdx),
            (self.spdy, truth.spdy),
            (self.acl, truth.acl),
        ]
        .iter()
        .any(|(a, b)| (a - b).abs() > tol)
    }
}
