//! Longitudinal control laws and the radar model.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeaderProfile {
    pub mean_speed: f64,
    pub amplitude: f64,
    pub frequency: f64,
    /// Proportional gain of the leader's speed tracking.
    pub gain: f64,
}

impl Default for LeaderProfile {
    fn default() -> Self {
        LeaderProfile {
            mean_speed: 27.778,
            amplitude: 1.389,
            frequency: 0.1,
            gain: 1.0,
        }
    }
}

impl LeaderProfile {
    pub fn speed(&self, t: f64) -> f64 {
        self.mean_speed + self.amplitude * (2.0 * PI * self.frequency * t).sin()
    }

    fn speed_rate(&self, t: f64) -> f64 {
        self.amplitude * 2.0 * PI * self.frequency * (2.0 * PI * self.frequency * t).cos()
    }

    /// Proportional tracking of the reference speed plus its derivative.
    pub fn accel(&self, t: f64, v: f64) -> f64 {
        self.gain * (self.speed(t) - v) + self.speed_rate(t)
    }
}

/// Leader speed profile with the default oscillation.
pub fn leader_speed(t: f64) -> f64 {
    LeaderProfile::default().speed(t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PloegGains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for PloegGains {
    fn default() -> Self {
        PloegGains { kp: 0.2, kd: 0.7 }
    }
}

/// What the Ploeg law needs about the predecessor, from beacons or radar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrontView {
    pub distance: f64,
    pub relative_speed: f64,
    pub u_front: f64,
}

/// Rate of the desired acceleration `u` under the Ploeg law for a spacing
/// policy `standstill + headway * v`. The time constant `tau` equals the
/// headway except under a fixed-gap policy, where the headway is zero.
#[allow(clippy::too_many_arguments)]
pub fn ploeg_rate(
    gains: &PloegGains,
    front: &FrontView,
    v: f64,
    a: f64,
    u: f64,
    headway: f64,
    standstill: f64,
    tau: f64,
) -> f64 {
    let e = front.distance - (standstill + headway * v);
    let e_dot = front.relative_speed - headway * a;
    (-u + gains.kp * e + gains.kd * e_dot + front.u_front) / tau
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccParams {
    pub headway: f64,
    pub standstill: f64,
    pub lambda: f64,
}

impl Default for AccParams {
    fn default() -> Self {
        AccParams {
            headway: 1.2,
            standstill: 2.0,
            lambda: 0.1,
        }
    }
}

/// Radar-only constant-headway ACC.
pub fn acc_control(p: &AccParams, radar: &RadarReading, v: f64) -> f64 {
    let eps = -(radar.distance - p.standstill) + p.headway * v;
    -(1.0 / p.headway) * (-radar.relative_speed + p.lambda * eps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccelLimits {
    pub min: f64,
    pub max: f64,
}

impl Default for AccelLimits {
    fn default() -> Self {
        AccelLimits {
            min: -6.0,
            max: 2.5,
        }
    }
}

impl AccelLimits {
    pub fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.min, self.max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadarReading {
    /// Front bumper of self to rear bumper of the predecessor.
    pub distance: f64,
    /// `v_front - v_self`.
    pub relative_speed: f64,
}

pub fn radar_measure(
    x_self: f64,
    v_self: f64,
    x_front: f64,
    v_front: f64,
    len_front: f64,
) -> RadarReading {
    RadarReading {
        distance: x_front - len_front - x_self,
        relative_speed: v_front - v_self,
    }
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma` to both
/// components. `sigma == 0` returns the reading untouched.
pub fn add_radar_noise(reading: RadarReading, sigma: f64, rng: &mut impl Rng) -> RadarReading {
    if sigma <= 0.0 {
        return reading;
    }
    let n = Normal::new(0.0, sigma).expect("finite positive sigma");
    RadarReading {
        distance: reading.distance + n.sample(rng),
        relative_speed: reading.relative_speed + n.sample(rng),
    }
}
