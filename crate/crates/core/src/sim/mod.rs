//! Fixed-step longitudinal platoon simulation.

pub mod beacon;
pub mod dynamics;
mod world;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use beacon::BeaconMessage;
pub use dynamics::{
    acc_control, leader_speed, ploeg_rate, radar_measure, AccParams, AccelLimits, FrontView,
    LeaderProfile, PloegGains, RadarReading,
};
pub use world::{simulate, write_trace};

use crate::defense::{FsmState, GapControlParams, TransitionCause};
use crate::error::{Error, Result};
use crate::ingest::CanonicalRecord;
use crate::label::LabelId;
use crate::misbehavior::MisbehaviorSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Controller {
    LeaderCruise,
    Ploeg,
    PloegRadarDegraded,
    Acc,
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Controller::LeaderCruise => "LEADER_CRUISE",
            Controller::Ploeg => "PLOEG",
            Controller::PloegRadarDegraded => "PLOEG_RADAR_DEGRADED",
            Controller::Acc => "ACC",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimParams {
    pub physics_step: f64,
    pub beacon_interval: f64,
    pub duration: f64,
    pub leader: LeaderProfile,
    pub ploeg: PloegGains,
    pub ploeg_headway: f64,
    pub standstill: f64,
    pub vehicle_length: f64,
    pub acc: AccParams,
    pub limits: AccelLimits,
    pub radar_noise_std: f64,
    pub lane_y: f64,
    pub leader_start_x: f64,
    /// Beacon data older than this many intervals is stale.
    pub stale_intervals: f64,
    pub gap: GapControlParams,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            physics_step: 0.01,
            beacon_interval: 0.1,
            duration: 120.0,
            leader: LeaderProfile::default(),
            ploeg: PloegGains::default(),
            ploeg_headway: 0.5,
            standstill: 2.0,
            vehicle_length: 4.0,
            acc: AccParams::default(),
            limits: AccelLimits::default(),
            radar_noise_std: 0.0,
            lane_y: 5.2,
            leader_start_x: 1000.0,
            stale_intervals: 2.0,
            gap: GapControlParams::default(),
        }
    }
}

fn whole_ratio(num: f64, den: f64, what: &str) -> Result<u32> {
    let r = num / den;
    let k = r.round();
    if !(k >= 1.0) || (r - k).abs() > 1e-6 || k > u32::MAX as f64 {
        return Err(Error::Config(format!(
            "{what} must be a positive whole multiple of the physics step"
        )));
    }
    Ok(k as u32)
}

impl SimParams {
    pub fn ticks_per_beacon(&self) -> Result<u32> {
        whole_ratio(self.beacon_interval, self.physics_step, "beacon_interval")
    }

    pub fn total_ticks(&self) -> Result<u32> {
        whole_ratio(self.duration, self.physics_step, "duration")
    }

    pub fn gap_update_ticks(&self) -> Result<u32> {
        whole_ratio(self.gap.delta_t, self.physics_step, "gap delta_t")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("physics_step", self.physics_step),
            ("ploeg_headway", self.ploeg_headway),
            ("vehicle_length", self.vehicle_length),
            ("acc_headway", self.acc.headway),
            ("gap_delta_g", self.gap.delta_g),
            ("stale_intervals", self.stale_intervals),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.limits.min < 0.0 && self.limits.max > 0.0) {
            return Err(Error::Config(
                "acceleration limits must bracket zero".into(),
            ));
        }
        if !(self.radar_noise_std >= 0.0) {
            return Err(Error::Config("radar_noise_std must be >= 0".into()));
        }
        self.ticks_per_beacon()?;
        self.total_ticks()?;
        self.gap_update_ticks()?;
        Ok(())
    }

    /// Equilibrium bumper-to-bumper distance under Ploeg at cruise speed.
    pub fn initial_gap(&self) -> f64 {
        self.standstill + self.ploeg_headway * self.leader.speed(0.0)
    }
}

/// Which received front-vehicle beacons to record as labeled rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Harvest {
    #[default]
    None,
    AllFollowers,
    Receiver(usize),
}

/// Puts one vehicle into GAP_CONTROL at a given time regardless of detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForcedTrigger {
    pub vehicle: usize,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub params: SimParams,
    pub size: usize,
    pub misbehavior: Option<MisbehaviorSpec>,
    /// Enables the defense state machine. Detection additionally needs a model.
    pub defense: bool,
    pub seed: u64,
    pub forced_trigger: Option<ForcedTrigger>,
    /// Record a trace row per vehicle every this many physics steps.
    pub trace_stride: Option<u32>,
    pub harvest: Harvest,
}

impl Scenario {
    pub fn new(size: usize, seed: u64) -> Self {
        Scenario {
            params: SimParams::default(),
            size,
            misbehavior: None,
            defense: false,
            seed,
            forced_trigger: None,
            trace_stride: None,
            harvest: Harvest::None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionEvent {
    /// Send time of the beacon that completed the window.
    pub time: f64,
    pub vehicle: usize,
    pub sender: usize,
    pub label: LabelId,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub front: usize,
    pub rear: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub time: f64,
    pub vehicle: usize,
    pub from: FsmState,
    pub to: FsmState,
    pub cause: TransitionCause,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub index: usize,
    pub x: f64,
    pub v: f64,
    pub a: f64,
    pub controller: Controller,
    pub fsm: FsmState,
    pub front_distance: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SimOutput {
    pub activation_time: Option<u32>,
    pub predictions: Vec<PredictionEvent>,
    pub collisions: Vec<CollisionEvent>,
    pub transitions: Vec<TransitionEvent>,
    /// Extremes of every commanded acceleration in the run.
    pub min_command: f64,
    pub max_command: f64,
    pub beacons_sent: Vec<u32>,
    /// Start time of each vehicle's detection windows.
    pub detector_start: Vec<f64>,
    pub replay_fallbacks: usize,
    pub stale_steps: usize,
    /// Falsified beacons that nevertheless matched the truth.
    pub unaltered_falsified: usize,
    /// Beacons sent without the warning flag after the sender had set it.
    pub warning_relapses: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
    #[serde(skip)]
    pub harvested: Vec<CanonicalRecord>,
}

impl SimOutput {
    pub fn accident(&self) -> bool {
        !self.collisions.is_empty()
    }
}
