//! Defense state machine and the gradual gap-control ramp.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::label::LabelId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FsmState {
    Following,
    GapControl,
    Downgrade,
}

impl fmt::Display for FsmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FsmState::Following => "FOLLOWING",
            FsmState::GapControl => "GAP_CONTROL",
            FsmState::Downgrade => "DOWNGRADE",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionCause {
    Prediction,
    Warning,
    GapReached,
    /// Forced externally, e.g. by a dynamics experiment.
    Forced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DefenseState {
    pub state: FsmState,
    pub warning: bool,
    pub use_radar: bool,
}

impl Default for DefenseState {
    fn default() -> Self {
        DefenseState {
            state: FsmState::Following,
            warning: false,
            use_radar: false,
        }
    }
}

impl DefenseState {
    /// Decides whether a received beacon starts the dismantle. Only a vehicle
    /// still FOLLOWING reacts; `prediction` is the detector output if this
    /// beacon completed a window.
    pub fn trigger_cause(
        &self,
        prediction: Option<LabelId>,
        beacon_warning: bool,
    ) -> Option<TransitionCause> {
        if self.state != FsmState::Following {
            return None;
        }
        if prediction.is_some_and(|p| !p.is_regular()) {
            Some(TransitionCause::Prediction)
        } else if beacon_warning {
            Some(TransitionCause::Warning)
        } else {
            None
        }
    }

    /// FOLLOWING -> GAP_CONTROL; latches warning and radar use.
    pub fn enter_gap_control(&mut self) {
        debug_assert_eq!(self.state, FsmState::Following);
        self.state = FsmState::GapControl;
        self.warning = true;
        self.use_radar = true;
    }

    /// GAP_CONTROL -> DOWNGRADE.
    pub fn gap_reached(&mut self) {
        debug_assert_eq!(self.state, FsmState::GapControl);
        self.state = FsmState::Downgrade;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GapPolicy {
    /// Ramp the time headway, keep the standstill distance.
    #[default]
    TimeHeadway,
    /// Ramp a fixed spacing distance.
    FixedGap,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapControlParams {
    /// Gap growth rate, m/s.
    pub delta_g: f64,
    /// Update period, s.
    pub delta_t: f64,
    pub policy: GapPolicy,
}

impl Default for GapControlParams {
    fn default() -> Self {
        GapControlParams {
            delta_g: 0.8,
            delta_t: 0.1,
            policy: GapPolicy::TimeHeadway,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GapStep {
    Continue,
    Reached,
}

/// Sign with `sgn(0) = 1`.
fn sgn(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Moves `cur` towards `target` by at most `step`, never past it.
fn ramp(cur: f64, target: f64, step: f64) -> f64 {
    let diff = target - cur;
    cur + sgn(diff) * step.min(diff.abs())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapControl {
    pub policy: GapPolicy,
    pub head_t: f64,
    pub dt_offset: f64,
    pub gap_t: f64,
    pub cur_head: f64,
    pub cur_gap: f64,
    pub increasing: bool,
    pub delta_g: f64,
    pub delta_t: f64,
    /// Headway change per second applied by the most recent ramp step.
    pub head_rate: f64,
}

impl GapControl {
    /// Initial ramp state. The caller runs [`GapControl::update`] right after,
    /// then every `delta_t`. A standing vehicle uses the fixed-gap policy.
    pub fn start(
        head_t: f64,
        dt_offset: f64,
        cur_speed: f64,
        cur_distance: f64,
        params: &GapControlParams,
    ) -> Self {
        let policy = if cur_speed > 0.0 {
            params.policy
        } else {
            GapPolicy::FixedGap
        };
        let gap_t = head_t * cur_speed + dt_offset;
        let mut increasing = true;
        let (cur_gap, cur_head) = match policy {
            GapPolicy::TimeHeadway => {
                let cur_head = (cur_distance - dt_offset) / cur_speed;
                if head_t < cur_head {
                    increasing = false;
                }
                (dt_offset, cur_head)
            }
            GapPolicy::FixedGap => (cur_distance, head_t),
        };
        if gap_t < cur_gap {
            increasing = false;
        }
        GapControl {
            policy,
            head_t,
            dt_offset,
            gap_t,
            cur_head,
            cur_gap,
            increasing,
            delta_g: params.delta_g,
            delta_t: params.delta_t,
            head_rate: 0.0,
        }
    }

    pub fn is_completed(&self) -> bool {
        match (self.policy, self.increasing) {
            (GapPolicy::TimeHeadway, true) => self.cur_head >= self.head_t,
            (GapPolicy::TimeHeadway, false) => self.cur_head <= self.head_t,
            (GapPolicy::FixedGap, true) => self.cur_gap >= self.gap_t,
            (GapPolicy::FixedGap, false) => self.cur_gap <= self.gap_t,
        }
    }

    pub fn is_reached(&self, cur_distance: f64) -> bool {
        if self.increasing {
            cur_distance >= self.gap_t
        } else {
            cur_distance <= self.gap_t
        }
    }

    /// One periodic update: pin the target once the ramp completed, report
    /// when the physical distance has reached it, otherwise ramp one step.
    pub fn update(&mut self, cur_speed: f64, cur_distance: f64) -> GapStep {
        self.gap_t = self.head_t * cur_speed + self.dt_offset;
        if self.is_completed() {
            match self.policy {
                GapPolicy::TimeHeadway => self.cur_head = self.head_t,
                GapPolicy::FixedGap => self.cur_gap = self.gap_t,
            }
        }
        self.head_rate = 0.0;
        if self.is_reached(cur_distance) {
            return GapStep::Reached;
        }
        match self.policy {
            GapPolicy::TimeHeadway => {
                let delta_h = if cur_speed > 0.0 {
                    self.delta_g / cur_speed
                } else {
                    f64::INFINITY
                };
                let next = ramp(self.cur_head, self.head_t, delta_h * self.delta_t);
                self.head_rate = (next - self.cur_head) / self.delta_t;
                self.cur_head = next;
            }
            GapPolicy::FixedGap => {
                self.cur_gap = ramp(self.cur_gap, self.gap_t, self.delta_g * self.delta_t);
            }
        }
        GapStep::Continue
    }

    /// `(headway, standstill)` to push into the active controller.
    pub fn controller_target(&self) -> (f64, f64) {
        match self.policy {
            GapPolicy::TimeHeadway => (self.cur_head, self.cur_gap),
            GapPolicy::FixedGap => (0.0, self.cur_gap),
        }
    }
}
