use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dynamics::{
    acc_control, add_radar_noise, ploeg_rate, radar_measure, FrontView, RadarReading,
};
use super::{
    BeaconMessage, CollisionEvent, Controller, Harvest, PredictionEvent, Scenario, SimOutput,
    TraceRow, TransitionEvent,
};
use crate::defense::{DefenseState, FsmState, GapControl, GapStep, TransitionCause};
use crate::error::{Error, Result};
use crate::features::WINDOW_LEN;
use crate::ingest::{CanonicalRecord, LABEL_TOLERANCE};
use crate::label::LabelId;
use crate::lstm::{DetectorModel, Observation, OnlineWindowState};
use crate::misbehavior::Injector;

const STREAM_TIMING: u64 = 1;
const STREAM_RADAR: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Vehicle {
    x: f64,
    v: f64,
    a: f64,
    /// Ploeg desired-acceleration state.
    u: f64,
    controller: Controller,
    defense: DefenseState,
    gap: Option<GapControl>,
    next_gap_update: u32,
    front_beacon: Option<BeaconMessage>,
    cache: Vec<Option<BeaconMessage>>,
    detector: OnlineWindowState,
    detector_start: u32,
    phase: u32,
    crashed: bool,
    sent_warning: bool,
}

struct World<'a> {
    sc: &'a Scenario,
    model: Option<&'a DetectorModel>,
    vehicles: Vec<Vehicle>,
    injector: Option<Injector>,
    act_tick: Option<u32>,
    radar_rng: ChaCha8Rng,
    collided: Vec<bool>,
    out: SimOutput,
}

impl World<'_> {
    fn time(&self, tick: u32) -> f64 {
        tick as f64 * self.sc.params.physics_step
    }

    fn radar(&mut self, i: usize) -> RadarReading {
        let p = &self.sc.params;
        let (me, front) = (&self.vehicles[i], &self.vehicles[i - 1]);
        let exact = radar_measure(me.x, me.v, front.x, front.v, p.vehicle_length);
        add_radar_noise(exact, p.radar_noise_std, &mut self.radar_rng)
    }

    fn log(
        &mut self,
        tick: u32,
        vehicle: usize,
        from: FsmState,
        to: FsmState,
        cause: TransitionCause,
    ) {
        let time = self.time(tick);
        self.out.transitions.push(TransitionEvent {
            time,
            vehicle,
            from,
            to,
            cause,
        });
    }

    /// FOLLOWING -> GAP_CONTROL, plus the immediate first ramp update.
    fn trigger(&mut self, i: usize, tick: u32, cause: TransitionCause) -> Result<()> {
        self.vehicles[i].defense.enter_gap_control();
        self.vehicles[i].detector.clear();
        self.log(tick, i, FsmState::Following, FsmState::GapControl, cause);
        if i == 0 {
            // no predecessor to open a gap to
            self.vehicles[0].defense.gap_reached();
            self.log(
                tick,
                0,
                FsmState::GapControl,
                FsmState::Downgrade,
                TransitionCause::GapReached,
            );
            return Ok(());
        }
        let p = self.sc.params;
        let radar = self.radar(i);
        let v = self.vehicles[i].v;
        let gc = GapControl::start(p.acc.headway, p.acc.standstill, v, radar.distance, &p.gap);
        let veh = &mut self.vehicles[i];
        veh.gap = Some(gc);
        veh.controller = Controller::PloegRadarDegraded;
        self.gap_update(i, tick, radar.distance)
    }

    fn gap_update(&mut self, i: usize, tick: u32, distance: f64) -> Result<()> {
        let every = self.sc.params.gap_update_ticks()?;
        let veh = &mut self.vehicles[i];
        let gc = veh.gap.as_mut().expect("gap control active");
        match gc.update(veh.v, distance) {
            GapStep::Continue => veh.next_gap_update = tick + every,
            GapStep::Reached => {
                veh.defense.gap_reached();
                veh.controller = Controller::Acc;
                self.log(
                    tick,
                    i,
                    FsmState::GapControl,
                    FsmState::Downgrade,
                    TransitionCause::GapReached,
                );
            }
        }
        Ok(())
    }

    fn true_beacon(&self, i: usize, tick: u32) -> BeaconMessage {
        let veh = &self.vehicles[i];
        let desired = match veh.controller {
            Controller::Ploeg | Controller::PloegRadarDegraded => veh.u,
            _ => veh.a,
        };
        BeaconMessage {
            sender: i,
            send_time: self.time(tick),
            posx: veh.x,
            posy: self.sc.params.lane_y,
            spdx: veh.v,
            spdy: 0.0,
            acl: veh.a,
            heading: 0.0,
            desired_accel: desired,
            warning: veh.defense.warning,
        }
    }

    fn deliver(&mut self, b: &BeaconMessage, truth: &BeaconMessage, tick: u32) -> Result<()> {
        let s = b.sender;
        for j in 0..self.vehicles.len() {
            if j == s {
                continue;
            }
            self.vehicles[j].cache[s] = Some(*b);
            let from_front = s + 1 == j;
            if from_front {
                self.vehicles[j].front_beacon = Some(*b);
            }
            let started = tick >= self.vehicles[j].detector_start;
            if from_front && started {
                let wanted = match self.sc.harvest {
                    Harvest::None => false,
                    Harvest::AllFollowers => true,
                    Harvest::Receiver(r) => r == j,
                };
                if wanted {
                    let lab = match &self.sc.misbehavior {
                        Some(spec) if b.differs_from(truth, LABEL_TOLERANCE) => spec.kind.label(),
                        _ => LabelId::REGULAR,
                    };
                    self.out.harvested.push(CanonicalRecord {
                        rx: j as i64,
                        sender_pseudo: s as i64,
                        send_time: b.send_time,
                        posx: b.posx,
                        posy: b.posy,
                        spdx: b.spdx,
                        spdy: b.spdy,
                        acl: b.acl,
                        hed: b.heading,
                        lab,
                    });
                }
            }
            if !self.sc.defense || self.vehicles[j].defense.state != FsmState::Following {
                continue;
            }
            let mut prediction = None;
            if let (true, true, Some(model)) = (from_front, started, self.model) {
                if let Observation::Prediction(label) =
                    self.vehicles[j].detector.observe(b.sample(), model)?
                {
                    self.out.predictions.push(PredictionEvent {
                        time: b.send_time,
                        vehicle: j,
                        sender: s,
                        label,
                    });
                    prediction = Some(label);
                }
            }
            if let Some(cause) = self.vehicles[j]
                .defense
                .trigger_cause(prediction, b.warning)
            {
                self.trigger(j, tick, cause)?;
            }
        }
        Ok(())
    }

    fn command(&mut self, i: usize, tick: u32) -> f64 {
        let p = self.sc.params;
        let dt = p.physics_step;
        let t = self.time(tick);
        match self.vehicles[i].controller {
            Controller::LeaderCruise => {
                let veh = &self.vehicles[i];
                p.limits.clamp(p.leader.accel(t, veh.v))
            }
            Controller::Ploeg => {
                let veh = &self.vehicles[i];
                let fresh = veh
                    .front_beacon
                    .filter(|b| t - b.send_time <= p.stale_intervals * p.beacon_interval + 1e-9);
                match fresh {
                    None => {
                        self.out.stale_steps += 1;
                        veh.u
                    }
                    Some(b) => {
                        let age = t - b.send_time;
                        let front = FrontView {
                            distance: b.posx + b.spdx * age - p.vehicle_length - veh.x,
                            relative_speed: b.spdx - veh.v,
                            u_front: b.desired_accel,
                        };
                        let h = p.ploeg_headway;
                        let rate =
                            ploeg_rate(&p.ploeg, &front, veh.v, veh.a, veh.u, h, p.standstill, h);
                        p.limits.clamp(veh.u + dt * rate)
                    }
                }
            }
            Controller::PloegRadarDegraded => {
                let radar = self.radar(i);
                let veh = &self.vehicles[i];
                let gc = veh.gap.expect("gap control active");
                let (head, standstill) = gc.controller_target();
                let tau = if head > 0.0 { head } else { p.ploeg_headway };
                // a ramping headway moves the spacing target by head_rate * v
                let front = FrontView {
                    distance: radar.distance,
                    relative_speed: radar.relative_speed - gc.head_rate * veh.v,
                    u_front: 0.0,
                };
                let rate = ploeg_rate(&p.ploeg, &front, veh.v, veh.a, veh.u, head, standstill, tau);
                p.limits.clamp(veh.u + dt * rate)
            }
            Controller::Acc => {
                let radar = self.radar(i);
                p.limits
                    .clamp(acc_control(&p.acc, &radar, self.vehicles[i].v))
            }
        }
    }

    fn record_trace(&mut self, tick: u32) {
        let t = self.time(tick);
        let len = self.sc.params.vehicle_length;
        for i in 0..self.vehicles.len() {
            let veh = &self.vehicles[i];
            let front_distance = (i > 0).then(|| self.vehicles[i - 1].x - len - veh.x);
            self.out.trace.push(TraceRow {
                t,
                index: i,
                x: veh.x,
                v: veh.v,
                a: veh.a,
                controller: veh.controller,
                fsm: veh.defense.state,
                front_distance,
            });
        }
    }

    fn step(&mut self, tick: u32) -> Result<()> {
        let p = self.sc.params;
        let spb = p.ticks_per_beacon()?;
        if let Some(stride) = self.sc.trace_stride {
            if tick.is_multiple_of(stride) {
                self.record_trace(tick);
            }
        }
        if let (Some(act), Some(inj)) = (self.act_tick, self.injector.as_mut()) {
            if tick + 1 == act {
                let veh = &self.vehicles[inj.spec.vehicle];
                inj.activate((veh.x, p.lane_y));
            }
        }
        if let Some(f) = self.sc.forced_trigger {
            let forced_tick = (f.time / p.physics_step).round() as u32;
            if tick == forced_tick && self.vehicles[f.vehicle].defense.state == FsmState::Following
            {
                self.trigger(f.vehicle, tick, TransitionCause::Forced)?;
            }
        }

        let mut sent = Vec::new();
        for i in 0..self.vehicles.len() {
            let phase = self.vehicles[i].phase;
            if tick < phase || !(tick - phase).is_multiple_of(spb) {
                continue;
            }
            let truth = self.true_beacon(i, tick);
            let mut b = truth;
            if let (Some(act), Some(inj)) = (self.act_tick, self.injector.as_mut()) {
                if inj.spec.vehicle == i && tick >= act {
                    b = inj.falsify(&truth, &self.vehicles[i].cache);
                    if !b.differs_from(&truth, LABEL_TOLERANCE) {
                        self.out.unaltered_falsified += 1;
                    }
                }
            }
            if self.vehicles[i].sent_warning && !truth.warning {
                self.out.warning_relapses += 1;
            }
            self.vehicles[i].sent_warning |= truth.warning;
            self.out.beacons_sent[i] += 1;
            sent.push((b, truth));
        }
        for (b, truth) in &sent {
            self.deliver(b, truth, tick)?;
        }

        for i in 0..self.vehicles.len() {
            let due = self.vehicles[i].defense.state == FsmState::GapControl
                && self.vehicles[i].gap.is_some()
                && self.vehicles[i].next_gap_update == tick;
            if due {
                let d = self.radar(i).distance;
                self.gap_update(i, tick, d)?;
            }
        }

        let mut commands = vec![0.0; self.vehicles.len()];
        for (i, cmd) in commands.iter_mut().enumerate() {
            if self.vehicles[i].crashed {
                continue;
            }
            *cmd = self.command(i, tick);
            self.out.min_command = self.out.min_command.min(*cmd);
            self.out.max_command = self.out.max_command.max(*cmd);
        }

        let dt = p.physics_step;
        for (veh, &cmd) in self.vehicles.iter_mut().zip(&commands) {
            if veh.crashed {
                continue;
            }
            veh.u = cmd;
            let v_new = (veh.v + cmd * dt).max(0.0);
            veh.a = (v_new - veh.v) / dt;
            veh.v = v_new;
            veh.x += v_new * dt;
        }

        let t_next = self.time(tick + 1);
        for i in 1..self.vehicles.len() {
            if self.collided[i] {
                continue;
            }
            let gap = self.vehicles[i - 1].x - p.vehicle_length - self.vehicles[i].x;
            if gap <= 0.0 {
                self.collided[i] = true;
                self.out.collisions.push(CollisionEvent {
                    time: t_next,
                    front: i - 1,
                    rear: i,
                });
                for k in [i - 1, i] {
                    let veh = &mut self.vehicles[k];
                    veh.crashed = true;
                    veh.v = 0.0;
                    veh.a = 0.0;
                    veh.u = 0.0;
                }
            }
        }
        Ok(())
    }
}

/// Runs one scenario. Detection happens only when the defense is enabled and
/// a model is supplied.
pub fn simulate(sc: &Scenario, model: Option<&DetectorModel>) -> Result<SimOutput> {
    let p = &sc.params;
    p.validate()?;
    if sc.size < 2 {
        return Err(Error::Config("platoon size must be at least 2".into()));
    }
    if let Some(f) = sc.forced_trigger {
        if f.vehicle >= sc.size || !(f.time >= 0.0) {
            return Err(Error::Config(
                "forced trigger vehicle or time out of range".into(),
            ));
        }
    }
    let injector = sc
        .misbehavior
        .map(|spec| Injector::new(spec, sc.size))
        .transpose()?;
    let spb = p.ticks_per_beacon()?;
    let total = p.total_ticks()?;

    let mut timing = stream(sc.seed, STREAM_TIMING);
    let v0 = p.leader.speed(0.0);
    let spacing = p.vehicle_length + p.initial_gap();
    let vehicles: Vec<Vehicle> = (0..sc.size)
        .map(|i| Vehicle {
            x: p.leader_start_x - i as f64 * spacing,
            v: v0,
            a: 0.0,
            u: 0.0,
            controller: if i == 0 {
                Controller::LeaderCruise
            } else {
                Controller::Ploeg
            },
            defense: DefenseState::default(),
            gap: None,
            next_gap_update: 0,
            front_beacon: None,
            cache: vec![None; sc.size],
            detector: OnlineWindowState::new(),
            detector_start: 0,
            phase: timing.gen_range(0..spb),
            crashed: false,
            sent_warning: false,
        })
        .collect();
    let mut world = World {
        sc,
        model,
        vehicles,
        injector,
        act_tick: sc
            .misbehavior
            .map(|m| (m.activation_time as f64 / p.physics_step).round() as u32),
        radar_rng: stream(sc.seed, STREAM_RADAR),
        collided: vec![false; sc.size],
        out: SimOutput {
            activation_time: sc.misbehavior.map(|m| m.activation_time),
            min_command: f64::INFINITY,
            max_command: f64::NEG_INFINITY,
            beacons_sent: vec![0; sc.size],
            ..SimOutput::default()
        },
    };
    // Windows start at a random point within the first window span so that
    // whole-second activation times fall anywhere inside a window.
    let span = spb * WINDOW_LEN as u32;
    for i in 0..sc.size {
        let start = timing.gen_range(0..span);
        world.vehicles[i].detector_start = start;
        world.out.detector_start.push(world.time(start));
    }
    for tick in 0..total {
        world.step(tick)?;
    }
    if let Some(inj) = &world.injector {
        world.out.replay_fallbacks = inj.fallbacks;
    }
    Ok(world.out)
}

pub fn write_trace<W: Write>(rows: &[TraceRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "t",
        "index",
        "x",
        "v",
        "a",
        "controller",
        "fsm",
        "front_distance",
    ])?;
    for r in rows {
        out.write_record([
            format!("{:.2}", r.t),
            r.index.to_string(),
            r.x.to_string(),
            r.v.to_string(),
            r.a.to_string(),
            r.controller.to_string(),
            r.fsm.to_string(),
            r.front_distance.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
