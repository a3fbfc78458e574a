//! Falsification of one vehicle's transmitted beacons.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::label::MisbehaviorKind;
use crate::sim::BeaconMessage;

pub const ACTIVATION_MIN_S: u32 = 15;
pub const ACTIVATION_MAX_S: u32 = 80;
pub const RANDOM_POS_MAX: i64 = 10_000;
pub const POS_OFFSET_MAX: i64 = 10;
pub const RANDOM_SPEED_MAX: i64 = 200;
pub const SPD_OFFSET_MAX: i64 = 8;

/// Whether offset kinds draw one offset at activation or a fresh one per
/// beacon.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OffsetRedraw {
    #[default]
    PerBeacon,
    Once,
}

impl FromStr for OffsetRedraw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_beacon" => Ok(OffsetRedraw::PerBeacon),
            "once" => Ok(OffsetRedraw::Once),
            other => Err(Error::Config(format!(
                "offset_redraw must be per_beacon or once, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for OffsetRedraw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OffsetRedraw::PerBeacon => "per_beacon",
            OffsetRedraw::Once => "once",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MisbehaviorSpec {
    pub kind: MisbehaviorKind,
    pub vehicle: usize,
    /// Whole seconds in `[15, 80]`.
    pub activation_time: u32,
    pub seed: u64,
    pub offset_redraw: OffsetRedraw,
}

impl MisbehaviorSpec {
    pub fn validate(&self, platoon_size: usize) -> Result<()> {
        if !(ACTIVATION_MIN_S..=ACTIVATION_MAX_S).contains(&self.activation_time) {
            return Err(Error::Config(format!(
                "activation time {} outside [15, 80]",
                self.activation_time
            )));
        }
        if self.vehicle + 1 >= platoon_size {
            return Err(Error::Config(format!(
                "misbehaving vehicle {} must not be the last of a platoon of {platoon_size}",
                self.vehicle
            )));
        }
        Ok(())
    }
}

/// Uniform integer activation time in `[15, 80]` seconds.
pub fn draw_activation_time(rng: &mut impl Rng) -> u32 {
    rng.gen_range(ACTIVATION_MIN_S..=ACTIVATION_MAX_S)
}

/// Values fixed when the misbehavior starts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrozenContext {
    pub const_pos: Option<(f64, f64)>,
    pub offset: Option<(f64, f64)>,
    pub replay_target: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Injector {
    pub spec: MisbehaviorSpec,
    platoon_size: usize,
    rng: ChaCha8Rng,
    context: Option<FrozenContext>,
    /// Replay beacons that fell back to the truth for lack of cached data.
    pub fallbacks: usize,
}

fn nonzero_pair(rng: &mut ChaCha8Rng, max: i64) -> (f64, f64) {
    loop {
        let p = (rng.gen_range(-max..=max), rng.gen_range(-max..=max));
        if p != (0, 0) {
            return (p.0 as f64, p.1 as f64);
        }
    }
}

impl Injector {
    pub fn new(spec: MisbehaviorSpec, platoon_size: usize) -> Result<Self> {
        spec.validate(platoon_size)?;
        Ok(Injector {
            spec,
            platoon_size,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            context: None,
            fallbacks: 0,
        })
    }

    pub fn context(&self) -> Option<&FrozenContext> {
        self.context.as_ref()
    }

    pub fn is_active(&self) -> bool {
        self.context.is_some()
    }

    fn other_member(&mut self) -> usize {
        loop {
            let k = self.rng.gen_range(0..self.platoon_size);
            if k != self.spec.vehicle {
                return k;
            }
        }
    }

    /// Freezes snapshot, offsets and replay target. `pos` is the attacker's
    /// true position at the moment of activation.
    pub fn activate(&mut self, pos: (f64, f64)) -> FrozenContext {
        let mut ctx = FrozenContext::default();
        match self.spec.kind {
            MisbehaviorKind::ConstPos => ctx.const_pos = Some(pos),
            MisbehaviorKind::PosOffset => {
                ctx.offset = Some(nonzero_pair(&mut self.rng, POS_OFFSET_MAX))
            }
            MisbehaviorKind::SpdOffset => {
                ctx.offset = Some(nonzero_pair(&mut self.rng, SPD_OFFSET_MAX))
            }
            MisbehaviorKind::DataReplay => ctx.replay_target = Some(self.other_member()),
            _ => {}
        }
        self.context = Some(ctx);
        ctx
    }

    fn offset(&mut self, max: i64) -> (f64, f64) {
        let ctx = self.context.as_mut().expect("activated");
        match self.spec.offset_redraw {
            OffsetRedraw::Once => ctx.offset.expect("offset drawn at activation"),
            OffsetRedraw::PerBeacon => {
                let o = nonzero_pair(&mut self.rng, max);
                ctx.offset = Some(o);
                o
            }
        }
    }

    fn replay(&mut self, truth: &BeaconMessage, source: Option<&BeaconMessage>) -> BeaconMessage {
        match source {
            Some(src) => BeaconMessage {
                posx: src.posx,
                posy: src.posy,
                spdx: src.spdx,
                spdy: src.spdy,
                acl: src.acl,
                heading: src.heading,
                ..*truth
            },
            None => {
                self.fallbacks += 1;
                *truth
            }
        }
    }

    /// Rewrites the true beacon. `cache[k]` is the latest beacon this vehicle
    /// received from member `k`. Sender id, send time, desired acceleration
    /// and warning flag are never touched.
    pub fn falsify(
        &mut self,
        truth: &BeaconMessage,
        cache: &[Option<BeaconMessage>],
    ) -> BeaconMessage {
        let ctx = *self
            .context
            .as_ref()
            .expect("falsify called before activate");
        let mut b = *truth;
        match self.spec.kind {
            MisbehaviorKind::ConstPos => {
                let (x, y) = ctx.const_pos.expect("snapshot");
                b.posx = x;
                b.posy = y;
            }
            MisbehaviorKind::RandomPos => loop {
                b.posx = self.rng.gen_range(0..=RANDOM_POS_MAX) as f64;
                b.posy = self.rng.gen_range(0..=RANDOM_POS_MAX) as f64;
                if b.differs_from(truth, 0.0) {
                    break;
                }
            },
            MisbehaviorKind::PosOffset => {
                let (ox, oy) = self.offset(POS_OFFSET_MAX);
                b.posx += ox;
                b.posy += oy;
            }
            MisbehaviorKind::RandomSpeed => loop {
                b.spdx = self.rng.gen_range(-RANDOM_SPEED_MAX..=RANDOM_SPEED_MAX) as f64;
                b.spdy = self.rng.gen_range(-RANDOM_SPEED_MAX..=RANDOM_SPEED_MAX) as f64;
                if b.differs_from(truth, 0.0) {
                    break;
                }
            },
            MisbehaviorKind::SpdOffset => {
                let (ox, oy) = self.offset(SPD_OFFSET_MAX);
                b.spdx += ox;
                b.spdy += oy;
            }
            MisbehaviorKind::EventualStop => {
                b.posx = 0.0;
                b.posy = 0.0;
                b.spdx = 0.0;
                b.spdy = 0.0;
                b.acl = 0.0;
            }
            MisbehaviorKind::Disruptive => {
                let k = self.other_member();
                b = self.replay(truth, cache.get(k).and_then(Option::as_ref));
            }
            MisbehaviorKind::DataReplay => {
                let k = ctx.replay_target.expect("target");
                b = self.replay(truth, cache.get(k).and_then(Option::as_ref));
            }
        }
        b
    }
}
