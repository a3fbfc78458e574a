//! Flat `key = value` configuration with embedded defaults.
//!
//! A user file only needs the keys it changes. Unknown keys are rejected so a
//! typo cannot silently fall back to a default. `ids_<size>` keys are open
//! ended: any platoon size may be given its own attacker list.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::campaign::{default_ids, CampaignConfig, CorpusConfig};
use crate::defense::{GapControlParams, GapPolicy};
use crate::error::{Error, Result};
use crate::label::MisbehaviorKind;
use crate::lstm::{AdamWConfig, TrainConfig};
use crate::misbehavior::OffsetRedraw;
use crate::sim::{AccParams, AccelLimits, LeaderProfile, PloegGains, SimParams};

pub const DEFAULT_CONFIG: &str = "\
# simulation
physics_step = 0.01
beacon_interval = 0.1
duration = 120
leader_mean_speed = 27.778
leader_amplitude = 1.389
leader_frequency = 0.1
leader_gain = 1
ploeg_kp = 0.2
ploeg_kd = 0.7
ploeg_headway = 0.5
standstill = 2
vehicle_length = 4
acc_headway = 1.2
acc_standstill = 2
acc_lambda = 0.1
accel_min = -6
accel_max = 2.5
radar_noise_std = 0
lane_y = 5.2
leader_start_x = 1000
stale_intervals = 2

# gap control
gap_delta_g = 0.8
gap_delta_t = 0.1
gap_policy = time_headway

# misbehavior
offset_redraw = per_beacon

# campaign
sizes = 4,8
ids_4 = 0,1,2
ids_8 = 0,1,2,3,4,5,6
ids_16 = 0,7
kinds = constPos,randomPos,posOffset,randomSpeed,spdOffset,eventualStop,disruptive,dataReplay
defense_enabled = false,true
repetitions = 10
seed = 1
model = model.mds

# training corpus
corpus_seeds_per_kind = 10
corpus_seed = 2

# detector training
hidden = 32
dense = 156
learning_rate = 0.001
weight_decay = 0.004
beta1 = 0.9
beta2 = 0.999
epsilon = 1e-8
batch_size = 64
max_epochs = 100
min_delta = 0.001
patience = 10
train_seed = 7
";

/// Raw key/value view, defaults overlaid by user entries.
#[derive(Clone, Debug, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

fn parse_lines(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{source}:{}: expected key = value",
                n + 1
            )));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("{source}:{}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn is_ids_key(k: &str) -> bool {
    k.strip_prefix("ids_")
        .is_some_and(|s| s.parse::<usize>().is_ok())
}

impl Default for RawConfig {
    fn default() -> Self {
        let values = parse_lines(DEFAULT_CONFIG, "defaults")
            .expect("embedded defaults parse")
            .into_iter()
            .collect();
        RawConfig { values }
    }
}

impl RawConfig {
    pub fn overlay(&mut self, text: &str, source: &str) -> Result<()> {
        for (k, v) in parse_lines(text, source)? {
            if !self.values.contains_key(&k) && !is_ids_key(&k) {
                return Err(Error::Config(format!("{source}: unknown key {k:?}")));
            }
            self.values.insert(k, v);
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut raw = RawConfig::default();
        raw.overlay(&std::fs::read_to_string(path)?, &path.display().to_string())?;
        Ok(raw)
    }

    /// Sets one key, as if it had appeared in the file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.overlay(&format!("{key} = {value}"), "command line")
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Effective configuration in the layout of the embedded defaults.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut seen = Vec::new();
        for line in DEFAULT_CONFIG.lines() {
            match line.split_once('=') {
                Some((k, _)) if !line.starts_with('#') => {
                    let k = k.trim();
                    seen.push(k.to_string());
                    let _ = writeln!(out, "{k} = {}", self.values[k]);
                }
                _ => {
                    let _ = writeln!(out, "{line}");
                }
            }
        }
        let extra: Vec<_> = self
            .values
            .iter()
            .filter(|(k, _)| !seen.contains(k))
            .collect();
        if !extra.is_empty() {
            out.push_str("\n# extra attacker lists\n");
            for (k, v) in extra {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key {key}")))?;
        raw.parse()
            .map_err(|e| Error::Config(format!("{key} = {raw:?}: {e}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key {key}")))?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| Error::Config(format!("{key}: {s:?}: {e}")))
            })
            .collect()
    }
}

/// Fully typed configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub sim: SimParams,
    pub offset_redraw: OffsetRedraw,
    pub campaign: CampaignConfig,
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub model: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config::from_raw(&RawConfig::default()).expect("embedded defaults are valid")
    }
}

impl Config {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let gap_policy = match raw.get("gap_policy") {
            Some("time_headway") => GapPolicy::TimeHeadway,
            Some("fixed_gap") => GapPolicy::FixedGap,
            other => {
                return Err(Error::Config(format!(
                    "gap_policy must be time_headway or fixed_gap, got {other:?}"
                )))
            }
        };
        let sim = SimParams {
            physics_step: raw.parse("physics_step")?,
            beacon_interval: raw.parse("beacon_interval")?,
            duration: raw.parse("duration")?,
            leader: LeaderProfile {
                mean_speed: raw.parse("leader_mean_speed")?,
                amplitude: raw.parse("leader_amplitude")?,
                frequency: raw.parse("leader_frequency")?,
                gain: raw.parse("leader_gain")?,
            },
            ploeg: PloegGains {
                kp: raw.parse("ploeg_kp")?,
                kd: raw.parse("ploeg_kd")?,
            },
            ploeg_headway: raw.parse("ploeg_headway")?,
            standstill: raw.parse("standstill")?,
            vehicle_length: raw.parse("vehicle_length")?,
            acc: AccParams {
                headway: raw.parse("acc_headway")?,
                standstill: raw.parse("acc_standstill")?,
                lambda: raw.parse("acc_lambda")?,
            },
            limits: AccelLimits {
                min: raw.parse("accel_min")?,
                max: raw.parse("accel_max")?,
            },
            radar_noise_std: raw.parse("radar_noise_std")?,
            lane_y: raw.parse("lane_y")?,
            leader_start_x: raw.parse("leader_start_x")?,
            stale_intervals: raw.parse("stale_intervals")?,
            gap: GapControlParams {
                delta_g: raw.parse("gap_delta_g")?,
                delta_t: raw.parse("gap_delta_t")?,
                policy: gap_policy,
            },
        };
        sim.validate()?;
        let offset_redraw: OffsetRedraw = raw.parse("offset_redraw")?;
        let sizes: Vec<usize> = raw.list("sizes")?;
        let mut ids = BTreeMap::new();
        for &size in &sizes {
            let key = format!("ids_{size}");
            let list = if raw.get(&key).is_some() {
                raw.list(&key)?
            } else {
                default_ids(size)
            };
            ids.insert(size, list);
        }
        let kinds: Vec<MisbehaviorKind> = raw.list("kinds")?;
        let campaign = CampaignConfig {
            sizes: sizes.clone(),
            ids: ids.clone(),
            kinds: kinds.clone(),
            defense_modes: raw.list("defense_enabled")?,
            repetitions: raw.parse("repetitions")?,
            base_seed: raw.parse("seed")?,
            offset_redraw,
            params: sim,
        };
        campaign.validate()?;
        let corpus = CorpusConfig {
            sizes,
            ids,
            kinds,
            seeds_per_kind: raw.parse("corpus_seeds_per_kind")?,
            base_seed: raw.parse("corpus_seed")?,
            offset_redraw,
            params: sim,
        };
        corpus.validate()?;
        let train = TrainConfig {
            hidden: raw.parse("hidden")?,
            dense: raw.parse("dense")?,
            optimizer: AdamWConfig {
                learning_rate: raw.parse("learning_rate")?,
                weight_decay: raw.parse("weight_decay")?,
                beta1: raw.parse("beta1")?,
                beta2: raw.parse("beta2")?,
                epsilon: raw.parse("epsilon")?,
            },
            batch_size: raw.parse("batch_size")?,
            max_epochs: raw.parse("max_epochs")?,
            min_delta: raw.parse("min_delta")?,
            patience: raw.parse("patience")?,
            seed: raw.parse("train_seed")?,
        };
        train.validate()?;
        Ok(Config {
            sim,
            offset_redraw,
            campaign,
            corpus,
            train,
            model: raw.parse("model")?,
        })
    }
}
