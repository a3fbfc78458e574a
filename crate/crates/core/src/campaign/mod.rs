//! Experiment matrix: sizes × attacker ids × kinds × defense modes ×
//! repetitions, run in parallel with per-run seeds derived from the base
//! seed and the run's pair index.

pub mod corpus;
pub mod metrics;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use corpus::{build_training_corpus, CorpusConfig};
pub use metrics::{
    accident_gain, accident_table, confidence_interval, confusion_matrix, false_positive_report,
    fsm_violations, score_multi_label, score_single_label, AccidentRow, AccuracyRow,
    ConfusionMatrix, Interval, MetricsReport,
};

use crate::error::{Error, Result};
use crate::label::{LabelId, MisbehaviorKind, NUM_LABELS};
use crate::lstm::DetectorModel;
use crate::misbehavior::{draw_activation_time, MisbehaviorSpec, OffsetRedraw};
use crate::sim::{simulate, CollisionEvent, Scenario, SimParams, TransitionEvent};

/// Tolerance when comparing float send times against whole-second
/// activation times.
pub const TIME_EPS: f64 = 1e-9;

pub const RESULTS_FILE: &str = "runs.jsonl";

/// Attacker ids used when a size has no explicit list.
pub fn default_ids(size: usize) -> Vec<usize> {
    match size {
        4 => vec![0, 1, 2],
        8 => (0..7).collect(),
        16 => vec![0, 7],
        n => (0..n.saturating_sub(1)).collect(),
    }
}

/// `(activation time, simulation seed, injector seed)` for one stream index.
pub fn derive_seeds(base_seed: u64, stream: u64) -> (u32, u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(stream);
    let act = draw_activation_time(&mut rng);
    (act, rng.gen(), rng.gen())
}

pub(crate) fn validate_matrix(
    sizes: &[usize],
    ids: &BTreeMap<usize, Vec<usize>>,
    kinds: &[MisbehaviorKind],
) -> Result<()> {
    if sizes.is_empty() || kinds.is_empty() {
        return Err(Error::Config("sizes and kinds must be non-empty".into()));
    }
    for &size in sizes {
        if size < 2 {
            return Err(Error::Config(format!("platoon size {size} is below 2")));
        }
        let list = ids
            .get(&size)
            .ok_or_else(|| Error::Config(format!("no attacker ids for size {size}")))?;
        if list.is_empty() {
            return Err(Error::Config(format!(
                "empty attacker list for size {size}"
            )));
        }
        if let Some(bad) = list.iter().find(|&&id| id + 1 >= size) {
            return Err(Error::Config(format!(
                "attacker {bad} must not be the last vehicle of a platoon of {size}"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignConfig {
    pub sizes: Vec<usize>,
    pub ids: BTreeMap<usize, Vec<usize>>,
    pub kinds: Vec<MisbehaviorKind>,
    pub defense_modes: Vec<bool>,
    pub repetitions: usize,
    pub base_seed: u64,
    pub offset_redraw: OffsetRedraw,
    pub params: SimParams,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let sizes = vec![4, 8];
        CampaignConfig {
            ids: sizes.iter().map(|&s| (s, default_ids(s))).collect(),
            sizes,
            kinds: MisbehaviorKind::ALL.to_vec(),
            defense_modes: vec![false, true],
            repetitions: 10,
            base_seed: 1,
            offset_redraw: OffsetRedraw::default(),
            params: SimParams::default(),
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        validate_matrix(&self.sizes, &self.ids, &self.kinds)?;
        if self.defense_modes.is_empty() || self.repetitions == 0 {
            return Err(Error::Config(
                "defense modes and repetitions must be non-empty".into(),
            ));
        }
        let mut modes = self.defense_modes.clone();
        modes.dedup();
        if modes.len() != self.defense_modes.len() || (modes.len() == 2 && modes[0] == modes[1]) {
            return Err(Error::Config("defense modes must not repeat".into()));
        }
        self.params.validate()
    }

    pub fn needs_model(&self) -> bool {
        self.defense_modes.contains(&true)
    }

    /// Every run of the matrix in a fixed order. Runs that differ only in the
    /// defense mode share a pair index and therefore all seeds.
    pub fn plan(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        let mut pair = 0;
        for &size in &self.sizes {
            for &attacker in &self.ids[&size] {
                for &kind in &self.kinds {
                    for repetition in 0..self.repetitions {
                        for &defense in &self.defense_modes {
                            out.push(RunSpec {
                                index: out.len(),
                                pair,
                                size,
                                attacker,
                                kind,
                                defense,
                                repetition,
                            });
                        }
                        pair += 1;
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSpec {
    pub index: usize,
    pub pair: usize,
    pub size: usize,
    pub attacker: usize,
    pub kind: MisbehaviorKind,
    pub defense: bool,
    pub repetition: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    /// Send time of the last beacon of the window.
    pub time: f64,
    pub label: LabelId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub index: usize,
    pub pair: usize,
    pub size: usize,
    pub attacker: usize,
    pub kind: MisbehaviorKind,
    pub defense: bool,
    pub repetition: usize,
    pub seed: u64,
    pub activation_time: u32,
    /// The attacker's immediate follower.
    pub detector: usize,
    /// Windows classified by the detecting vehicle, in time order.
    pub predictions: Vec<WindowPrediction>,
    /// Predicted labels of every window completed strictly before
    /// activation, over all vehicles.
    pub pre_activation: [usize; NUM_LABELS],
    pub collisions: Vec<CollisionEvent>,
    pub transitions: Vec<TransitionEvent>,
    pub min_command: f64,
    pub max_command: f64,
    pub warning_relapses: usize,
    pub replay_fallbacks: usize,
}

impl RunResult {
    pub fn accident(&self) -> bool {
        !self.collisions.is_empty()
    }
}

pub fn run_one(
    cfg: &CampaignConfig,
    spec: &RunSpec,
    model: Option<&DetectorModel>,
) -> Result<RunResult> {
    if spec.defense && model.is_none() {
        return Err(Error::Config(
            "a detector model is required when the defense is enabled".into(),
        ));
    }
    let (activation_time, seed, injector_seed) = derive_seeds(cfg.base_seed, spec.pair as u64);
    let mut sc = Scenario::new(spec.size, seed);
    sc.params = cfg.params;
    sc.defense = spec.defense;
    sc.misbehavior = Some(MisbehaviorSpec {
        kind: spec.kind,
        vehicle: spec.attacker,
        activation_time,
        seed: injector_seed,
        offset_redraw: cfg.offset_redraw,
    });
    let out = simulate(&sc, model)?;
    let detector = spec.attacker + 1;
    let act = activation_time as f64;
    let mut pre_activation = [0; NUM_LABELS];
    for p in out.predictions.iter().filter(|p| p.time < act - TIME_EPS) {
        pre_activation[p.label.index()] += 1;
    }
    let predictions = out
        .predictions
        .iter()
        .filter(|p| p.vehicle == detector)
        .map(|p| WindowPrediction {
            time: p.time,
            label: p.label,
        })
        .collect();
    Ok(RunResult {
        index: spec.index,
        pair: spec.pair,
        size: spec.size,
        attacker: spec.attacker,
        kind: spec.kind,
        defense: spec.defense,
        repetition: spec.repetition,
        seed,
        activation_time,
        detector,
        predictions,
        pre_activation,
        collisions: out.collisions,
        transitions: out.transitions,
        min_command: out.min_command,
        max_command: out.max_command,
        warning_relapses: out.warning_relapses,
        replay_fallbacks: out.replay_fallbacks,
    })
}

/// Runs the whole matrix. Results come back in plan order whatever the
/// thread count.
pub fn run_campaign(cfg: &CampaignConfig, model: Option<&DetectorModel>) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    if cfg.needs_model() && model.is_none() {
        return Err(Error::Config(
            "a detector model is required when the defense is enabled".into(),
        ));
    }
    cfg.plan()
        .par_iter()
        .map(|spec| run_one(cfg, spec, model))
        .collect()
}

/// One JSON object per line, in index order.
pub fn write_results<W: Write>(results: &[RunResult], w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: std::io::Read>(r: R) -> Result<Vec<RunResult>> {
    let mut out = Vec::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn save_results(dir: &Path, results: &[RunResult]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_results(results, fs::File::create(dir.join(RESULTS_FILE))?)
}

pub fn load_results(dir: &Path) -> Result<Vec<RunResult>> {
    read_results(fs::File::open(dir.join(RESULTS_FILE))?)
}
