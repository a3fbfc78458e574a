//! Labeled training records harvested from defense-off simulations.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{derive_seeds, validate_matrix};
use crate::error::{Error, Result};
use crate::ingest::CanonicalRecord;
use crate::label::MisbehaviorKind;
use crate::misbehavior::{MisbehaviorSpec, OffsetRedraw};
use crate::sim::{simulate, Harvest, Scenario, SimParams};

/// Receiver and sender ids are offset by `job * ID_STRIDE` so windows from
/// different runs never share a group.
pub const ID_STRIDE: i64 = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub sizes: Vec<usize>,
    pub ids: BTreeMap<usize, Vec<usize>>,
    pub kinds: Vec<MisbehaviorKind>,
    /// Runs per kind and size; the same number of regular runs is added.
    pub seeds_per_kind: usize,
    pub base_seed: u64,
    pub offset_redraw: OffsetRedraw,
    pub params: SimParams,
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        validate_matrix(&self.sizes, &self.ids, &self.kinds)?;
        if self.seeds_per_kind == 0 {
            return Err(Error::Config(
                "corpus_seeds_per_kind must be positive".into(),
            ));
        }
        if self.sizes.iter().any(|&s| s as i64 >= ID_STRIDE) {
            return Err(Error::Config(format!(
                "corpus platoon sizes must stay below {ID_STRIDE}"
            )));
        }
        self.params.validate()
    }

    /// `(size, kind)` per job; `None` is a regular run. Misbehavior runs
    /// cycle through the size's attacker ids.
    pub fn jobs(&self) -> Vec<(usize, Option<MisbehaviorKind>, usize)> {
        let mut out = Vec::new();
        for &size in &self.sizes {
            let ids = &self.ids[&size];
            for s in 0..self.seeds_per_kind {
                out.push((size, None, s));
            }
            for &kind in &self.kinds {
                for s in 0..self.seeds_per_kind {
                    out.push((size, Some(kind), ids[s % ids.len()]));
                }
            }
        }
        out
    }
}

/// Every follower records what it receives from its predecessor. In a
/// misbehavior run only the attacker's follower sees falsified beacons; the
/// others contribute truthful windows of vehicles reacting to the attack. A
/// record carries the scenario label when the transmitted beacon differs
/// from the truth.
pub fn build_training_corpus(cfg: &CorpusConfig) -> Result<Vec<CanonicalRecord>> {
    cfg.validate()?;
    let parts: Vec<Vec<CanonicalRecord>> = cfg
        .jobs()
        .par_iter()
        .enumerate()
        .map(|(job, &(size, kind, attacker))| {
            let (activation_time, seed, injector_seed) = derive_seeds(cfg.base_seed, job as u64);
            let mut sc = Scenario::new(size, seed);
            sc.params = cfg.params;
            sc.harvest = Harvest::AllFollowers;
            if let Some(kind) = kind {
                sc.misbehavior = Some(MisbehaviorSpec {
                    kind,
                    vehicle: attacker,
                    activation_time,
                    seed: injector_seed,
                    offset_redraw: cfg.offset_redraw,
                });
            }
            let base = job as i64 * ID_STRIDE;
            let mut records = simulate(&sc, None)?.harvested;
            for r in &mut records {
                r.rx += base;
                r.sender_pseudo += base;
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::LabelId;

    fn cfg(kind: MisbehaviorKind) -> CorpusConfig {
        CorpusConfig {
            sizes: vec![4],
            ids: [(4, vec![1])].into(),
            kinds: vec![kind],
            seeds_per_kind: 1,
            base_seed: 9,
            offset_redraw: OffsetRedraw::default(),
            params: SimParams::default(),
        }
    }

    #[test]
    fn labels_follow_falsification() {
        let c = cfg(MisbehaviorKind::ConstPos);
        let recs = build_training_corpus(&c).unwrap();
        let (regular, attack): (Vec<_>, Vec<_>) = recs.iter().partition(|r| r.rx < ID_STRIDE);
        assert!(regular.iter().all(|r| r.lab == LabelId::REGULAR));
        assert_eq!(
            regular
                .iter()
                .map(|r| r.rx)
                .collect::<std::collections::BTreeSet<_>>()
                .len(),
            3
        );
        let (act, _, _) = derive_seeds(9, 1);
        let (detector, others): (Vec<&CanonicalRecord>, Vec<_>) =
            attack.iter().partition(|r| r.rx == ID_STRIDE + 2);
        assert!(detector.iter().all(|r| r.sender_pseudo == ID_STRIDE + 1));
        assert!(!others.is_empty() && others.iter().all(|r| r.lab == LabelId::REGULAR));
        for r in &detector {
            let expect = if r.send_time >= act as f64 - 1e-9 {
                MisbehaviorKind::ConstPos.label()
            } else {
                LabelId::REGULAR
            };
            assert_eq!(r.lab, expect, "t={}", r.send_time);
        }
        assert_eq!(build_training_corpus(&c).unwrap(), recs);
    }
}
