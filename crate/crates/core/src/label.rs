//! Misbehavior label set shared by the dataset, the detector and the simulator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Number of output classes of the detector (regular + eight misbehaviors).
pub const NUM_LABELS: usize = 9;

/// Dataset label, `0` is regular traffic and `1..=8` the misbehavior kinds.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(try_from = "u8", into = "u8")]
pub struct LabelId(u8);

impl LabelId {
    pub const REGULAR: LabelId = LabelId(0);

    pub fn new(value: u8) -> Result<Self, Error> {
        if (value as usize) < NUM_LABELS {
            Ok(LabelId(value))
        } else {
            Err(Error::InvalidInput(format!("label {value} outside 0..=8")))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_regular(self) -> bool {
        self.0 == 0
    }

    pub fn kind(self) -> Option<MisbehaviorKind> {
        MisbehaviorKind::ALL
            .get((self.0 as usize).wrapping_sub(1))
            .copied()
    }

    pub fn all() -> impl Iterator<Item = LabelId> {
        (0..NUM_LABELS as u8).map(LabelId)
    }
}

impl TryFrom<u8> for LabelId {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self, Error> {
        LabelId::new(value)
    }
}

impl From<LabelId> for u8 {
    fn from(l: LabelId) -> u8 {
        l.0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The eight injected misbehavior kinds, in label order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MisbehaviorKind {
    #[serde(rename = "constPos")]
    ConstPos,
    #[serde(rename = "randomPos")]
    RandomPos,
    #[serde(rename = "posOffset")]
    PosOffset,
    #[serde(rename = "randomSpeed")]
    RandomSpeed,
    #[serde(rename = "spdOffset")]
    SpdOffset,
    #[serde(rename = "eventualStop")]
    EventualStop,
    #[serde(rename = "disruptive")]
    Disruptive,
    #[serde(rename = "dataReplay")]
    DataReplay,
}

impl MisbehaviorKind {
    pub const ALL: [MisbehaviorKind; 8] = [
        MisbehaviorKind::ConstPos,
        MisbehaviorKind::RandomPos,
        MisbehaviorKind::PosOffset,
        MisbehaviorKind::RandomSpeed,
        MisbehaviorKind::SpdOffset,
        MisbehaviorKind::EventualStop,
        MisbehaviorKind::Disruptive,
        MisbehaviorKind::DataReplay,
    ];

    pub fn label(self) -> LabelId {
        LabelId(self as u8 + 1)
    }

    pub fn name(self) -> &'static str {
        match self {
            MisbehaviorKind::ConstPos => "constPos",
            MisbehaviorKind::RandomPos => "randomPos",
            MisbehaviorKind::PosOffset => "posOffset",
            MisbehaviorKind::RandomSpeed => "randomSpeed",
            MisbehaviorKind::SpdOffset => "spdOffset",
            MisbehaviorKind::EventualStop => "eventualStop",
            MisbehaviorKind::Disruptive => "disruptive",
            MisbehaviorKind::DataReplay => "dataReplay",
        }
    }
}

impl fmt::Display for MisbehaviorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MisbehaviorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        MisbehaviorKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown misbehavior kind '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_kinds_line_up() {
        assert_eq!(LabelId::all().count(), 9);
        assert!(LabelId::REGULAR.kind().is_none());
        for (i, k) in MisbehaviorKind::ALL.iter().enumerate() {
            assert_eq!(k.label().index(), i + 1);
            assert_eq!(k.label().kind(), Some(*k));
            assert_eq!(k.name().parse::<MisbehaviorKind>().unwrap(), *k);
        }
        assert!(LabelId::new(9).is_err());
    }

    #[test]
    fn serde_uses_wire_names() {
        let s = serde_json::to_string(&MisbehaviorKind::SpdOffset).unwrap();
        assert_eq!(s, "\"spdOffset\"");
        let l: LabelId = serde_json::from_str("7").unwrap();
        assert_eq!(l.kind(), Some(MisbehaviorKind::Disruptive));
        assert!(serde_json::from_str::<LabelId>("12").is_err());
    }
}
