//! Highway platoon simulator with V2X misbehavior injection, an LSTM
//! misbehavior detector and a warning-driven dismantle defense.

pub mod campaign;
pub mod config;
pub mod defense;
pub mod error;
pub mod features;
pub mod ingest;
pub mod label;
pub mod lstm;
pub mod misbehavior;
pub mod sim;

pub use error::{Error, Result};
pub use label::{LabelId, MisbehaviorKind, NUM_LABELS};
