//! From-scratch LSTM misbehavior detector.

pub mod adamw;
pub mod model_io;
pub mod network;
pub mod online;
pub mod train;

pub use adamw::{adamw_step, AdamWConfig, Moments};
pub use model_io::{load_model, read_model, save_model, write_model};
pub use network::{forward, loss_and_gradients, lstm_cell, CellState, LstmParams, Tensor};
pub use online::{Observation, OnlineWindowState};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};

use crate::error::Result;
use crate::features::{Rows, ScalerParams};
use crate::label::{LabelId, NUM_LABELS};

/// Trained network plus the scaler it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    pub params: LstmParams,
    pub scaler: ScalerParams,
}

impl DetectorModel {
    pub fn hidden(&self) -> usize {
        self.params.hidden
    }

    /// Probabilities for an already scaled window.
    pub fn probabilities(&self, scaled: &Rows) -> Result<[f64; NUM_LABELS]> {
        forward(&self.params, scaled)
    }

    /// Argmax label for an unscaled window.
    pub fn classify(&self, rows: &Rows) -> Result<LabelId> {
        self.classify_scaled(&self.scaler.transform(rows))
    }

    pub fn classify_scaled(&self, scaled: &Rows) -> Result<LabelId> {
        let p = self.probabilities(scaled)?;
        Ok(LabelId::new(network::argmax(&p) as u8).expect("argmax below NUM_LABELS"))
    }
}
