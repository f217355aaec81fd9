use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::fit::{train, TrainConfig};
use crate::datapipe::LabeledExample;
use crate::error::Result;
use crate::model::ModelConfig;

/// `(classifier_layers, lstm_dropout)` in tie-break order.
pub const GRID: [(usize, f64); 4] = [(1, 0.0), (1, 0.2), (2, 0.0), (2, 0.2)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub classifier_layers: usize,
    pub lstm_dropout: f64,
    /// Validation AUC at the restored (best-loss) epoch.
    pub val_auc: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: ModelConfig,
    pub best_auc: f64,
    pub table: Vec<GridCell>,
}

/// Trains every cell of [`GRID`] and keeps the one with the highest
/// validation AUC; ties (and NaN AUCs) favor fewer layers, then no dropout.
pub fn grid_search(
    base: &ModelConfig,
    tconfig: &TrainConfig,
    global: &[LabeledExample],
    local: &[LabeledExample],
) -> Result<GridSearchResult> {
    let mut table = Vec::with_capacity(GRID.len());
    for &(layers, dropout) in &GRID {
        let config = ModelConfig { classifier_layers: layers, lstm_dropout: dropout, ..base.clone() };
        let outcome = train(&config, tconfig, global, local)?;
        table.push(GridCell {
            classifier_layers: layers,
            lstm_dropout: dropout,
            val_auc: outcome.history.best().val_auc,
            best_epoch: outcome.history.best_epoch,
        });
    }
    let mut best = 0;
    for (i, cell) in table.iter().enumerate() {
        let current = table[best].val_auc;
        if cell.val_auc > current || (current.is_nan() && !cell.val_auc.is_nan()) {
            best = i;
        }
    }
    let cell = &table[best];
    Ok(GridSearchResult {
        best: ModelConfig {
            classifier_layers: cell.classifier_layers,
            lstm_dropout: cell.lstm_dropout,
            ..base.clone()
        },
        best_auc: cell.val_auc,
        table,
    })
}
