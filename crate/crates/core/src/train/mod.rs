//! Training with the global/local weighted loss, early stopping,
//! hyperparameter grid search and the local label-budget sweep.

mod fit;
mod grid;
mod loss;
mod sweep;

pub use fit::{evaluate, train, EarlyStopping, EpochRecord, TrainConfig, TrainHistory, TrainOutcome};
pub use grid::{grid_search, GridCell, GridSearchResult, GRID};
pub use sweep::{label_size_sweep, subsample_stratified, SweepResult, SweepRun, SweepSummary};
pub use loss::{weighted_loss, LossBreakdown, WeightedLossTape};
