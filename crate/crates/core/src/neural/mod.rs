//! Differentiable-network substrate and the TiDE short-term forecaster.

pub mod ensemble;
pub mod iterative;
pub mod layers;
pub mod scaler;
pub mod tide;
pub mod train;

pub use ensemble::{
    decompose_predict_ensemble, DecompositionEnsemble, EnsembleConfig, EnsembleForecast,
};
pub use iterative::{
    average_chains, feasible_leads, predict_chain, randomized_iterative_predict, sample_chain,
    IterativeForecast,
};
pub use layers::{Adam, GradientReport, Layout, Mode, Objective};
pub use scaler::Scaler;
pub use tide::{
    gradient_check, tide_forward, ForecastTask, TideBatch, TideConfig, TideModel, TideNet,
    TideShape,
};
pub use train::{
    constant_columns, select_columns, train_tide, EarlyStopping, SeriesDataset, Split, TrainReport,
};
