//! Compact autoregressive grid forecaster with weighted rollout
//! fine-tuning, forcing inputs and per-lead bias correction.

pub mod bias;
pub mod loss;
pub mod model;
pub mod train;

pub use bias::{
    apply_bias_correction, fit_bias_correction, hindcast, per_key_mse, simple_regression,
    BiasModel, ForecastSet, DEFAULT_BIAS_LEADS,
};
pub use loss::{
    estimate_s_j, estimate_wind_s, weighted_loss, wind_derivations, BoundingBox, GridGeometry,
    LossConfig,
};
pub use model::{add_forcing_inputs, ForcingSequence, GridForecaster, GridModelConfig};
pub use train::{rollout_rmse, rollout_train, rollout_train_with_forcing, RolloutReport};
