//! Hybrid wind forecasting toolkit: marginal-response econometrics, EEMD,
//! a TiDE-style short-term forecaster with randomized-interval inference, a
//! compact autoregressive grid forecaster with weighted fine-tuning and bias
//! correction, and skill evaluation for the stitched hybrid.

pub mod container;
pub mod data;
pub mod decomposition;
pub mod econometrics;
pub mod error;
pub mod gridcaster;
pub mod hybrid_eval;
pub mod ingestion;
pub mod neural;

pub use error::{Error, Result};
