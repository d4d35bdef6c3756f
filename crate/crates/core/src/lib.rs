//! Normal-mixture regression for postprocessing ensemble weather forecasts.
//!
//! The predictive distribution of a forecast case is a mixture of `K` normal
//! components whose weights (softmax link), locations (identity link) and
//! scales (log link) are each driven by a linear predictor in the covariates.
//! Coefficients are estimated either by BFGS on the summed loss or by
//! non-cyclic gradient boosting, which updates a single coefficient across all
//! linear predictors per iteration and thereby selects covariates.
//!
//! Modules, bottom-up:
//!
//! * [`dist`]: normal and normal-mixture math, LogS and closed-form CRPS.
//! * [`grad`]: analytic loss gradients with respect to every linear predictor.
//! * [`climo`]: variable transforms, seasonal climatologies, standardized anomalies.
//! * [`estimate`]: model specifications, loss assembly and BFGS fitting.
//! * [`boost`]: non-cyclic gradient boosting and cross-validated stopping.
//! * [`models`]: SAMOS / SAMOS-GB / MIXSAMOS / MIXSAMOS-GB / MIXMOS wiring and prediction.
//! * [`verify`]: scores, calibration diagnostics, significance tests, importance.
//! * [`pipeline`]: ingestion, synthetic scenarios, configuration, batch runs.

// NaN must fail validity checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boost;
pub mod climo;
pub mod dist;
pub mod error;
pub mod estimate;
pub mod frame;
pub mod grad;
pub mod models;
pub mod pipeline;
pub mod verify;

mod fmt;

pub use boost::{BoostConfig, BoostState, ColumnStats, CvResult};
pub use climo::{ClimatologyFit, Transform};
pub use dist::{MixtureParams, ScalarGaussian};
pub use error::{Error, Result};
pub use estimate::{Coefficients, LinearPredictorSpec, Loss, ModelSpec, PredictorTarget};
pub use frame::Frame;
pub use grad::PredictorGradients;
pub use models::{CovariateCatalog, FittedModel, ModelDefinition};
pub use verify::ScoreReport;
