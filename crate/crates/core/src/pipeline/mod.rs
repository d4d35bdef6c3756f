//! Data ingestion, synthetic scenarios, run configuration and batch runs.
//!
//! Stations are processed independently: a failing station is reported and
//! skipped without affecting the others, and every random stream is seeded
//! from the run seed and the station id, so results do not depend on the
//! number of worker threads.

mod config;
mod dataset;
mod simulate;
mod stages;

pub use config::{BfgsSection, BoostSection, DataSection, RunConfig, RunSection, VerifySection};
pub use dataset::{
    ingest, summarize_ensemble, write_forecasts, write_observations, StationDataset,
    VariableForecasts, MIN_SPREAD,
};
pub use simulate::{
    simulate, station_ids, write_truth, Scenario, Simulation, SimulationOptions, TruthParameter,
    LATENT_AR, SCENARIOS,
};
pub use stages::{
    evaluate_station, fit_station_climatologies, load_models, predict_dataset, read_predictions,
    run_pipeline, run_stations, split_dataset, station_importance, train_dataset, write_boosting,
    write_evaluation, write_failures, write_histograms, write_importance,
    write_model_climatologies, write_predictions, Prediction, RunSummary, StationEvaluation,
    StationFailure, StationImportance, StationOutput,
};

use sha2::{Digest, Sha256};

/// A 64-bit seed derived from the run seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn station_seed(seed: u64, station_id: &str) -> u64 {
    derive_seed(seed, station_id)
}
