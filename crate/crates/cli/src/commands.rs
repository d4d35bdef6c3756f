use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use log::info;
use mixreg_core::models::{Estimation, ModelDefinition, TrainedModel, RESPONSE_VARIABLE};
use mixreg_core::pipeline::{
    evaluate_station, fit_station_climatologies, ingest, predict_dataset, read_predictions,
    run_pipeline, run_stations, simulate, split_dataset, station_importance, train_dataset,
    write_boosting, write_evaluation, write_failures, write_forecasts, write_importance,
    write_model_climatologies, write_observations, write_predictions, write_truth, Prediction,
    RunConfig, RunSummary, StationDataset,
};
use mixreg_core::{Error, FittedModel, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

const DEFAULT_OUT_DIR: &str = "mixreg-out";

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Spec(_) => EXIT_USAGE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

pub struct GlobalOptions {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

pub struct Context {
    cfg: RunConfig,
    out_dir: PathBuf,
}

impl Context {
    pub fn new(opts: GlobalOptions) -> Result<Self> {
        let mut cfg = match &opts.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = opts.seed {
            cfg.run.seed = seed;
        }
        if let Some(jobs) = opts.jobs {
            cfg.run.jobs = jobs;
        }
        cfg.validate()?;
        let out_dir = opts
            .out_dir
            .or_else(|| cfg.run.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        fs::create_dir_all(&out_dir)?;
        Ok(Context { cfg, out_dir })
    }

    /// Input files when configured, otherwise the configured scenario.
    fn datasets(&self) -> Result<Vec<StationDataset>> {
        match (&self.cfg.data.forecasts, &self.cfg.data.observations) {
            (Some(fc), Some(obs)) => {
                let open = |p: &Path| {
                    File::open(p)
                        .map_err(|e| Error::Data(format!("cannot open {}: {e}", p.display())))
                };
                ingest(
                    open(fc)?,
                    &fc.display().to_string(),
                    open(obs)?,
                    &obs.display().to_string(),
                )
            }
            _ => {
                let scenario = self.cfg.scenario()?;
                info!(
                    "simulating scenario {scenario} with seed {}",
                    self.cfg.run.seed
                );
                Ok(simulate(scenario, self.cfg.run.seed, &self.cfg.simulation_options())?.datasets)
            }
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn models_dir(&self, dir: Option<PathBuf>) -> PathBuf {
        dir.unwrap_or_else(|| self.path("models"))
    }

    fn finish(&self, summary: &RunSummary) -> Result<u8> {
        write_failures(&self.out_dir, summary)?;
        println!(
            "{} stations succeeded, {} failed; output in {}",
            summary.succeeded.len(),
            summary.failed.len(),
            self.out_dir.display()
        );
        Ok(if summary.failed.is_empty() {
            EXIT_OK
        } else if summary.failed.iter().any(|f| f.numerical) {
            EXIT_NUMERICAL
        } else {
            EXIT_DATA
        })
    }

    pub fn simulate(&self, scenario: Option<&str>) -> Result<u8> {
        let scenario = match scenario {
            Some(s) => s.parse()?,
            None => self.cfg.scenario()?,
        };
        let sim = simulate(scenario, self.cfg.run.seed, &self.cfg.simulation_options())?;
        write_forecasts(File::create(self.path("forecasts.csv"))?, &sim.datasets)?;
        write_observations(File::create(self.path("observations.csv"))?, &sim.datasets)?;
        write_truth(File::create(self.path("truth.csv"))?, &sim)?;
        println!(
            "wrote {scenario}: {} stations from {} to {} (test from {}) in {}",
            sim.datasets.len(),
            sim.options.first_date(),
            sim.options.last_date(),
            sim.options.test_start(),
            self.out_dir.display()
        );
        Ok(EXIT_OK)
    }

    pub fn climatology(&self) -> Result<u8> {
        let def = self.cfg.model_definition()?;
        let data = self.datasets()?;
        let results = run_stations(self.cfg.run.jobs, &data, |ds| {
            let (train, _) = split_dataset(ds, self.cfg.test_start());
            fit_station_climatologies(&def, &train, &self.cfg.bfgs_options())
        })?;
        let mut summary = RunSummary::default();
        let fits: Vec<_> = summary
            .collect(results)
            .into_iter()
            .flat_map(|(_, f)| f)
            .collect();
        mixreg_core::climo::write_climatologies(
            File::create(self.path("climatology.csv"))?,
            &fits,
        )?;
        self.finish(&summary)
    }

    fn train_all(
        &self,
        def: &ModelDefinition,
    ) -> Result<(RunSummary, Vec<(String, TrainedModel)>)> {
        let data = self.datasets()?;
        let results = run_stations(self.cfg.run.jobs, &data, |ds| {
            let (train, _) = split_dataset(ds, self.cfg.test_start());
            train_dataset(def, &train, &self.cfg.bfgs_options(), self.cfg.run.seed)
        })?;
        let mut summary = RunSummary::default();
        let trained = summary.collect(results);
        Ok((summary, trained))
    }

    pub fn train(&self) -> Result<u8> {
        let def = self.cfg.model_definition()?;
        let (summary, trained) = self.train_all(&def)?;
        let dir = self.path("models");
        fs::create_dir_all(&dir)?;
        for (station, t) in &trained {
            t.model.save(&dir.join(format!("{station}.model")))?;
        }
        write_model_climatologies(
            File::create(self.path("climatology.csv"))?,
            trained.iter().map(|(_, t)| &t.model),
        )?;
        let boosted: Vec<_> = trained
            .iter()
            .filter_map(|(s, t)| t.boosting.as_ref().map(|b| (s.as_str(), b)))
            .collect();
        if !boosted.is_empty() {
            write_boosting(&self.out_dir, &boosted)?;
        }
        self.finish(&summary)
    }

    pub fn paths(&self) -> Result<u8> {
        let def = self.cfg.model_definition()?;
        if !matches!(def.estimation, Estimation::Boosting(_)) {
            return Err(Error::Config(format!(
                "model {} is not boosted, so it has no coefficient paths",
                self.cfg.run.model
            )));
        }
        let (summary, trained) = self.train_all(&def)?;
        let boosted: Vec<_> = trained
            .iter()
            .filter_map(|(s, t)| t.boosting.as_ref().map(|b| (s.as_str(), b)))
            .collect();
        write_boosting(&self.out_dir, &boosted)?;
        self.finish(&summary)
    }

    fn load_model(dir: &Path, station: &str) -> Result<FittedModel> {
        let path = dir.join(format!("{station}.model"));
        if !path.exists() {
            return Err(Error::Data(format!(
                "no model for station {station} at {}",
                path.display()
            )));
        }
        FittedModel::load(&path)
    }

    pub fn predict(&self, models: Option<PathBuf>) -> Result<u8> {
        let dir = self.models_dir(models);
        let data = self.datasets()?;
        let results = run_stations(self.cfg.run.jobs, &data, |ds| {
            let (_, test) = split_dataset(ds, self.cfg.test_start());
            predict_dataset(&Self::load_model(&dir, &ds.station_id)?, &test)
        })?;
        let mut summary = RunSummary::default();
        let preds: Vec<Prediction> = summary
            .collect(results)
            .into_iter()
            .flat_map(|(_, p)| p)
            .collect();
        write_predictions(File::create(self.path("predictions.csv"))?, &preds)?;
        self.finish(&summary)
    }

    pub fn evaluate(&self, predictions: Option<PathBuf>) -> Result<u8> {
        let file = predictions.unwrap_or_else(|| self.path("predictions.csv"));
        let reader = File::open(&file)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", file.display())))?;
        let mut by_station: BTreeMap<String, Vec<Prediction>> = BTreeMap::new();
        for p in read_predictions(reader, &file.display().to_string())? {
            by_station.entry(p.station_id.clone()).or_default().push(p);
        }
        if by_station.is_empty() {
            return Err(Error::Data(format!(
                "{} holds no predictions",
                file.display()
            )));
        }
        let data: Vec<StationDataset> = self
            .datasets()?
            .into_iter()
            .filter(|ds| by_station.contains_key(&ds.station_id))
            .collect();
        if let Some(s) = by_station
            .keys()
            .find(|s| !data.iter().any(|d| &d.station_id == *s))
        {
            return Err(Error::Data(format!(
                "predictions for station {s}, which is not in the data"
            )));
        }
        let results = run_stations(self.cfg.run.jobs, &data, |ds| {
            let cases = &by_station[&ds.station_id];
            let ensembles = ds.ensemble(RESPONSE_VARIABLE)?;
            let members = cases
                .iter()
                .map(|p| match ds.dates.binary_search(&p.date) {
                    Ok(i) => Ok(ensembles[i].clone()),
                    Err(_) => Err(Error::Data(format!(
                        "{}: no forecast for {}",
                        ds.station_id, p.date
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            evaluate_station(
                &self.cfg.run.model,
                &ds.station_id,
                cases,
                Some(&members),
                &self.cfg.verify,
                self.cfg.run.seed,
            )
        })?;
        let mut summary = RunSummary::default();
        let ok = summary.collect(results);
        let evaluated: Vec<Prediction> = ok
            .iter()
            .flat_map(|(s, _)| by_station[s].iter().cloned())
            .collect();
        let evaluations: Vec<_> = ok.iter().map(|(s, e)| (s.as_str(), e)).collect();
        write_evaluation(&self.cfg, &evaluations, &evaluated, &self.out_dir)?;
        self.finish(&summary)
    }

    pub fn importance(&self, models: Option<PathBuf>) -> Result<u8> {
        let dir = self.models_dir(models);
        let data = self.datasets()?;
        let results = run_stations(self.cfg.run.jobs, &data, |ds| {
            let (_, test) = split_dataset(ds, self.cfg.test_start());
            station_importance(
                &Self::load_model(&dir, &ds.station_id)?,
                &test,
                &self.cfg.verify,
                self.cfg.run.seed,
            )
        })?;
        let mut summary = RunSummary::default();
        let rows: Vec<_> = summary
            .collect(results)
            .into_iter()
            .flat_map(|(_, r)| r)
            .collect();
        write_importance(File::create(self.path("importance.csv"))?, &rows)?;
        self.finish(&summary)
    }

    pub fn run(&self) -> Result<u8> {
        let data = self.datasets()?;
        let summary = run_pipeline(&self.cfg, &data, &self.out_dir)?;
        self.finish(&summary)
    }
}
