//! Per-station training, prediction and verification, and the batch driver.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use log::{info, warn};
use rayon::prelude::*;

use super::config::{RunConfig, VerifySection};
use super::dataset::StationDataset;
use super::derive_seed;
use crate::climo::{fit_climatology, write_climatologies, ClimatologyFit};
use crate::dist::MixtureParams;
use crate::error::{Error, Result};
use crate::estimate::BfgsOptions;
use crate::fmt::{exact, parse_f64};
use crate::models::{
    train_station, BoostOutcome, CovariateCatalog, Estimation, FittedModel, ModelDefinition,
    ModelScale, TrainedModel, TrainingData, RESPONSE_VARIABLE,
};
use crate::verify::{
    benjamini_hochberg, bootstrap_se, dm_test, ensemble_crps, permutation_importance,
    pit_histogram, pit_values, rank_histogram, BootstrapOptions, HistogramDiag, Metric,
    ScoreReport, SCORES_HEADER,
};

/// Splits into dates before `test_start` (training) and from it on (test).
pub fn split_dataset(
    ds: &StationDataset,
    test_start: NaiveDate,
) -> (StationDataset, StationDataset) {
    let cut = ds.dates.partition_point(|d| *d < test_start);
    let train: Vec<usize> = (0..cut).collect();
    let test: Vec<usize> = (cut..ds.n_rows()).collect();
    (ds.select_rows(&train), ds.select_rows(&test))
}

/// Climatologies of the response and of every transformed covariate the
/// model uses, fitted on `train`.
pub fn fit_station_climatologies(
    def: &ModelDefinition,
    train: &StationDataset,
    opts: &BfgsOptions,
) -> Result<Vec<ClimatologyFit>> {
    let doys = train.doys();
    let id = &train.station_id;
    let raw = train.covariate_frame(&def.catalog)?;
    let mut fits = Vec::new();
    fits.push(match def.scale {
        ModelScale::Anomaly => {
            fit_climatology(id, RESPONSE_VARIABLE, &train.observations, &doys, opts)?
        }
        ModelScale::Raw => ClimatologyFit::identity(id, RESPONSE_VARIABLE),
    });
    for cov in def.spec.covariates() {
        let (_, _, t) = def
            .catalog
            .lookup(&cov)
            .ok_or_else(|| Error::Spec(format!("covariate {cov} is not in the catalog")))?;
        let h: Vec<f64> = raw
            .require(&cov)?
            .iter()
            .enumerate()
            .map(|(i, &x)| t.forward(x, &cov).map_err(|e| e.at_row(i)))
            .collect::<Result<_>>()?;
        fits.push(match def.scale {
            ModelScale::Anomaly => fit_climatology(id, &cov, &h, &doys, opts)?,
            ModelScale::Raw => ClimatologyFit::identity(id, &cov),
        });
    }
    Ok(fits)
}

/// Trains `def` on one station. Boosting folds are seeded from `seed` and
/// the station id.
pub fn train_dataset(
    def: &ModelDefinition,
    train: &StationDataset,
    opts: &BfgsOptions,
    seed: u64,
) -> Result<TrainedModel> {
    let mut def = def.clone();
    if let Estimation::Boosting(b) = &mut def.estimation {
        b.seed = derive_seed(seed, &format!("{}/cv", train.station_id));
    }
    let raw = train.covariate_frame(&def.catalog)?;
    let doys = train.doys();
    train_station(
        &def,
        TrainingData {
            station_id: &train.station_id,
            covariates: &raw,
            observations: &train.observations,
            doys: &doys,
        },
        opts,
    )
}

/// One forecast case. `params` holds the reason when no prediction could be
/// made for the row.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub station_id: String,
    pub date: NaiveDate,
    pub observation: f64,
    pub params: std::result::Result<MixtureParams, String>,
}

pub fn predict_dataset(model: &FittedModel, test: &StationDataset) -> Result<Vec<Prediction>> {
    let raw = test.covariate_frame(&model_catalog(model)?)?;
    let preds = model.predict(&raw, &test.doys())?;
    Ok(preds
        .into_iter()
        .enumerate()
        .map(|(i, p)| Prediction {
            station_id: test.station_id.clone(),
            date: test.dates[i],
            observation: test.observations[i],
            params: p.map_err(|e| e.to_string()),
        })
        .collect())
}

/// The variables a model's covariates are summarized from.
fn model_catalog(model: &FittedModel) -> Result<CovariateCatalog> {
    let mut vars: Vec<&str> = Vec::new();
    for c in &model.covariates {
        let v = c.id.split('.').next().unwrap_or(&c.id);
        if !vars.contains(&v) {
            vars.push(v);
        }
    }
    CovariateCatalog::new(&vars)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| exact(*x)).collect::<Vec<_>>().join(";")
}

pub fn write_predictions<W: Write>(out: W, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "station_id",
        "date",
        "observation",
        "status",
        "weights",
        "locations",
        "scales",
    ])?;
    for p in predictions {
        let date = p.date.to_string();
        let obs = exact(p.observation);
        match &p.params {
            Ok(m) => w.write_record([
                p.station_id.as_str(),
                &date,
                &obs,
                "ok",
                &join(m.weights()),
                &join(m.locations()),
                &join(m.scales()),
            ])?,
            Err(reason) => w.write_record([
                p.station_id.as_str(),
                &date,
                &obs,
                reason.as_str(),
                "",
                "",
                "",
            ])?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R, file: &str) -> Result<Vec<Prediction>> {
    let perr = |line: usize, message: String| Error::Parse {
        file: file.to_string(),
        line,
        message,
    };
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        if rec.len() != 7 {
            return Err(perr(line, format!("expected 7 fields, got {}", rec.len())));
        }
        let date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
            .map_err(|e| perr(line, e.to_string()))?;
        let observation = parse_f64(&rec[2])
            .ok_or_else(|| perr(line, format!("bad observation {:?}", &rec[2])))?;
        let params = if &rec[3] == "ok" {
            let list = |s: &str| -> Result<Vec<f64>> {
                s.split(';')
                    .map(|v| parse_f64(v).ok_or_else(|| perr(line, format!("bad number {v:?}"))))
                    .collect()
            };
            Ok(
                MixtureParams::new(list(&rec[4])?, list(&rec[5])?, list(&rec[6])?)
                    .map_err(|e| perr(line, e.to_string()))?,
            )
        } else {
            Err(rec[3].to_string())
        };
        out.push(Prediction {
            station_id: rec[0].to_string(),
            date,
            observation,
            params,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationEvaluation {
    pub report: ScoreReport,
    pub pit: HistogramDiag,
    /// Raw-ensemble CRPS and rank histogram, when member values are known.
    pub ensemble: Option<(Metric, HistogramDiag)>,
    /// Per-case CRPS of the raw ensemble on the scored cases.
    pub ensemble_crps: Vec<f64>,
    pub skipped_cases: usize,
}

/// Scores the cases with a prediction. `ensembles`, when given, holds the
/// raw members of every case in `cases` order.
pub fn evaluate_station(
    model_name: &str,
    station: &str,
    cases: &[Prediction],
    ensembles: Option<&[Vec<f64>]>,
    verify: &VerifySection,
    seed: u64,
) -> Result<StationEvaluation> {
    if let Some(e) = ensembles {
        if e.len() != cases.len() {
            return Err(Error::Data(format!(
                "{station}: {} ensembles for {} cases",
                e.len(),
                cases.len()
            )));
        }
    }
    let keep: Vec<usize> = (0..cases.len())
        .filter(|&i| cases[i].params.is_ok())
        .collect();
    if keep.is_empty() {
        return Err(Error::Data(format!("{station}: no scorable cases")));
    }
    let preds: Vec<MixtureParams> = keep
        .iter()
        .map(|&i| cases[i].params.clone().expect("filtered"))
        .collect();
    let obs: Vec<f64> = keep.iter().map(|&i| cases[i].observation).collect();
    let boot = BootstrapOptions {
        block_length: verify.block_length,
        replicates: verify.bootstrap_replicates,
        seed: derive_seed(seed, &format!("{station}/bootstrap")),
    };
    let report = ScoreReport::compute(model_name, station, &preds, &obs, verify.level, &boot)?;
    let pit = pit_histogram(&pit_values(&preds, &obs)?, verify.pit_bins)?;
    let (ensemble, ensemble_crps) = match ensembles {
        Some(e) => {
            let members: Vec<Vec<f64>> = keep.iter().map(|&i| e[i].clone()).collect();
            let crps: Vec<f64> = members
                .iter()
                .zip(&obs)
                .map(|(m, &y)| ensemble_crps(m, y))
                .collect::<Result<_>>()?;
            let metric = Metric {
                value: crps.iter().sum::<f64>() / crps.len() as f64,
                se: bootstrap_se(&crps, boot.block_length, boot.replicates, boot.seed)
                    .unwrap_or(f64::NAN),
            };
            let rank = rank_histogram(
                &members,
                &obs,
                derive_seed(seed, &format!("{station}/ranks")),
            )?;
            (Some((metric, rank)), crps)
        }
        None => (None, Vec::new()),
    };
    Ok(StationEvaluation {
        report,
        pit,
        ensemble,
        ensemble_crps,
        skipped_cases: cases.len() - keep.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationImportance {
    pub station_id: String,
    pub covariate: String,
    pub importance: f64,
    pub se: f64,
}

/// Permutation importance of every covariate with a nonzero coefficient on
/// the test cases of one station.
pub fn station_importance(
    model: &FittedModel,
    test: &StationDataset,
    verify: &VerifySection,
    seed: u64,
) -> Result<Vec<StationImportance>> {
    let raw = test.covariate_frame(&model_catalog(model)?)?;
    let doys = test.doys();
    let (design, problems) = model.anomaly_design(&raw, &doys)?;
    let keep: Vec<usize> = (0..design.n_rows())
        .filter(|&i| problems[i].is_none())
        .collect();
    let design = design.select_rows(&keep);
    let obs: Vec<f64> = keep.iter().map(|&i| test.observations[i]).collect();
    let doys: Vec<u32> = keep.iter().map(|&i| doys[i]).collect();
    let mut active: Vec<String> = Vec::new();
    for (p, slopes) in model.spec.predictors.iter().zip(&model.coefficients.slopes) {
        for (c, b) in p.covariates.iter().zip(slopes) {
            if *b != 0.0 && !active.contains(c) {
                active.push(c.clone());
            }
        }
    }
    let mut out = Vec::with_capacity(active.len());
    for cov in active {
        let s = derive_seed(seed, &format!("{}/importance/{cov}", test.station_id));
        let imp = permutation_importance(
            model,
            &design,
            &doys,
            &obs,
            &cov,
            s,
            verify.importance_repeats,
        )?;
        out.push(StationImportance {
            station_id: test.station_id.clone(),
            se: bootstrap_se(
                &imp.per_case,
                verify.block_length,
                verify.bootstrap_replicates,
                s,
            )
            .unwrap_or(f64::NAN),
            covariate: cov,
            importance: imp.importance,
        });
    }
    Ok(out)
}

pub fn write_importance<W: Write>(mut out: W, rows: &[StationImportance]) -> Result<()> {
    writeln!(out, "station_id,covariate,importance,se")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.station_id,
            r.covariate,
            exact(r.importance),
            exact(r.se)
        )?;
    }
    Ok(())
}

/// Coefficient paths (`paths.csv`) and the cross-validated stopping
/// iterations (`mopt.csv`) of boosted fits.
pub fn write_boosting(dir: &Path, outcomes: &[(&str, &BoostOutcome)]) -> Result<()> {
    let mut paths = BufWriter::new(File::create(dir.join("paths.csv"))?);
    writeln!(
        paths,
        "station_id,iteration,predictor_id,covariate_id,coefficient"
    )?;
    let mut mopt = BufWriter::new(File::create(dir.join("mopt.csv"))?);
    writeln!(
        mopt,
        "station_id,m_opt,iterations,validation_loss,training_loss"
    )?;
    for (station, b) in outcomes {
        b.state.write_path_rows(&mut paths, Some(station))?;
        writeln!(
            mopt,
            "{station},{},{},{},{}",
            b.cv.m_opt,
            b.state.steps.len(),
            exact(b.cv.validation_loss[b.cv.m_opt - 1]),
            exact(b.state.training_loss(b.cv.m_opt))
        )?;
    }
    paths.flush()?;
    mopt.flush()?;
    Ok(())
}

/// Loads `<dir>/<station>.model` for each station, in order.
pub fn load_models(dir: &Path, stations: &[&str]) -> Vec<(String, Result<FittedModel>)> {
    stations
        .iter()
        .map(|s| {
            (
                s.to_string(),
                FittedModel::load(&dir.join(format!("{s}.model"))),
            )
        })
        .collect()
}

/// Applies `f` to every station on a pool of `jobs` threads. Results come
/// back in input order.
pub fn run_stations<T: Send>(
    jobs: usize,
    datasets: &[StationDataset],
    f: impl Fn(&StationDataset) -> Result<T> + Sync + Send,
) -> Result<Vec<(String, Result<T>)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(|| {
        datasets
            .par_iter()
            .map(|ds| (ds.station_id.clone(), f(ds)))
            .collect()
    }))
}

/// Everything produced for one station by [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct StationOutput {
    pub trained: TrainedModel,
    pub predictions: Vec<Prediction>,
    pub evaluation: StationEvaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationFailure {
    pub station_id: String,
    pub error: String,
    /// The failure came from the numerics rather than from the data.
    pub numerical: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub succeeded: Vec<String>,
    pub failed: Vec<StationFailure>,
}

fn process_station(
    cfg: &RunConfig,
    def: &ModelDefinition,
    ds: &StationDataset,
) -> Result<StationOutput> {
    let (train, test) = split_dataset(ds, cfg.test_start());
    if test.n_rows() == 0 {
        return Err(Error::Data(format!(
            "{}: no test dates on or after {}",
            ds.station_id,
            cfg.test_start()
        )));
    }
    let trained = train_dataset(def, &train, &cfg.bfgs_options(), cfg.run.seed)?;
    let predictions = predict_dataset(&trained.model, &test)?;
    let ensembles = test.ensemble(RESPONSE_VARIABLE)?;
    let evaluation = evaluate_station(
        &cfg.run.model,
        &ds.station_id,
        &predictions,
        Some(&ensembles),
        &cfg.verify,
        cfg.run.seed,
    )?;
    Ok(StationOutput {
        trained,
        predictions,
        evaluation,
    })
}

/// Long-format histogram counts, one row per bin.
pub fn write_histograms<W: Write>(mut out: W, rows: &[(&str, &str, &HistogramDiag)]) -> Result<()> {
    writeln!(out, "station_id,kind,bin,count")?;
    for (station, kind, h) in rows {
        for (b, c) in h.counts.iter().enumerate() {
            writeln!(out, "{station},{kind},{},{c}", b + 1)?;
        }
    }
    Ok(())
}

impl RunSummary {
    /// Moves failed stations into the summary and returns the rest.
    pub fn collect<T>(&mut self, results: Vec<(String, Result<T>)>) -> Vec<(String, T)> {
        let mut ok = Vec::with_capacity(results.len());
        for (station, r) in results {
            match r {
                Ok(v) => {
                    self.succeeded.push(station.clone());
                    ok.push((station, v));
                }
                Err(e) => {
                    warn!("station {station} failed: {e}");
                    self.failed.push(StationFailure {
                        numerical: e.is_numerical(),
                        error: e.to_string(),
                        station_id: station,
                    });
                }
            }
        }
        ok
    }
}

/// `failures.csv`, written only when some station failed.
pub fn write_failures(out_dir: &Path, summary: &RunSummary) -> Result<()> {
    if summary.failed.is_empty() {
        return Ok(());
    }
    let mut w = csv::Writer::from_path(out_dir.join("failures.csv"))?;
    w.write_record(["station_id", "error"])?;
    for f in &summary.failed {
        w.write_record([f.station_id.as_str(), f.error.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `scores.csv`, `histograms.csv` and `significance.csv`. The pooled
/// "all" rows cover `predictions`, which should be those of the evaluated
/// stations.
pub fn write_evaluation(
    cfg: &RunConfig,
    evaluations: &[(&str, &StationEvaluation)],
    predictions: &[Prediction],
    out_dir: &Path,
) -> Result<()> {
    let mut scores = BufWriter::new(File::create(out_dir.join("scores.csv"))?);
    writeln!(scores, "{SCORES_HEADER}")?;
    let mut hist_rows: Vec<(&str, &str, &HistogramDiag)> = Vec::new();
    let mut p_values = Vec::new();
    let mut dm_rows = Vec::new();
    for &(station, e) in evaluations {
        e.report.write_rows(&mut scores)?;
        writeln!(
            scores,
            "{},{station},pit_ri,{},{}",
            cfg.run.model,
            exact(e.pit.reliability_index),
            exact(f64::NAN)
        )?;
        hist_rows.push((station, "pit", &e.pit));
        if let Some((crps, rank)) = &e.ensemble {
            writeln!(
                scores,
                "ensemble,{station},crps,{},{}",
                exact(crps.value),
                exact(crps.se)
            )?;
            writeln!(
                scores,
                "ensemble,{station},rank_ri,{},{}",
                exact(rank.reliability_index),
                exact(f64::NAN)
            )?;
            hist_rows.push((station, "rank", rank));
            match dm_test(&e.report.crps_cases, &e.ensemble_crps) {
                Ok(dm) => {
                    p_values.push(dm.p_a_better);
                    dm_rows.push((station, dm));
                }
                Err(err) => warn!("{station}: no significance test: {err}"),
            }
        }
    }
    let preds: Vec<MixtureParams> = predictions
        .iter()
        .filter_map(|p| p.params.clone().ok())
        .collect();
    if !preds.is_empty() {
        let obs: Vec<f64> = predictions
            .iter()
            .filter(|p| p.params.is_ok())
            .map(|p| p.observation)
            .collect();
        let boot = BootstrapOptions {
            block_length: cfg.verify.block_length,
            replicates: cfg.verify.bootstrap_replicates,
            seed: derive_seed(cfg.run.seed, "all/bootstrap"),
        };
        ScoreReport::compute(&cfg.run.model, "all", &preds, &obs, cfg.verify.level, &boot)?
            .write_rows(&mut scores)?;
    }
    scores.flush()?;
    write_histograms(
        BufWriter::new(File::create(out_dir.join("histograms.csv"))?),
        &hist_rows,
    )?;

    let rejected = benjamini_hochberg(&p_values, cfg.verify.alpha);
    let mut sig = BufWriter::new(File::create(out_dir.join("significance.csv"))?);
    writeln!(sig, "station_id,reference,statistic,p_value,rejected")?;
    for ((station, dm), rej) in dm_rows.iter().zip(&rejected) {
        writeln!(
            sig,
            "{station},ensemble,{},{},{rej}",
            exact(dm.statistic),
            exact(dm.p_a_better)
        )?;
    }
    sig.flush()?;
    Ok(())
}

/// Climatologies of every fitted model, response first per station.
pub fn write_model_climatologies<'m>(
    out: impl Write,
    models: impl IntoIterator<Item = &'m FittedModel>,
) -> Result<()> {
    let mut fits = Vec::new();
    for m in models {
        fits.push(m.response.clone());
        fits.extend(m.covariates.iter().map(|c| c.climatology.clone()));
    }
    write_climatologies(out, &fits)
}

/// Trains, predicts and verifies every station and writes the run's
/// artifacts into `out_dir`. Station failures are logged and summarized;
/// only configuration and output errors abort the run.
pub fn run_pipeline(
    cfg: &RunConfig,
    datasets: &[StationDataset],
    out_dir: &Path,
) -> Result<RunSummary> {
    let def = cfg.model_definition()?;
    std::fs::create_dir_all(out_dir.join("models"))?;
    let results = run_stations(cfg.run.jobs, datasets, |ds| process_station(cfg, &def, ds))?;
    let mut summary = RunSummary::default();
    let ok = summary.collect(results);

    for (station, o) in &ok {
        o.trained
            .model
            .save(&out_dir.join("models").join(format!("{station}.model")))?;
    }
    write_model_climatologies(
        File::create(out_dir.join("climatology.csv"))?,
        ok.iter().map(|(_, o)| &o.trained.model),
    )?;

    let all_predictions: Vec<Prediction> = ok
        .iter()
        .flat_map(|(_, o)| o.predictions.iter().cloned())
        .collect();
    write_predictions(
        File::create(out_dir.join("predictions.csv"))?,
        &all_predictions,
    )?;

    let evaluations: Vec<(&str, &StationEvaluation)> = ok
        .iter()
        .map(|(s, o)| (s.as_str(), &o.evaluation))
        .collect();
    write_evaluation(cfg, &evaluations, &all_predictions, out_dir)?;

    let boosted: Vec<(&str, &BoostOutcome)> = ok
        .iter()
        .filter_map(|(s, o)| o.trained.boosting.as_ref().map(|b| (s.as_str(), b)))
        .collect();
    if !boosted.is_empty() {
        write_boosting(out_dir, &boosted)?;
    }
    write_failures(out_dir, &summary)?;
    info!(
        "run finished: {} stations succeeded, {} failed",
        summary.succeeded.len(),
        summary.failed.len()
    );
    Ok(summary)
}
