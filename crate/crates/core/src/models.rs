//! The named models and what it takes to train and apply them at a station.
//!
//! Covariates are ensemble summaries of weather variables: the mean and
//! standard deviation of the perturbed members and the control run. Each is
//! transformed (see [`summary_transforms`]), standardized with its own
//! seasonal climatology, and enters the model as an anomaly. The perturbed
//! summaries and the control form two exchangeable groups; mixture models
//! give each group its own component.
//!
//! | model         | K | estimation | candidates per predictor                  |
//! |---------------|---|------------|-------------------------------------------|
//! | `samos`       | 1 | BFGS       | t2m mean and ctrl (location), t2m sd (scale) |
//! | `samos-gb`    | 1 | boosting   | all 24 anomalies                           |
//! | `mixsamos`    | 2 | BFGS       | t2m only, one covariate per predictor     |
//! | `mixsamos-gb` | 2 | boosting   | 16 perturbed / 8 control anomalies         |
//! | `mixmos`      | 2 | BFGS       | as `mixsamos`, without climatologies       |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::boost::{
    boost_fit, cross_validate_mstop, standardize_columns, BoostConfig, BoostState, ColumnStats,
    CvResult,
};
use crate::climo::{
    destandardize_mixture, fit_climatology, summary_transforms, ClimatologyFit, SummaryTransforms,
    Transform,
};
use crate::error::{Error, Result};
use crate::estimate::{
    fit_bfgs, format_model_block, parse_model_block, predict_rows, BfgsOptions, Coefficients,
    LinearPredictorSpec, Loss, ModelSpec, PredictorTarget, StopReason,
};
use crate::fmt::{exact, parse_f64};
use crate::frame::Frame;
use crate::MixtureParams;

/// The eight weather variables of the standard catalog.
pub const STANDARD_VARIABLES: [&str; 8] =
    ["t2m", "pr", "u10m", "v10m", "sh", "tcc", "ws10m", "wg10m"];

/// The response variable; also the source of the BFGS models' covariates.
pub const RESPONSE_VARIABLE: &str = "t2m";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Summary {
    Mean,
    Ctrl,
    Sd,
}

impl Summary {
    pub fn suffix(&self) -> &'static str {
        match self {
            Summary::Mean => "mean",
            Summary::Ctrl => "ctrl",
            Summary::Sd => "sd",
        }
    }
}

pub fn covariate_id(variable: &str, summary: Summary) -> String {
    format!("{variable}.{}", summary.suffix())
}

/// Weather variables available as covariates, with their transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateCatalog {
    variables: Vec<(String, SummaryTransforms)>,
}

impl CovariateCatalog {
    pub fn standard() -> Self {
        Self::new(&STANDARD_VARIABLES).expect("standard variables have transforms")
    }

    pub fn new(variables: &[&str]) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::Spec(
                "covariate catalog needs at least one variable".into(),
            ));
        }
        let mut out: Vec<(String, SummaryTransforms)> = Vec::new();
        for v in variables {
            let t = summary_transforms(v)
                .ok_or_else(|| Error::Spec(format!("no transforms known for variable {v}")))?;
            if out.iter().any(|(w, _)| w == v) {
                return Err(Error::Spec(format!("variable {v} listed twice")));
            }
            out.push((v.to_string(), t));
        }
        Ok(CovariateCatalog { variables: out })
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.variables.iter().map(|(v, _)| v.as_str())
    }

    pub fn contains(&self, variable: &str) -> bool {
        self.variables.iter().any(|(v, _)| v == variable)
    }

    fn require(&self, variable: &str) -> Result<()> {
        if self.contains(variable) {
            Ok(())
        } else {
            Err(Error::Spec(format!(
                "covariate catalog has no {variable} entries"
            )))
        }
    }

    /// Variable, summary and transform behind a covariate id.
    pub fn lookup(&self, id: &str) -> Option<(&str, Summary, Transform)> {
        let (var, suffix) = id.rsplit_once('.')?;
        let (name, t) = self.variables.iter().find(|(v, _)| v == var)?;
        let (s, tr) = match suffix {
            "mean" => (Summary::Mean, t.mean),
            "ctrl" => (Summary::Ctrl, t.ctrl),
            "sd" => (Summary::Sd, t.sd),
            _ => return None,
        };
        Some((name.as_str(), s, tr))
    }

    /// Perturbed-member summaries: mean and sd of every variable.
    pub fn perturbed_group(&self) -> Vec<String> {
        self.variables()
            .flat_map(|v| [covariate_id(v, Summary::Mean), covariate_id(v, Summary::Sd)])
            .collect()
    }

    /// Control forecasts of every variable.
    pub fn control_group(&self) -> Vec<String> {
        self.variables()
            .map(|v| covariate_id(v, Summary::Ctrl))
            .collect()
    }

    /// All covariate ids: mean, ctrl and sd per variable.
    pub fn all_ids(&self) -> Vec<String> {
        self.variables()
            .flat_map(|v| [Summary::Mean, Summary::Ctrl, Summary::Sd].map(|s| covariate_id(v, s)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelScale {
    /// Response and covariates are standardized anomalies.
    Anomaly,
    /// Climatologies are the identity; only the variable transforms apply.
    Raw,
}

impl fmt::Display for ModelScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelScale::Anomaly => "anomaly",
            ModelScale::Raw => "raw",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimation {
    Bfgs(BfgsOptions),
    Boosting(BoostConfig),
}

/// A model specification together with how to estimate it and on which
/// scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDefinition {
    pub spec: ModelSpec,
    pub estimation: Estimation,
    pub scale: ModelScale,
    pub catalog: CovariateCatalog,
}

pub const MODEL_NAMES: [&str; 5] = ["samos", "samos-gb", "mixsamos", "mixsamos-gb", "mixmos"];

fn lp(
    target: PredictorTarget,
    covariates: Vec<String>,
    has_intercept: bool,
) -> LinearPredictorSpec {
    LinearPredictorSpec {
        target,
        covariates,
        has_intercept,
    }
}

pub fn make_samos(catalog: &CovariateCatalog, loss: Loss) -> Result<ModelDefinition> {
    use PredictorTarget::*;
    catalog.require(RESPONSE_VARIABLE)?;
    let t = |s| covariate_id(RESPONSE_VARIABLE, s);
    let spec = ModelSpec::new(
        "samos",
        1,
        vec![
            lp(Location(0), vec![t(Summary::Mean), t(Summary::Ctrl)], true),
            lp(Scale(0), vec![t(Summary::Sd)], true),
        ],
        loss,
        vec![catalog.all_ids()],
    )?;
    Ok(ModelDefinition {
        spec,
        estimation: Estimation::Bfgs(BfgsOptions::default()),
        scale: ModelScale::Anomaly,
        catalog: catalog.clone(),
    })
}

pub fn make_samos_gb(catalog: &CovariateCatalog, loss: Loss) -> Result<ModelDefinition> {
    use PredictorTarget::*;
    let all = catalog.all_ids();
    let spec = ModelSpec::new(
        "samos-gb",
        1,
        vec![
            lp(Location(0), all.clone(), true),
            lp(Scale(0), all.clone(), true),
        ],
        loss,
        vec![all],
    )?;
    Ok(ModelDefinition {
        spec,
        estimation: Estimation::Boosting(BoostConfig {
            m_stop: 2000,
            ..BoostConfig::default()
        }),
        scale: ModelScale::Anomaly,
        catalog: catalog.clone(),
    })
}

fn mixsamos_spec(name: &str, catalog: &CovariateCatalog, loss: Loss) -> Result<ModelSpec> {
    use PredictorTarget::*;
    catalog.require(RESPONSE_VARIABLE)?;
    let t = |s| vec![covariate_id(RESPONSE_VARIABLE, s)];
    ModelSpec::new(
        name,
        2,
        vec![
            lp(Weight(0), t(Summary::Mean), true),
            lp(Weight(1), t(Summary::Ctrl), true),
            lp(Location(0), t(Summary::Mean), true),
            lp(Scale(0), t(Summary::Sd), true),
            lp(Location(1), t(Summary::Ctrl), true),
            lp(Scale(1), vec![], true),
        ],
        loss,
        vec![catalog.perturbed_group(), catalog.control_group()],
    )
}

pub fn make_mixsamos(catalog: &CovariateCatalog, loss: Loss) -> Result<ModelDefinition> {
    Ok(ModelDefinition {
        spec: mixsamos_spec("mixsamos", catalog, loss)?,
        estimation: Estimation::Bfgs(BfgsOptions::default()),
        scale: ModelScale::Anomaly,
        catalog: catalog.clone(),
    })
}

pub fn make_mixsamos_gb(catalog: &CovariateCatalog, loss: Loss) -> Result<ModelDefinition> {
    use PredictorTarget::*;
    let (g1, g2) = (catalog.perturbed_group(), catalog.control_group());
    let spec = ModelSpec::new(
        "mixsamos-gb",
        2,
        vec![
            lp(Weight(0), g1.clone(), true),
            lp(Weight(1), g2.clone(), true),
            lp(Location(0), g1.clone(), true),
            lp(Scale(0), g1.clone(), true),
            lp(Location(1), g2.clone(), true),
            lp(Scale(1), g2.clone(), true),
        ],
        loss,
        vec![g1, g2],
    )?;
    Ok(ModelDefinition {
        spec,
        estimation: Estimation::Boosting(BoostConfig::default()),
        scale: ModelScale::Anomaly,
        catalog: catalog.clone(),
    })
}

/// MIXSAMOS structure on the raw (transformed but not standardized) scale.
/// Kept as a baseline: without climatologies it cannot absorb the seasonal
/// cycle.
pub fn make_mixmos(catalog: &CovariateCatalog, loss: Loss) -> Result<ModelDefinition> {
    Ok(ModelDefinition {
        spec: mixsamos_spec("mixmos", catalog, loss)?,
        estimation: Estimation::Bfgs(BfgsOptions::default()),
        scale: ModelScale::Raw,
        catalog: catalog.clone(),
    })
}

pub fn make_model(name: &str, catalog: &CovariateCatalog, loss: Loss) -> Result<ModelDefinition> {
    match name {
        "samos" => make_samos(catalog, loss),
        "samos-gb" => make_samos_gb(catalog, loss),
        "mixsamos" => make_mixsamos(catalog, loss),
        "mixsamos-gb" => make_mixsamos_gb(catalog, loss),
        "mixmos" => make_mixmos(catalog, loss),
        other => Err(Error::Config(format!(
            "unknown model {other:?}; expected one of {}",
            MODEL_NAMES.join(", ")
        ))),
    }
}

/// How a raw covariate column becomes a model input.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSource {
    pub id: String,
    pub transform: Transform,
    pub climatology: ClimatologyFit,
}

/// A trained model with everything needed to predict from raw ensemble
/// summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub station_id: String,
    pub spec: ModelSpec,
    pub coefficients: Coefficients,
    pub scale: ModelScale,
    pub covariates: Vec<CovariateSource>,
    pub response: ClimatologyFit,
    /// Design-column standardization of boosted models.
    pub column_stats: Option<ColumnStats>,
    pub estimation: String,
}

impl FittedModel {
    /// Transformed, climatology-standardized covariates for every row. Values
    /// that are missing or outside a transform's domain become NaN, and the
    /// second vector says why.
    pub fn anomaly_design(
        &self,
        raw: &Frame,
        doys: &[u32],
    ) -> Result<(Frame, Vec<Option<String>>)> {
        if raw.n_rows() != doys.len() {
            return Err(Error::Data(format!(
                "{} rows but {} days of year",
                raw.n_rows(),
                doys.len()
            )));
        }
        let mut problems: Vec<Option<String>> = vec![None; raw.n_rows()];
        let mut out = Frame::new(raw.n_rows());
        for src in &self.covariates {
            let col = raw.require(&src.id)?;
            let mut z = Vec::with_capacity(col.len());
            for (i, (&x, &d)) in col.iter().zip(doys).enumerate() {
                let v = if x.is_nan() {
                    problems[i].get_or_insert_with(|| format!("covariate {} is missing", src.id));
                    f64::NAN
                } else {
                    match src.transform.forward(x, &src.id) {
                        Ok(h) => src.climatology.standardize_value(h, d),
                        Err(e) => {
                            problems[i].get_or_insert_with(|| e.to_string());
                            f64::NAN
                        }
                    }
                };
                z.push(v);
            }
            out.push(src.id.clone(), z)?;
        }
        Ok((out, problems))
    }

    /// Observed-scale predictive mixtures from an anomaly design. Rows with a
    /// missing covariate fail individually.
    pub fn predict_from_anomalies(
        &self,
        design: &Frame,
        doys: &[u32],
    ) -> Result<Vec<Result<MixtureParams>>> {
        if design.n_rows() != doys.len() {
            return Err(Error::Data(format!(
                "{} rows but {} days of year",
                design.n_rows(),
                doys.len()
            )));
        }
        let cols = self.spec.covariates();
        let sub = design.select_columns(&cols)?;
        let mut out: Vec<Option<Result<MixtureParams>>> = (0..sub.n_rows()).map(|_| None).collect();
        let mut ok = Vec::with_capacity(sub.n_rows());
        for (i, slot) in out.iter_mut().enumerate() {
            match cols
                .iter()
                .position(|c| sub.column(c).is_some_and(|v| v[i].is_nan()))
            {
                Some(c) => {
                    *slot = Some(Err(Error::Data(format!(
                        "covariate {} is missing",
                        cols[c]
                    ))
                    .at_row(i)))
                }
                None => ok.push(i),
            }
        }
        let rows = sub.select_rows(&ok);
        let rows = match &self.column_stats {
            Some(s) => s.apply(&rows)?,
            None => rows,
        };
        let z = predict_rows(&self.spec, &self.coefficients, &rows)?;
        for (&i, zi) in ok.iter().zip(z) {
            out[i] =
                Some(destandardize_mixture(&zi, &self.response, doys[i]).map_err(|e| e.at_row(i)));
        }
        Ok(out
            .into_iter()
            .map(|r| r.expect("every row assigned"))
            .collect())
    }

    /// Predictive mixtures on the observed scale from raw ensemble summaries.
    pub fn predict(&self, raw: &Frame, doys: &[u32]) -> Result<Vec<Result<MixtureParams>>> {
        let (design, problems) = self.anomaly_design(raw, doys)?;
        let mut out = self.predict_from_anomalies(&design, doys)?;
        for (i, p) in problems.into_iter().enumerate() {
            if let Some(msg) = p {
                out[i] = Err(Error::Data(msg).at_row(i));
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = format_model_block(&self.spec, &self.coefficients, &self.estimation);
        let three = |c: &[f64; 3]| c.iter().map(|v| exact(*v)).collect::<Vec<_>>().join(",");
        s.push_str(&format!("station {}\n", self.station_id));
        s.push_str(&format!("scale {}\n", self.scale));
        s.push_str(&format!(
            "response {} loc={} scale={}\n",
            self.response.variable,
            three(&self.response.loc_coeffs),
            three(&self.response.scale_coeffs)
        ));
        for c in &self.covariates {
            s.push_str(&format!(
                "covariate {} transform={} loc={} scale={}\n",
                c.id,
                c.transform,
                three(&c.climatology.loc_coeffs),
                three(&c.climatology.scale_coeffs)
            ));
        }
        if let Some(st) = &self.column_stats {
            for ((n, m), sd) in st.names.iter().zip(&st.means).zip(&st.sds) {
                s.push_str(&format!(
                    "column {n} mean={} sd={}\n",
                    exact(*m),
                    exact(*sd)
                ));
            }
        }
        s
    }

    pub fn from_text(text: &str, file: &str) -> Result<Self> {
        let block = parse_model_block(text, file)?;
        let err = |line: usize, message: String| Error::Parse {
            file: file.to_string(),
            line,
            message,
        };
        let mut station = None;
        let mut scale = None;
        let mut response = None;
        let mut covariates = Vec::new();
        let mut stats = ColumnStats {
            names: Vec::new(),
            means: Vec::new(),
            sds: Vec::new(),
        };
        for (ln, raw) in &block.extra {
            let ln = *ln;
            let mut parts = raw.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let name = parts
                .next()
                .ok_or_else(|| err(ln, format!("{key} line without a value")))?;
            let mut kv = std::collections::HashMap::new();
            for p in parts {
                let (k, v) = p
                    .split_once('=')
                    .ok_or_else(|| err(ln, format!("expected key=value, got {p:?}")))?;
                kv.insert(k, v);
            }
            let get = |k: &str| {
                kv.get(k)
                    .copied()
                    .ok_or_else(|| err(ln, format!("missing {k}=")))
            };
            let num = |s: &str| parse_f64(s).ok_or_else(|| err(ln, format!("bad number {s:?}")));
            let three = |s: &str| -> Result<[f64; 3]> {
                let v: Vec<f64> = s.split(',').map(num).collect::<Result<_>>()?;
                v.try_into()
                    .map_err(|_| err(ln, format!("expected three numbers in {s:?}")))
            };
            match key {
                "station" => station = Some(name.to_string()),
                "scale" => {
                    scale = Some(match name {
                        "anomaly" => ModelScale::Anomaly,
                        "raw" => ModelScale::Raw,
                        _ => return Err(err(ln, format!("unknown scale {name:?}"))),
                    })
                }
                "response" => {
                    response = Some((name.to_string(), three(get("loc")?)?, three(get("scale")?)?))
                }
                "covariate" => covariates.push((
                    name.to_string(),
                    get("transform")?
                        .parse::<Transform>()
                        .map_err(|e| err(ln, e.to_string()))?,
                    three(get("loc")?)?,
                    three(get("scale")?)?,
                )),
                "column" => {
                    stats.names.push(name.to_string());
                    stats.means.push(num(get("mean")?)?);
                    stats.sds.push(num(get("sd")?)?);
                }
                _ => return Err(err(ln, format!("unknown line {raw:?}"))),
            }
        }
        let end = text.lines().count();
        let station_id = station.ok_or_else(|| err(end, "missing station line".into()))?;
        let (rv, rl, rs) = response.ok_or_else(|| err(end, "missing response line".into()))?;
        let covariates = covariates
            .into_iter()
            .map(|(id, transform, l, s)| CovariateSource {
                climatology: ClimatologyFit {
                    station_id: station_id.clone(),
                    variable: id.clone(),
                    loc_coeffs: l,
                    scale_coeffs: s,
                },
                id,
                transform,
            })
            .collect();
        Ok(FittedModel {
            response: ClimatologyFit {
                station_id: station_id.clone(),
                variable: rv,
                loc_coeffs: rl,
                scale_coeffs: rs,
            },
            station_id,
            spec: block.spec,
            coefficients: block.coefficients,
            scale: scale.ok_or_else(|| err(end, "missing scale line".into()))?,
            covariates,
            column_stats: (!stats.names.is_empty()).then_some(stats),
            estimation: block.estimation,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, &path.display().to_string())
    }
}

/// Training data of one station: raw ensemble summaries (one column per
/// catalog id), observations and days of year.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub station_id: &'a str,
    pub covariates: &'a Frame,
    pub observations: &'a [f64],
    pub doys: &'a [u32],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostOutcome {
    pub state: BoostState,
    pub cv: CvResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: FittedModel,
    pub boosting: Option<BoostOutcome>,
}

/// Fits climatologies, builds anomalies and estimates the model for one
/// station. `climatology_opts` drive the climatology fits.
pub fn train_station(
    def: &ModelDefinition,
    data: TrainingData<'_>,
    climatology_opts: &BfgsOptions,
) -> Result<TrainedModel> {
    let n = data.observations.len();
    if data.covariates.n_rows() != n || data.doys.len() != n {
        return Err(Error::Data(format!(
            "{}: {} covariate rows, {n} observations, {} days of year",
            data.station_id,
            data.covariates.n_rows(),
            data.doys.len()
        )));
    }
    let response = match def.scale {
        ModelScale::Anomaly => fit_climatology(
            data.station_id,
            RESPONSE_VARIABLE,
            data.observations,
            data.doys,
            climatology_opts,
        )?,
        ModelScale::Raw => ClimatologyFit::identity(data.station_id, RESPONSE_VARIABLE),
    };
    let mut covariates = Vec::new();
    for id in def.spec.covariates() {
        let (_, _, transform) = def
            .catalog
            .lookup(&id)
            .ok_or_else(|| Error::Spec(format!("covariate {id} is not in the catalog")))?;
        let col = data.covariates.require(&id)?;
        let h: Vec<f64> = col
            .iter()
            .enumerate()
            .map(|(i, &x)| transform.forward(x, &id).map_err(|e| e.at_row(i)))
            .collect::<Result<_>>()?;
        let climatology = match def.scale {
            ModelScale::Anomaly => {
                fit_climatology(data.station_id, &id, &h, data.doys, climatology_opts)?
            }
            ModelScale::Raw => ClimatologyFit::identity(data.station_id, &id),
        };
        covariates.push(CovariateSource {
            id,
            transform,
            climatology,
        });
    }
    let mut model = FittedModel {
        station_id: data.station_id.to_string(),
        spec: def.spec.clone(),
        coefficients: Coefficients::zeros(&def.spec),
        scale: def.scale,
        covariates,
        response,
        column_stats: None,
        estimation: String::new(),
    };
    let (design, problems) = model.anomaly_design(data.covariates, data.doys)?;
    if let Some((i, p)) = problems
        .iter()
        .enumerate()
        .find_map(|(i, p)| p.as_ref().map(|p| (i, p)))
    {
        return Err(Error::Data(p.clone()).at_row(i));
    }
    let z: Vec<f64> = data
        .observations
        .iter()
        .zip(data.doys)
        .map(|(&y, &d)| model.response.standardize_value(y, d))
        .collect();

    match &def.estimation {
        Estimation::Bfgs(opts) => {
            let fit = fit_bfgs(&def.spec, &design, &z, opts)?;
            if fit.stop == StopReason::MaxIterations {
                log::warn!(
                    "{} {}: BFGS stopped at the iteration limit (gradient norm {:e})",
                    data.station_id,
                    def.spec.name,
                    fit.grad_norm
                );
            }
            model.coefficients = fit.coefficients;
            model.estimation = format!("bfgs iterations={} stop={}", fit.iterations, fit.stop);
            Ok(TrainedModel {
                model,
                boosting: None,
            })
        }
        Estimation::Boosting(cfg) => {
            let (std_design, z, stats) = standardize_columns(&design, &z)?;
            let cv = cross_validate_mstop(&def.spec, &std_design, &z, cfg)?;
            let state = boost_fit(&def.spec, &std_design, &z, cfg)?;
            let model = crate::boost::finalize_model(&state, cv.m_opt, stats, model)?;
            Ok(TrainedModel {
                model,
                boosting: Some(BoostOutcome { state, cv }),
            })
        }
    }
}

impl FromStr for ModelScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anomaly" => Ok(ModelScale::Anomaly),
            "raw" => Ok(ModelScale::Raw),
            _ => Err(Error::Config(format!("unknown scale {s:?}"))),
        }
    }
}
