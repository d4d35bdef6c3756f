//! Run configuration, read from a TOML file with `[run]`, `[data]`,
//! `[boost]`, `[bfgs]` and `[verify]` sections. Every key is optional.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;

use super::simulate::{Scenario, SimulationOptions};
use crate::boost::BoostConfig;
use crate::error::{Error, Result};
use crate::estimate::{BfgsOptions, Loss};
use crate::models::{make_model, CovariateCatalog, Estimation, ModelDefinition};
use crate::verify::{
    DEFAULT_BLOCK_LENGTH, DEFAULT_BOOTSTRAP_REPLICATES, DEFAULT_PIT_BINS, NOMINAL_LEVEL,
};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub model: String,
    pub loss: String,
    pub seed: u64,
    pub jobs: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            model: "mixsamos-gb".into(),
            loss: "crps".into(),
            seed: 1,
            jobs: 1,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub forecasts: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    /// Used when no files are given.
    pub scenario: String,
    pub stations: usize,
    pub start_year: i32,
    pub train_years: u32,
    pub test_years: u32,
    pub members: usize,
    /// First test date; earlier dates train. Defaults to the simulated split.
    #[serde(deserialize_with = "de_date")]
    pub test_start: Option<NaiveDate>,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SimulationOptions::default();
        DataSection {
            forecasts: None,
            observations: None,
            scenario: "seasonal-basic".into(),
            stations: s.stations,
            start_year: s.start_year,
            train_years: s.train_years,
            test_years: s.test_years,
            members: s.members,
            test_start: None,
        }
    }
}

/// Accepts a TOML date or a `YYYY-MM-DD` string.
fn de_date<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Option<NaiveDate>, D::Error> {
    use serde::de::Error as _;
    let text = match toml::Value::deserialize(d)? {
        toml::Value::String(s) => s,
        toml::Value::Datetime(dt) => dt.to_string(),
        v => return Err(D::Error::custom(format!("expected a date, got {v}"))),
    };
    NaiveDate::parse_from_str(&text, "%Y-%m-%d")
        .map(Some)
        .map_err(|e| D::Error::custom(format!("bad date {text:?}: {e}")))
}

/// Unset keys fall back to the model's own defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostSection {
    pub step_length: Option<f64>,
    pub m_stop: Option<usize>,
    pub cv_folds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BfgsSection {
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for BfgsSection {
    fn default() -> Self {
        let d = BfgsOptions::default();
        BfgsSection {
            max_iter: d.max_iter,
            rel_tol: d.rel_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub level: f64,
    pub pit_bins: usize,
    pub block_length: f64,
    pub bootstrap_replicates: usize,
    /// False discovery rate for the per-station significance tests.
    pub alpha: f64,
    pub importance_repeats: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            level: NOMINAL_LEVEL,
            pit_bins: DEFAULT_PIT_BINS,
            block_length: DEFAULT_BLOCK_LENGTH,
            bootstrap_replicates: DEFAULT_BOOTSTRAP_REPLICATES,
            alpha: 0.05,
            importance_repeats: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub boost: BoostSection,
    pub bfgs: BfgsSection,
    pub verify: VerifySection,
}

impl RunConfig {
    /// Parses and validates a configuration. Relative data paths are resolved
    /// against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(base) = base {
            for p in [
                &mut cfg.data.forecasts,
                &mut cfg.data.observations,
                &mut cfg.run.out_dir,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        self.loss()?;
        self.model_definition()?;
        if self.run.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.data.forecasts.is_some() != self.data.observations.is_some() {
            return Err(Error::Config(
                "give both forecasts and observations, or neither".into(),
            ));
        }
        if self.data.forecasts.is_some() && self.data.test_start.is_none() {
            return Err(Error::Config(
                "data.test_start is required with input files".into(),
            ));
        }
        if self.data.forecasts.is_none() {
            self.scenario()?;
        }
        let v = &self.verify;
        if !(v.level > 0.0 && v.level < 1.0) {
            return Err(Error::Config(format!(
                "verify.level must lie in (0, 1), got {}",
                v.level
            )));
        }
        if v.pit_bins < 2
            || v.bootstrap_replicates < 2
            || v.block_length < 1.0
            || v.importance_repeats == 0
        {
            return Err(Error::Config("verify settings out of range".into()));
        }
        if !(v.alpha > 0.0 && v.alpha < 1.0) {
            return Err(Error::Config(format!(
                "verify.alpha must lie in (0, 1), got {}",
                v.alpha
            )));
        }
        if self.bfgs.max_iter == 0 || !(self.bfgs.rel_tol > 0.0) {
            return Err(Error::Config("bfgs settings out of range".into()));
        }
        Ok(())
    }

    pub fn loss(&self) -> Result<Loss> {
        self.run
            .loss
            .parse()
            .map_err(|_| Error::Config(format!("unknown loss {:?}", self.run.loss)))
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.data.scenario.parse()
    }

    pub fn simulation_options(&self) -> SimulationOptions {
        SimulationOptions {
            stations: self.data.stations,
            start_year: self.data.start_year,
            train_years: self.data.train_years,
            test_years: self.data.test_years,
            members: self.data.members,
        }
    }

    pub fn test_start(&self) -> NaiveDate {
        self.data
            .test_start
            .unwrap_or_else(|| self.simulation_options().test_start())
    }

    pub fn bfgs_options(&self) -> BfgsOptions {
        BfgsOptions {
            max_iter: self.bfgs.max_iter,
            rel_tol: self.bfgs.rel_tol,
            ..BfgsOptions::default()
        }
    }

    /// The configured model with the `[bfgs]` and `[boost]` overrides
    /// applied. The boosting seed is replaced per station at training time.
    pub fn model_definition(&self) -> Result<ModelDefinition> {
        let mut def = make_model(&self.run.model, &CovariateCatalog::standard(), self.loss()?)?;
        match &mut def.estimation {
            Estimation::Bfgs(o) => *o = self.bfgs_options(),
            Estimation::Boosting(b) => {
                *b = BoostConfig {
                    step_length: self.boost.step_length.unwrap_or(b.step_length),
                    m_stop: self.boost.m_stop.unwrap_or(b.m_stop),
                    cv_folds: self.boost.cv_folds.unwrap_or(b.cv_folds),
                    seed: self.run.seed,
                };
                b.validate()?;
            }
        }
        Ok(def)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("", None).unwrap();
        assert_eq!(c, RunConfig::default());
        let def = c.model_definition().unwrap();
        assert_eq!(def.spec.name, "mixsamos-gb");
        assert!(matches!(
            def.estimation,
            Estimation::Boosting(BoostConfig {
                m_stop: 6000,
                cv_folds: 10,
                ..
            })
        ));
    }

    #[test]
    fn sections_and_overrides() {
        let text = r#"
[run]
model = "samos-gb"
loss = "logs"
seed = 9

[data]
forecasts = "fc.csv"
observations = "obs.csv"
test_start = 2020-01-01

[boost]
m_stop = 300

[verify]
level = 0.9
"#;
        let c = RunConfig::from_toml(text, Some(Path::new("/data"))).unwrap();
        assert_eq!(c.data.forecasts.as_deref(), Some(Path::new("/data/fc.csv")));
        assert_eq!(c.test_start(), NaiveDate::from_ymd_opt(2020, 1, 1).unwrap());
        assert_eq!(c.loss().unwrap(), Loss::LogS);
        match c.model_definition().unwrap().estimation {
            Estimation::Boosting(b) => assert_eq!((b.m_stop, b.cv_folds, b.seed), (300, 10, 9)),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn invalid_configs() {
        for text in [
            "[run]\nmodel = \"emos\"",
            "[run]\nloss = \"mse\"",
            "[run]\njobs = 0",
            "[run]\ncolour = 1",
            "[data]\nforecasts = \"a.csv\"",
            "[data]\nscenario = \"storm\"",
            "[verify]\nlevel = 1.5",
            "[boost]\nstep_length = 0.0",
            "not toml at all",
        ] {
            assert!(
                matches!(
                    RunConfig::from_toml(text, None),
                    Err(Error::Config(_)) | Err(Error::Spec(_))
                ),
                "{text}"
            );
        }
    }
}
