//! Station datasets and their long-format CSV representation.
//!
//! Forecasts: `station_id,date,variable,member,value` with members `ctrl`
//! and `p01`, `p02`, ... Observations: `station_id,date,value`, where an
//! empty value or `NA` marks a missing observation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use log::info;

use crate::climo::day_of_year;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::models::{covariate_id, CovariateCatalog, Summary};

/// Ensemble spreads are clamped to this before log-type transforms.
pub const MIN_SPREAD: f64 = 1e-6;

/// Control run and perturbed members of one variable, per date.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableForecasts {
    pub variable: String,
    pub ctrl: Vec<f64>,
    pub perturbed: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationDataset {
    pub station_id: String,
    /// Strictly increasing.
    pub dates: Vec<NaiveDate>,
    pub observations: Vec<f64>,
    pub forecasts: Vec<VariableForecasts>,
}

impl StationDataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.dates.len();
        if self.dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "{}: dates are not strictly increasing",
                self.station_id
            )));
        }
        if self.observations.len() != n {
            return Err(Error::Data(format!(
                "{}: {} observations for {n} dates",
                self.station_id,
                self.observations.len()
            )));
        }
        for f in &self.forecasts {
            if f.ctrl.len() != n || f.perturbed.len() != n {
                return Err(Error::Data(format!(
                    "{}/{}: forecast rows do not match dates",
                    self.station_id, f.variable
                )));
            }
            let m = f.perturbed.first().map_or(0, Vec::len);
            if let Some(i) = f.perturbed.iter().position(|p| p.len() != m) {
                return Err(Error::Data(format!(
                    "{}/{}: member count changes on {}",
                    self.station_id, f.variable, self.dates[i]
                )));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn doys(&self) -> Vec<u32> {
        self.dates.iter().map(|d| day_of_year(*d)).collect()
    }

    pub fn variable(&self, name: &str) -> Option<&VariableForecasts> {
        self.forecasts.iter().find(|f| f.variable == name)
    }

    /// All members (control first) of `variable` per date.
    pub fn ensemble(&self, variable: &str) -> Result<Vec<Vec<f64>>> {
        let f = self.variable(variable).ok_or_else(|| {
            Error::Data(format!("{}: no forecasts for {variable}", self.station_id))
        })?;
        Ok(f.ctrl
            .iter()
            .zip(&f.perturbed)
            .map(|(&c, p)| std::iter::once(c).chain(p.iter().copied()).collect())
            .collect())
    }

    /// Raw ensemble summaries, one column per catalog id. Spreads are clamped
    /// to [`MIN_SPREAD`].
    pub fn covariate_frame(&self, catalog: &CovariateCatalog) -> Result<Frame> {
        let mut frame = Frame::new(self.n_rows());
        for var in catalog.variables() {
            let f = self.variable(var).ok_or_else(|| {
                Error::Data(format!("{}: no forecasts for {var}", self.station_id))
            })?;
            let mut mean = Vec::with_capacity(self.n_rows());
            let mut sd = Vec::with_capacity(self.n_rows());
            for (i, members) in f.perturbed.iter().enumerate() {
                let (m, s) = summarize_ensemble(members).map_err(|e| {
                    Error::Data(format!(
                        "{}/{var} on {}: {e}",
                        self.station_id, self.dates[i]
                    ))
                })?;
                mean.push(m);
                sd.push(s.max(MIN_SPREAD));
            }
            frame.push(covariate_id(var, Summary::Mean), mean)?;
            frame.push(covariate_id(var, Summary::Ctrl), f.ctrl.clone())?;
            frame.push(covariate_id(var, Summary::Sd), sd)?;
        }
        Ok(frame)
    }

    pub fn select_rows(&self, rows: &[usize]) -> StationDataset {
        StationDataset {
            station_id: self.station_id.clone(),
            dates: rows.iter().map(|&i| self.dates[i]).collect(),
            observations: rows.iter().map(|&i| self.observations[i]).collect(),
            forecasts: self
                .forecasts
                .iter()
                .map(|f| VariableForecasts {
                    variable: f.variable.clone(),
                    ctrl: rows.iter().map(|&i| f.ctrl[i]).collect(),
                    perturbed: rows.iter().map(|&i| f.perturbed[i].clone()).collect(),
                })
                .collect(),
        }
    }
}

/// Mean (1/n) and standard deviation (1/(n − 1)) of the members, summed in
/// sorted order so that member order cannot change the result.
pub fn summarize_ensemble(members: &[f64]) -> Result<(f64, f64)> {
    let n = members.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 members, got {n}")));
    }
    let mut x = members.to_vec();
    x.sort_by(f64::total_cmp);
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut dev: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
    dev.sort_by(f64::total_cmp);
    let sd = (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt();
    Ok((mean, sd))
}

fn member_index(name: &str) -> Option<usize> {
    if name == "ctrl" {
        return Some(0);
    }
    let k: usize = name.strip_prefix('p')?.parse().ok()?;
    (k >= 1).then_some(k)
}

fn member_name(k: usize) -> String {
    if k == 0 {
        "ctrl".into()
    } else {
        format!("p{k:02}")
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

type MemberMap = BTreeMap<usize, f64>;

/// Reads forecast and observation CSVs into per-station datasets (sorted by
/// station id). Dates with a missing observation are dropped.
pub fn ingest<F: Read, O: Read>(
    forecasts: F,
    forecast_name: &str,
    observations: O,
    obs_name: &str,
) -> Result<Vec<StationDataset>> {
    let perr = |file: &str, line: usize, message: String| Error::Parse {
        file: file.to_string(),
        line,
        message,
    };
    // station -> date -> variable -> member -> value
    let mut fc: BTreeMap<String, BTreeMap<NaiveDate, BTreeMap<String, MemberMap>>> =
        BTreeMap::new();
    let mut variable_order: Vec<String> = Vec::new();
    let mut rdr = csv::Reader::from_reader(forecasts);
    let header = rdr
        .headers()
        .map_err(|e| perr(forecast_name, 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["station_id", "date", "variable", "member", "value"] {
        return Err(perr(
            forecast_name,
            1,
            format!(
                "expected header station_id,date,variable,member,value, got {:?}",
                header
            ),
        ));
    }
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| perr(forecast_name, line, e.to_string()))?;
        let date = parse_date(&rec[1])
            .ok_or_else(|| perr(forecast_name, line, format!("bad date {:?}", &rec[1])))?;
        let member = member_index(&rec[3])
            .ok_or_else(|| perr(forecast_name, line, format!("bad member {:?}", &rec[3])))?;
        let value: f64 = rec[4]
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| perr(forecast_name, line, format!("bad value {:?}", &rec[4])))?;
        let var = rec[2].to_string();
        if !variable_order.contains(&var) {
            variable_order.push(var.clone());
        }
        let slot = fc
            .entry(rec[0].to_string())
            .or_default()
            .entry(date)
            .or_default()
            .entry(var)
            .or_default();
        if slot.insert(member, value).is_some() {
            return Err(perr(
                forecast_name,
                line,
                format!(
                    "duplicate forecast {} {} {} {}",
                    &rec[0], date, &rec[2], &rec[3]
                ),
            ));
        }
    }
    if fc.is_empty() {
        return Err(Error::Data(format!("{forecast_name}: no forecast rows")));
    }

    let mut obs: BTreeMap<(String, NaiveDate), f64> = BTreeMap::new();
    let mut rdr = csv::Reader::from_reader(observations);
    let header = rdr
        .headers()
        .map_err(|e| perr(obs_name, 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["station_id", "date", "value"] {
        return Err(perr(
            obs_name,
            1,
            format!("expected header station_id,date,value, got {:?}", header),
        ));
    }
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| perr(obs_name, line, e.to_string()))?;
        let date = parse_date(&rec[1])
            .ok_or_else(|| perr(obs_name, line, format!("bad date {:?}", &rec[1])))?;
        let raw = rec[2].trim();
        let value = if raw.is_empty()
            || raw.eq_ignore_ascii_case("na")
            || raw.eq_ignore_ascii_case("nan")
        {
            f64::NAN
        } else {
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(obs_name, line, format!("bad value {raw:?}")))?
        };
        if obs.insert((rec[0].to_string(), date), value).is_some() {
            return Err(perr(
                obs_name,
                line,
                format!("duplicate observation {} {date}", &rec[0]),
            ));
        }
    }

    let mut out = Vec::with_capacity(fc.len());
    for (station, by_date) in fc {
        // every member seen for a variable at this station is expected on every date
        let mut members: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for vars in by_date.values() {
            for (var, m) in vars {
                members
                    .entry(var.as_str())
                    .or_default()
                    .extend(m.keys().copied());
            }
        }
        let mut ds = StationDataset {
            station_id: station.clone(),
            dates: Vec::new(),
            observations: Vec::new(),
            forecasts: variable_order
                .iter()
                .map(|v| VariableForecasts {
                    variable: v.clone(),
                    ctrl: Vec::new(),
                    perturbed: Vec::new(),
                })
                .collect(),
        };
        let mut dropped = 0usize;
        for (date, vars) in &by_date {
            for var in &variable_order {
                let m = vars.get(var).ok_or_else(|| {
                    Error::Data(format!(
                        "missing forecasts for station {station}, date {date}, variable {var}"
                    ))
                })?;
                let keys: BTreeSet<usize> = m.keys().copied().collect();
                if members[var.as_str()] != keys || !keys.contains(&0) {
                    return Err(Error::Data(format!(
                        "missing member for station {station}, date {date}, variable {var}"
                    )));
                }
            }
            let y = obs
                .get(&(station.clone(), *date))
                .copied()
                .unwrap_or(f64::NAN);
            if y.is_nan() {
                dropped += 1;
                continue;
            }
            ds.dates.push(*date);
            ds.observations.push(y);
            for (f, var) in ds.forecasts.iter_mut().zip(&variable_order) {
                let m = &vars[var];
                f.ctrl.push(m[&0]);
                f.perturbed.push(m.range(1..).map(|(_, v)| *v).collect());
            }
        }
        if dropped > 0 {
            info!("{station}: dropped {dropped} dates without an observation");
        }
        ds.validate()?;
        out.push(ds);
    }
    Ok(out)
}

/// Canonical forecast CSV: stations in the given order, dates ascending,
/// variables in dataset order, control before perturbed members.
pub fn write_forecasts<W: Write>(out: W, datasets: &[StationDataset]) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "station_id,date,variable,member,value")?;
    for ds in datasets {
        for (t, date) in ds.dates.iter().enumerate() {
            for f in &ds.forecasts {
                writeln!(
                    w,
                    "{},{date},{},ctrl,{}",
                    ds.station_id, f.variable, f.ctrl[t]
                )?;
                for (k, v) in f.perturbed[t].iter().enumerate() {
                    writeln!(
                        w,
                        "{},{date},{},{},{v}",
                        ds.station_id,
                        f.variable,
                        member_name(k + 1)
                    )?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_observations<W: Write>(out: W, datasets: &[StationDataset]) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "station_id,date,value")?;
    for ds in datasets {
        for (date, y) in ds.dates.iter().zip(&ds.observations) {
            writeln!(w, "{},{date},{y}", ds.station_id)?;
        }
    }
    w.flush()?;
    Ok(())
}
