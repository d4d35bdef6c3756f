//! Variable transforms, seasonal climatologies and standardized anomalies.
//!
//! A climatology is a normal distribution whose location and log-scale each
//! carry an intercept and one sine/cosine pair in the day of year:
//!
//! ```text
//! μ(doy)     = a0 + a1·sin(2π·doy/365.25) + a2·cos(2π·doy/365.25)
//! log σ(doy) = b0 + b1·sin(2π·doy/365.25) + b2·cos(2π·doy/365.25)
//! ```
//!
//! It is always fitted by maximum likelihood (minimum LogS), whatever loss
//! the downstream model uses.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{
    fit_single_normal, scale_from_eta, BfgsOptions, Coefficients, LinearPredictorSpec, Loss,
    ModelSpec, PredictorTarget, StopReason, SCALE_ETA_BOUND,
};
use crate::fmt::exact;
use crate::frame::Frame;
use crate::MixtureParams;

pub const YEAR_LENGTH: f64 = 365.25;

/// Inputs this close to a domain boundary are clamped onto it before
/// transforming.
pub const TRANSFORM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    Identity,
    Log,
    Logit,
    /// `logit(x / 2)`, for spreads of variables bounded in [0, 1].
    HalfLogit,
}

impl Transform {
    /// Closed domain `[lo, hi]` of the transform.
    fn domain(&self) -> (f64, f64) {
        match self {
            Transform::Identity => (f64::NEG_INFINITY, f64::INFINITY),
            Transform::Log => (0.0, f64::INFINITY),
            Transform::Logit => (0.0, 1.0),
            Transform::HalfLogit => (0.0, 2.0),
        }
    }

    /// `h(x)`. Values on a boundary of the domain are moved inside by
    /// [`TRANSFORM_EPS`]; values outside it are an error naming `variable`.
    pub fn forward(&self, x: f64, variable: &str) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !x.is_finite() || x < lo || x > hi {
            return Err(Error::Domain(format!(
                "{variable}: value {x} is outside the domain of the {self} transform"
            )));
        }
        let x = x.clamp(lo + TRANSFORM_EPS, hi - TRANSFORM_EPS);
        Ok(match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Logit => (x / (1.0 - x)).ln(),
            Transform::HalfLogit => (x / (2.0 - x)).ln(),
        })
    }

    /// `h⁻¹(z)`.
    pub fn inverse(&self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Log => z.exp(),
            Transform::Logit => logistic(z),
            Transform::HalfLogit => 2.0 * logistic(z),
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn apply_transform(t: Transform, x: f64) -> Result<f64> {
    t.forward(x, "value")
}

pub fn invert_transform(t: Transform, z: f64) -> f64 {
    t.inverse(z)
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::Identity => "identity",
            Transform::Log => "log",
            Transform::Logit => "logit",
            Transform::HalfLogit => "half-logit",
        })
    }
}

impl FromStr for Transform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Transform::Identity),
            "log" => Ok(Transform::Log),
            "logit" => Ok(Transform::Logit),
            "half-logit" => Ok(Transform::HalfLogit),
            _ => Err(Error::Config(format!("unknown transform {s:?}"))),
        }
    }
}

/// Transforms applied to the ensemble mean, control and spread of a weather
/// variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SummaryTransforms {
    pub mean: Transform,
    pub ctrl: Transform,
    pub sd: Transform,
}

pub fn summary_transforms(variable: &str) -> Option<SummaryTransforms> {
    use Transform::*;
    let t = |mean, ctrl, sd| SummaryTransforms { mean, ctrl, sd };
    match variable {
        "t2m" | "pr" | "u10m" | "v10m" => Some(t(Identity, Identity, Log)),
        "sh" | "ws10m" | "wg10m" => Some(t(Log, Log, Log)),
        "tcc" => Some(t(Logit, Logit, HalfLogit)),
        _ => None,
    }
}

/// Day of year with 1 January = 1; in leap years 29 February = 60 and
/// 31 December = 366.
pub fn day_of_year(date: NaiveDate) -> u32 {
    date.ordinal()
}

#[inline]
pub fn harmonics(doy: u32) -> (f64, f64) {
    let angle = 2.0 * PI * doy as f64 / YEAR_LENGTH;
    angle.sin_cos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimatologyFit {
    pub station_id: String,
    pub variable: String,
    pub loc_coeffs: [f64; 3],
    pub scale_coeffs: [f64; 3],
}

impl ClimatologyFit {
    /// Standard normal at every day of year; standardizing with it is a no-op.
    pub fn identity(station_id: &str, variable: &str) -> Self {
        ClimatologyFit {
            station_id: station_id.to_string(),
            variable: variable.to_string(),
            loc_coeffs: [0.0; 3],
            scale_coeffs: [0.0; 3],
        }
    }

    pub fn location(&self, doy: u32) -> f64 {
        let (s, c) = harmonics(doy);
        self.loc_coeffs[0] + self.loc_coeffs[1] * s + self.loc_coeffs[2] * c
    }

    pub fn scale(&self, doy: u32) -> f64 {
        let (s, c) = harmonics(doy);
        scale_from_eta(self.scale_coeffs[0] + self.scale_coeffs[1] * s + self.scale_coeffs[2] * c)
    }

    pub fn standardize_value(&self, x: f64, doy: u32) -> f64 {
        (x - self.location(doy)) / self.scale(doy)
    }

    pub fn destandardize_value(&self, z: f64, doy: u32) -> f64 {
        z * self.scale(doy) + self.location(doy)
    }
}

fn climatology_spec() -> ModelSpec {
    let basis = ["sin", "cos"];
    ModelSpec::new(
        "climatology",
        1,
        vec![
            LinearPredictorSpec::new(PredictorTarget::Location(0), &basis, true),
            LinearPredictorSpec::new(PredictorTarget::Scale(0), &basis, true),
        ],
        Loss::LogS,
        vec![basis.iter().map(|s| s.to_string()).collect()],
    )
    .expect("static climatology spec is valid")
}

fn check_doy(doy: u32) -> Result<()> {
    if (1..=366).contains(&doy) {
        Ok(())
    } else {
        Err(Error::Data(format!("day of year {doy} outside 1..=366")))
    }
}

/// Maximum-likelihood seasonal climatology. Missing (NaN) values are dropped
/// first.
pub fn fit_climatology(
    station_id: &str,
    variable: &str,
    values: &[f64],
    doys: &[u32],
    opts: &BfgsOptions,
) -> Result<ClimatologyFit> {
    if values.len() != doys.len() {
        return Err(Error::Data(format!(
            "{station_id}/{variable}: {} values but {} days of year",
            values.len(),
            doys.len()
        )));
    }
    let mut y = Vec::with_capacity(values.len());
    let mut sin = Vec::with_capacity(values.len());
    let mut cos = Vec::with_capacity(values.len());
    let mut distinct = std::collections::BTreeSet::new();
    for (&v, &d) in values.iter().zip(doys) {
        if v.is_nan() {
            continue;
        }
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "{station_id}/{variable}: non-finite value {v}"
            )));
        }
        check_doy(d)?;
        let (s, c) = harmonics(d);
        y.push(v);
        sin.push(s);
        cos.push(c);
        distinct.insert(d);
    }
    if y.len() < 10 || distinct.len() < 2 {
        return Err(Error::Data(format!(
            "{station_id}/{variable}: climatology needs at least 10 observations on 2 distinct days, got {} on {}",
            y.len(),
            distinct.len()
        )));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();

    if sd == 0.0 {
        // The likelihood increases without bound as σ → 0; return its limit
        // inside the scale clamp rather than an arbitrary point on the plateau.
        return Ok(ClimatologyFit {
            station_id: station_id.to_string(),
            variable: variable.to_string(),
            loc_coeffs: [mean, 0.0, 0.0],
            scale_coeffs: [-SCALE_ETA_BOUND, 0.0, 0.0],
        });
    }
    let spec = climatology_spec();
    let frame = Frame::from_columns(vec![("sin".into(), sin), ("cos".into(), cos)])?;
    let start = Coefficients {
        intercepts: vec![mean, sd.max(1e-6).ln()],
        slopes: vec![vec![0.0; 2], vec![0.0; 2]],
    };
    let fit = fit_single_normal(&spec, &frame, &y, opts, Some(start))?;
    if fit.stop == StopReason::MaxIterations {
        return Err(Error::NoConvergence {
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
        });
    }
    let c = fit.coefficients;
    Ok(ClimatologyFit {
        station_id: station_id.to_string(),
        variable: variable.to_string(),
        loc_coeffs: [c.intercepts[0], c.slopes[0][0], c.slopes[0][1]],
        scale_coeffs: [c.intercepts[1], c.slopes[1][0], c.slopes[1][1]],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySeries {
    pub station_id: String,
    pub variable: String,
    pub values: Vec<f64>,
    pub doys: Vec<u32>,
}

/// `z_i = (x_i − μ(doy_i)) / σ(doy_i)`.
pub fn standardize(values: &[f64], doys: &[u32], fit: &ClimatologyFit) -> Result<AnomalySeries> {
    if values.len() != doys.len() {
        return Err(Error::Data(format!(
            "{} values but {} days of year",
            values.len(),
            doys.len()
        )));
    }
    let mut out = Vec::with_capacity(values.len());
    for (i, (&x, &d)) in values.iter().zip(doys).enumerate() {
        check_doy(d)?;
        if !x.is_finite() {
            return Err(Error::Data(format!(
                "{}/{}: value at index {i} is not finite",
                fit.station_id, fit.variable
            )));
        }
        out.push(fit.standardize_value(x, d));
    }
    Ok(AnomalySeries {
        station_id: fit.station_id.clone(),
        variable: fit.variable.clone(),
        values: out,
        doys: doys.to_vec(),
    })
}

/// Maps an anomaly-scale mixture to the observed scale of the response.
/// Weights are scale-free and pass through unchanged.
pub fn destandardize_mixture(
    z: &MixtureParams,
    fit_y: &ClimatologyFit,
    doy: u32,
) -> Result<MixtureParams> {
    check_doy(doy)?;
    let (mu, sigma) = (fit_y.location(doy), fit_y.scale(doy));
    MixtureParams::new(
        z.weights().to_vec(),
        z.locations().iter().map(|m| m * sigma + mu).collect(),
        z.scales().iter().map(|s| s * sigma).collect(),
    )
}

#[derive(Serialize, Deserialize)]
struct ClimatologyRecord {
    station_id: String,
    variable: String,
    loc0: String,
    loc1: String,
    loc2: String,
    scale0: String,
    scale1: String,
    scale2: String,
}

pub fn write_climatologies<W: Write>(out: W, fits: &[ClimatologyFit]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for f in fits {
        w.serialize(ClimatologyRecord {
            station_id: f.station_id.clone(),
            variable: f.variable.clone(),
            loc0: exact(f.loc_coeffs[0]),
            loc1: exact(f.loc_coeffs[1]),
            loc2: exact(f.loc_coeffs[2]),
            scale0: exact(f.scale_coeffs[0]),
            scale1: exact(f.scale_coeffs[1]),
            scale2: exact(f.scale_coeffs[2]),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_climatologies<R: Read>(input: R, file: &str) -> Result<Vec<ClimatologyFit>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<ClimatologyRecord>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            file: file.to_string(),
            line,
            message: e.to_string(),
        })?;
        let num = |s: &str| {
            crate::fmt::parse_f64(s).ok_or_else(|| Error::Parse {
                file: file.to_string(),
                line,
                message: format!("bad number {s:?}"),
            })
        };
        out.push(ClimatologyFit {
            loc_coeffs: [num(&rec.loc0)?, num(&rec.loc1)?, num(&rec.loc2)?],
            scale_coeffs: [num(&rec.scale0)?, num(&rec.scale1)?, num(&rec.scale2)?],
            station_id: rec.station_id,
            variable: rec.variable,
        });
    }
    Ok(out)
}
