//! Seeded synthetic ensemble/observation data with known ground truth.
//!
//! Every variable is driven by AR(1) latent anomalies per station. A forecast
//! member is `h⁻¹(m(doy) + s(doy) · anomaly)` with `h` the variable's natural
//! transform (identity, log or logit), and the observation is
//! `μ(doy) + σ(doy) · Z` where the scenario decides how `Z` relates to the
//! latents. Values are rounded to 7 significant digits.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::{StationDataset, VariableForecasts};
use super::station_seed;
use crate::climo::day_of_year;
use crate::climo::harmonics;
use crate::error::{Error, Result};
use crate::fmt::exact;
use crate::models::STANDARD_VARIABLES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Biased, mildly underdispersed ensemble whose mean tracks the truth.
    SeasonalBasic,
    /// Unbiased ensemble with far too little spread.
    Underdispersed,
    /// The control run sits a fixed distance above or below the perturbed
    /// members, and the observation follows one of the two regimes with a
    /// probability that depends on `tcc.mean`.
    Bimodal,
    /// Mean, control and spread of every variable are independent; the
    /// location truth uses `t2m.mean`, `sh.mean` and `v10m.ctrl` only.
    SparseSignal,
}

pub const SCENARIOS: [Scenario; 4] = [
    Scenario::SeasonalBasic,
    Scenario::Underdispersed,
    Scenario::Bimodal,
    Scenario::SparseSignal,
];

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::SeasonalBasic => "seasonal-basic",
            Scenario::Underdispersed => "underdispersed",
            Scenario::Bimodal => "bimodal",
            Scenario::SparseSignal => "sparse-signal",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SCENARIOS
            .iter()
            .copied()
            .find(|sc| sc.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub stations: usize,
    pub start_year: i32,
    pub train_years: u32,
    pub test_years: u32,
    /// Perturbed members; the control run comes on top.
    pub members: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            stations: 10,
            start_year: 2016,
            train_years: 4,
            test_years: 1,
            members: 50,
        }
    }
}

impl SimulationOptions {
    pub fn first_date(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.start_year, 1, 1).expect("valid year")
    }

    /// First day of the test period.
    pub fn test_start(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.start_year + self.train_years as i32, 1, 1)
            .expect("valid year")
    }

    pub fn last_date(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(
            self.start_year + (self.train_years + self.test_years) as i32,
            1,
            1,
        )
        .expect("valid year")
            - Duration::days(1)
    }

    fn validate(&self) -> Result<()> {
        if self.stations == 0 || self.train_years == 0 || self.members < 2 {
            return Err(Error::Config(
                "simulation needs ≥ 1 station, ≥ 1 training year and ≥ 2 members".into(),
            ));
        }
        if self.start_year < 1900 || self.start_year > 2200 {
            return Err(Error::Config(format!(
                "start year {} out of range",
                self.start_year
            )));
        }
        Ok(())
    }
}

pub fn station_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("st{i:02}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthParameter {
    pub station_id: String,
    pub parameter: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: Scenario,
    pub seed: u64,
    pub options: SimulationOptions,
    pub datasets: Vec<StationDataset>,
    pub truth: Vec<TruthParameter>,
}

pub fn write_truth<W: Write>(out: W, sim: &Simulation) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "# scenario={} seed={}", sim.scenario, sim.seed)?;
    writeln!(w, "station_id,parameter,value")?;
    for t in &sim.truth {
        writeln!(w, "{},{},{}", t.station_id, t.parameter, exact(t.value))?;
    }
    w.flush()?;
    Ok(())
}

pub const LATENT_AR: f64 = 0.6;
const SPREAD_VOLATILITY: f64 = 0.35;

#[derive(Clone, Copy)]
enum Natural {
    Identity,
    Log,
    Logit,
}

fn natural(variable: &str) -> Natural {
    match variable {
        "pr" | "sh" | "ws10m" | "wg10m" => Natural::Log,
        "tcc" => Natural::Logit,
        _ => Natural::Identity,
    }
}

fn to_physical(h: Natural, z: f64) -> f64 {
    match h {
        Natural::Identity => z,
        Natural::Log => z.exp(),
        Natural::Logit => 1.0 / (1.0 + (-z).exp()),
    }
}

fn round7(x: f64) -> f64 {
    format!("{x:.6e}").parse().expect("formatted float")
}

fn harmonic(c: &[f64; 3], doy: u32) -> f64 {
    let (s, co) = harmonics(doy);
    c[0] + c[1] * s + c[2] * co
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    fn ar1(&mut self, n: usize) -> Vec<f64> {
        let innov = (1.0 - LATENT_AR * LATENT_AR).sqrt();
        let mut x = Vec::with_capacity(n);
        let mut prev = self.normal();
        for _ in 0..n {
            x.push(prev);
            prev = LATENT_AR * prev + innov * self.normal();
        }
        x
    }
}

struct Latents {
    signal: Vec<f64>,
    control: Vec<f64>,
    spread: Vec<f64>,
}

/// Generates all stations of a scenario. Each station draws from its own
/// stream seeded by `(seed, station_id)`.
pub fn simulate(scenario: Scenario, seed: u64, options: &SimulationOptions) -> Result<Simulation> {
    options.validate()?;
    let first = options.first_date();
    let n = (options.last_date() - first).num_days() as usize + 1;
    let dates: Vec<NaiveDate> = (0..n).map(|i| first + Duration::days(i as i64)).collect();
    let doys: Vec<u32> = dates.iter().map(|d| day_of_year(*d)).collect();

    let mut datasets = Vec::with_capacity(options.stations);
    let mut truth = Vec::new();
    for id in station_ids(options.stations) {
        let mut g = Gen {
            rng: ChaCha8Rng::seed_from_u64(station_seed(seed, &id)),
        };
        let mut param = |name: &str, value: f64| {
            truth.push(TruthParameter {
                station_id: id.clone(),
                parameter: name.to_string(),
                value,
            })
        };

        let mut climate: Vec<([f64; 3], [f64; 3])> = Vec::new();
        for var in STANDARD_VARIABLES {
            let c = match (var, natural(var)) {
                ("t2m", _) => (
                    [
                        g.uniform(0.0, 15.0),
                        g.uniform(-3.0, 0.0),
                        g.uniform(-10.0, -5.0),
                    ],
                    [
                        g.uniform(1.5, 3.5).ln(),
                        g.uniform(-0.2, 0.2),
                        g.uniform(-0.2, 0.2),
                    ],
                ),
                (_, Natural::Identity) => (
                    [
                        g.uniform(-3.0, 3.0),
                        g.uniform(-1.0, 1.0),
                        g.uniform(-1.0, 1.0),
                    ],
                    [
                        g.uniform(1.0, 4.0).ln(),
                        g.uniform(-0.1, 0.1),
                        g.uniform(-0.1, 0.1),
                    ],
                ),
                _ => (
                    [
                        g.uniform(-1.0, 1.0),
                        g.uniform(-0.5, 0.5),
                        g.uniform(-0.5, 0.5),
                    ],
                    [
                        g.uniform(0.3, 1.0).ln(),
                        g.uniform(-0.1, 0.1),
                        g.uniform(-0.1, 0.1),
                    ],
                ),
            };
            climate.push(c);
        }
        let (y_loc, y_scale) = climate[0];
        for (i, v) in y_loc.iter().enumerate() {
            param(&format!("obs_loc{i}"), *v);
        }
        for (i, v) in y_scale.iter().enumerate() {
            param(&format!("obs_log_scale{i}"), *v);
        }

        let latents: Vec<Latents> = STANDARD_VARIABLES
            .iter()
            .map(|_| Latents {
                signal: g.ar1(n),
                control: g.ar1(n),
                spread: g.ar1(n),
            })
            .collect();
        let idx = |v: &str| {
            STANDARD_VARIABLES
                .iter()
                .position(|w| *w == v)
                .expect("standard variable")
        };
        let t2m = &latents[idx("t2m")];

        // Response anomaly Z plus t2m member and control anomalies.
        let mut z = Vec::with_capacity(n);
        let mut t2m_members: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut t2m_ctrl = Vec::with_capacity(n);
        let draw = |g: &mut Gen, centre: f64, sd: f64, m: usize| -> Vec<f64> {
            (0..m).map(|_| centre + sd * g.normal()).collect()
        };
        match scenario {
            Scenario::SeasonalBasic | Scenario::Underdispersed => {
                let (bias, shrink) = if scenario == Scenario::SeasonalBasic {
                    (0.25, 0.6)
                } else {
                    (0.0, 0.3)
                };
                param("bias", bias);
                param("spread_ratio", shrink);
                param("error_sd_base", 0.6);
                for t in 0..n {
                    let sd = 0.6 * (SPREAD_VOLATILITY * t2m.spread[t]).exp();
                    z.push(t2m.signal[t] + sd * g.normal());
                    t2m_ctrl.push(t2m.signal[t] + bias + shrink * sd * g.normal());
                    t2m_members.push(draw(
                        &mut g,
                        t2m.signal[t] + bias,
                        shrink * sd,
                        options.members,
                    ));
                }
            }
            Scenario::Bimodal => {
                let (w0, w1, shift, noise) = (0.4, 1.2, 2.0, 0.35);
                param("weight_intercept", w0);
                param("weight_tcc_mean", w1);
                param("regime_shift", shift);
                param("component_sd", noise);
                let tcc = &latents[idx("tcc")];
                for t in 0..n {
                    let w = 1.0 / (1.0 + (-(w0 + w1 * tcc.signal[t])).exp());
                    let a = t2m.signal[t];
                    let b = if g.uniform(0.0, 1.0) < 0.5 {
                        a - shift
                    } else {
                        a + shift
                    };
                    let centre = if g.uniform(0.0, 1.0) < w { a } else { b };
                    z.push(centre + noise * g.normal());
                    t2m_ctrl.push(b + 0.15 * g.normal());
                    let sd = 0.3 * (SPREAD_VOLATILITY * t2m.spread[t]).exp();
                    t2m_members.push(draw(&mut g, a, sd, options.members));
                }
            }
            Scenario::SparseSignal => {
                let (b_t2m, b_sh, b_v10m, noise) = (0.8, 0.5, 0.4, 0.6);
                param("beta_t2m.mean", b_t2m);
                param("beta_sh.mean", b_sh);
                param("beta_v10m.ctrl", b_v10m);
                param("noise_sd", noise);
                let (sh, v10m) = (&latents[idx("sh")], &latents[idx("v10m")]);
                for t in 0..n {
                    z.push(
                        b_t2m * t2m.signal[t]
                            + b_sh * sh.signal[t]
                            + b_v10m * v10m.control[t]
                            + noise * g.normal(),
                    );
                }
            }
        }

        let mut forecasts = Vec::with_capacity(STANDARD_VARIABLES.len());
        for (vi, var) in STANDARD_VARIABLES.iter().enumerate() {
            let h = natural(var);
            let (loc, lsc) = &climate[vi];
            let lat = &latents[vi];
            let (mut ctrl_anom, mut member_anom) = if vi == 0 && scenario != Scenario::SparseSignal
            {
                (
                    std::mem::take(&mut t2m_ctrl),
                    std::mem::take(&mut t2m_members),
                )
            } else {
                (Vec::with_capacity(n), Vec::with_capacity(n))
            };
            if member_anom.is_empty() {
                for t in 0..n {
                    let sd = 0.5 * (SPREAD_VOLATILITY * lat.spread[t]).exp();
                    let c = if scenario == Scenario::SparseSignal {
                        lat.control[t] + 0.2 * g.normal()
                    } else {
                        lat.signal[t] + sd * g.normal()
                    };
                    ctrl_anom.push(c);
                    member_anom.push(draw(&mut g, lat.signal[t], sd, options.members));
                }
            }
            let phys = |t: usize, a: f64| {
                round7(to_physical(
                    h,
                    harmonic(loc, doys[t]) + harmonic(lsc, doys[t]).exp() * a,
                ))
            };
            forecasts.push(VariableForecasts {
                variable: var.to_string(),
                ctrl: ctrl_anom
                    .iter()
                    .enumerate()
                    .map(|(t, &a)| phys(t, a))
                    .collect(),
                perturbed: member_anom
                    .iter()
                    .enumerate()
                    .map(|(t, m)| m.iter().map(|&a| phys(t, a)).collect())
                    .collect(),
            });
        }
        let observations = z
            .iter()
            .enumerate()
            .map(|(t, &zt)| {
                round7(harmonic(&y_loc, doys[t]) + harmonic(&y_scale, doys[t]).exp() * zt)
            })
            .collect();
        let ds = StationDataset {
            station_id: id.clone(),
            dates: dates.clone(),
            observations,
            forecasts,
        };
        ds.validate()?;
        datasets.push(ds);
    }
    Ok(Simulation {
        scenario,
        seed,
        options: options.clone(),
        datasets,
        truth,
    })
}
