//! Forecast verification: proper scores, calibration histograms, interval
//! coverage, point errors, skill, significance tests, bootstrap errors and
//! permutation importance.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::{crps_mixture, logs_mixture, mixture_cdf, mixture_quantile, std_normal_cdf};
use crate::error::{Error, Result};
use crate::fmt::exact;
use crate::frame::Frame;
use crate::models::FittedModel;
use crate::MixtureParams;

/// Central interval level matching a 51-member ensemble: 50/52.
pub const NOMINAL_LEVEL: f64 = 50.0 / 52.0;
pub const DEFAULT_PIT_BINS: usize = 20;
pub const DEFAULT_BLOCK_LENGTH: f64 = 25.0;
pub const DEFAULT_BOOTSTRAP_REPLICATES: usize = 1000;

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Data(format!("{a} forecasts but {b} observations")));
    }
    if a == 0 {
        return Err(Error::Data("no forecast cases".into()));
    }
    Ok(())
}

pub fn pit_values(predictions: &[MixtureParams], observations: &[f64]) -> Result<Vec<f64>> {
    check_aligned(predictions.len(), observations.len())?;
    Ok(predictions
        .iter()
        .zip(observations)
        .map(|(p, &y)| mixture_cdf(p, y))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramDiag {
    pub counts: Vec<u64>,
    pub reliability_index: f64,
}

impl HistogramDiag {
    fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let reliability_index = reliability_index(&counts)?;
        Ok(HistogramDiag {
            counts,
            reliability_index,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin,count")?;
        for (b, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{c}", b + 1)?;
        }
        Ok(())
    }
}

/// `Σ_j |f_j − 1/B|` over the observed relative bin frequencies.
pub fn reliability_index(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if counts.is_empty() || total == 0 {
        return Err(Error::Data(
            "reliability index of an empty histogram".into(),
        ));
    }
    let b = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| (c as f64 / total as f64 - 1.0 / b).abs())
        .sum())
}

/// Histogram of PIT values over `bins` equal-width bins of [0, 1].
pub fn pit_histogram(pits: &[f64], bins: usize) -> Result<HistogramDiag> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0u64; bins];
    for &p in pits {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Data(format!("PIT value {p} outside [0, 1]")));
        }
        counts[((p * bins as f64) as usize).min(bins - 1)] += 1;
    }
    HistogramDiag::from_counts(counts)
}

/// Verification rank histogram with `m + 1` bins. Ties between the
/// observation and members are broken uniformly at random.
pub fn rank_histogram(
    ensemble: &[Vec<f64>],
    observations: &[f64],
    seed: u64,
) -> Result<HistogramDiag> {
    check_aligned(ensemble.len(), observations.len())?;
    let m = ensemble[0].len();
    if m == 0 {
        return Err(Error::Data("ensemble has no members".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; m + 1];
    for (i, (members, &y)) in ensemble.iter().zip(observations).enumerate() {
        if members.len() != m {
            return Err(Error::Data(format!(
                "case {i} has {} members, expected {m}",
                members.len()
            )));
        }
        let below = members.iter().filter(|&&x| x < y).count();
        let ties = members.iter().filter(|&&x| x == y).count();
        let rank = if ties > 0 {
            below + rng.random_range(0..=ties)
        } else {
            below
        };
        counts[rank] += 1;
    }
    HistogramDiag::from_counts(counts)
}

/// Coverage (percent) and mean width of the central `level` interval.
pub fn interval_coverage_width(
    predictions: &[MixtureParams],
    observations: &[f64],
    level: f64,
) -> Result<(f64, f64)> {
    check_aligned(predictions.len(), observations.len())?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "interval level {level} outside (0, 1)"
        )));
    }
    let alpha = 1.0 - level;
    let mut hits = 0usize;
    let mut width = 0.0;
    for (p, &y) in predictions.iter().zip(observations) {
        let lo = mixture_quantile(p, alpha / 2.0)?;
        let hi = mixture_quantile(p, 1.0 - alpha / 2.0)?;
        if lo <= y && y <= hi {
            hits += 1;
        }
        width += hi - lo;
    }
    let n = predictions.len() as f64;
    Ok((100.0 * hits as f64 / n, width / n))
}

/// MAE of the predictive median and RMSE of the predictive mean.
pub fn point_scores(predictions: &[MixtureParams], observations: &[f64]) -> Result<(f64, f64)> {
    let (abs, sq) = point_errors(predictions, observations)?;
    let n = abs.len() as f64;
    Ok((
        abs.iter().sum::<f64>() / n,
        (sq.iter().sum::<f64>() / n).sqrt(),
    ))
}

fn point_errors(
    predictions: &[MixtureParams],
    observations: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_aligned(predictions.len(), observations.len())?;
    let mut abs = Vec::with_capacity(predictions.len());
    let mut sq = Vec::with_capacity(predictions.len());
    for (p, &y) in predictions.iter().zip(observations) {
        abs.push((mixture_quantile(p, 0.5)? - y).abs());
        sq.push((p.mean() - y).powi(2));
    }
    Ok((abs, sq))
}

/// `1 − S̄ / S̄_ref`.
pub fn skill_score(mean_score: f64, mean_score_ref: f64) -> Result<f64> {
    if mean_score_ref == 0.0 {
        return Err(Error::Domain(
            "skill score against a zero reference score".into(),
        ));
    }
    Ok(1.0 - mean_score / mean_score_ref)
}

/// Empirical-distribution CRPS of a raw ensemble.
pub fn ensemble_crps(members: &[f64], y: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Data("ensemble has no members".into()));
    }
    let m = members.len() as f64;
    let mut x = members.to_vec();
    x.sort_by(f64::total_cmp);
    let abs_err = x.iter().map(|v| (v - y).abs()).sum::<f64>() / m;
    // Σ_i Σ_j |x_i − x_j| over sorted members is 2 Σ_i (2i − m − 1) x_i (1-based)
    let spread: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * (i as f64 + 1.0) - m - 1.0) * v)
        .sum::<f64>();
    Ok(abs_err - spread / (m * m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmResult {
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// One-sided p-value for "series a has lower loss than series b".
    pub p_a_better: f64,
}

/// Diebold–Mariano test on `d_t = a_t − b_t` with lag-0 variance.
pub fn dm_test(a: &[f64], b: &[f64]) -> Result<DmResult> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "loss series of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 30 {
        return Err(Error::Data(format!(
            "the test needs at least 30 cases, got {}",
            a.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Ok(DmResult {
            statistic: 0.0,
            p_value: 1.0,
            p_a_better: 1.0,
        });
    }
    let statistic = n.sqrt() * mean / var.sqrt();
    let lower = std_normal_cdf(statistic)?;
    Ok(DmResult {
        statistic,
        p_value: (2.0 * lower.min(1.0 - lower)).min(1.0),
        p_a_better: lower,
    })
}

/// Step-up rule: reject every hypothesis up to the largest rank `i` with
/// `p_(i) ≤ iα/n`.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let n = p_values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let cutoff = (1..=n)
        .rev()
        .find(|&i| p_values[order[i - 1]] <= i as f64 * alpha / n as f64);
    let mut reject = vec![false; n];
    if let Some(k) = cutoff {
        for &i in &order[..k] {
            reject[i] = true;
        }
    }
    reject
}

/// Stationary bootstrap standard error of the mean: blocks start at random
/// positions and have geometric lengths with mean `block_length_mean`, and
/// the series wraps around.
pub fn bootstrap_se(
    scores: &[f64],
    block_length_mean: f64,
    n_boot: usize,
    seed: u64,
) -> Result<f64> {
    let n = scores.len();
    if !(block_length_mean >= 1.0) {
        return Err(Error::Config(format!(
            "mean block length {block_length_mean} below 1"
        )));
    }
    if (n as f64) < 2.0 * block_length_mean {
        return Err(Error::Data(format!(
            "{n} cases are too few for a mean block length of {block_length_mean}"
        )));
    }
    if n_boot < 2 {
        return Err(Error::Config("need at least 2 bootstrap replicates".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_new = 1.0 / block_length_mean;
    let means: Vec<f64> = (0..n_boot)
        .map(|_| {
            let mut pos = rng.random_range(0..n);
            let mut sum = 0.0;
            for _ in 0..n {
                sum += scores[pos];
                pos = if rng.random::<f64>() < p_new {
                    rng.random_range(0..n)
                } else {
                    (pos + 1) % n
                };
            }
            sum / n as f64
        })
        .collect();
    let m = means.iter().sum::<f64>() / n_boot as f64;
    Ok((means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n_boot - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Importance {
    pub covariate: String,
    /// Mean CRPS increase over cases and repeats.
    pub importance: f64,
    /// Per-case CRPS increase averaged over repeats, for standard errors.
    pub per_case: Vec<f64>,
}

/// Mean CRPS increase when one covariate's test values are permuted. The
/// permutation acts on the anomaly design (after transform and climatology),
/// so seasonality is not scrambled into the covariate.
pub fn permutation_importance(
    model: &FittedModel,
    design: &Frame,
    doys: &[u32],
    observations: &[f64],
    covariate: &str,
    seed: u64,
    repeats: usize,
) -> Result<Importance> {
    check_aligned(design.n_rows(), observations.len())?;
    if design.column(covariate).is_none() {
        return Err(Error::Data(format!("unknown covariate {covariate}")));
    }
    if repeats == 0 {
        return Err(Error::Config(
            "permutation importance needs at least one repeat".into(),
        ));
    }
    let crps_of = |frame: &Frame| -> Result<Vec<f64>> {
        model
            .predict_from_anomalies(frame, doys)?
            .into_iter()
            .zip(observations)
            .map(|(p, &y)| crps_mixture(&p?, y))
            .collect()
    };
    let base = crps_of(design)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_case = vec![0.0; base.len()];
    for _ in 0..repeats {
        let mut permuted = design.clone();
        permuted
            .column_mut(covariate)
            .expect("checked above")
            .shuffle(&mut rng);
        for ((acc, p), b) in per_case.iter_mut().zip(crps_of(&permuted)?).zip(&base) {
            *acc += (p - b) / repeats as f64;
        }
    }
    Ok(Importance {
        covariate: covariate.to_string(),
        importance: per_case.iter().sum::<f64>() / per_case.len() as f64,
        per_case,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub block_length: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            block_length: DEFAULT_BLOCK_LENGTH,
            replicates: DEFAULT_BOOTSTRAP_REPLICATES,
            seed: 1,
        }
    }
}

/// A metric with its bootstrap standard error (NaN when the series is too
/// short to bootstrap).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub model: String,
    pub station: String,
    pub n_cases: usize,
    pub crps: Metric,
    pub logs: Metric,
    pub mae: Metric,
    pub rmse: Metric,
    pub coverage: Metric,
    pub width: Metric,
    /// Per-case CRPS, kept for significance tests.
    pub crps_cases: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ScoreReport {
    pub fn compute(
        model: &str,
        station: &str,
        predictions: &[MixtureParams],
        observations: &[f64],
        level: f64,
        boot: &BootstrapOptions,
    ) -> Result<Self> {
        check_aligned(predictions.len(), observations.len())?;
        let n = predictions.len();
        let mut crps = Vec::with_capacity(n);
        let mut logs = Vec::with_capacity(n);
        let mut covered = Vec::with_capacity(n);
        let mut width = Vec::with_capacity(n);
        let alpha = 1.0 - level;
        for (i, (p, &y)) in predictions.iter().zip(observations).enumerate() {
            crps.push(crps_mixture(p, y).map_err(|e| e.at_row(i))?);
            logs.push(logs_mixture(p, y).map_err(|e| e.at_row(i))?);
            let lo = mixture_quantile(p, alpha / 2.0)?;
            let hi = mixture_quantile(p, 1.0 - alpha / 2.0)?;
            covered.push(if lo <= y && y <= hi { 100.0 } else { 0.0 });
            width.push(hi - lo);
        }
        let (abs, sq) = point_errors(predictions, observations)?;
        let se = |v: &[f64]| {
            bootstrap_se(v, boot.block_length, boot.replicates, boot.seed).unwrap_or(f64::NAN)
        };
        let metric = |v: &[f64]| Metric {
            value: mean(v),
            se: se(v),
        };
        // RMSE is not a mean of per-case values; its error comes from the
        // delta method on the bootstrapped mean squared error.
        let mse = metric(&sq);
        let rmse = mse.value.sqrt();
        Ok(ScoreReport {
            model: model.to_string(),
            station: station.to_string(),
            n_cases: n,
            crps: metric(&crps),
            logs: metric(&logs),
            mae: metric(&abs),
            rmse: Metric {
                value: rmse,
                se: if rmse > 0.0 {
                    mse.se / (2.0 * rmse)
                } else {
                    0.0
                },
            },
            coverage: metric(&covered),
            width: metric(&width),
            crps_cases: crps,
        })
    }

    pub fn metrics(&self) -> [(&'static str, Metric); 6] {
        [
            ("crps", self.crps),
            ("logs", self.logs),
            ("mae", self.mae),
            ("rmse", self.rmse),
            ("coverage", self.coverage),
            ("width", self.width),
        ]
    }

    pub fn write_rows<W: Write>(&self, mut out: W) -> Result<()> {
        for (name, m) in self.metrics() {
            writeln!(
                out,
                "{},{},{name},{},{}",
                self.model,
                self.station,
                exact(m.value),
                exact(m.se)
            )?;
        }
        Ok(())
    }
}

pub const SCORES_HEADER: &str = "model,station,metric,value,se";
