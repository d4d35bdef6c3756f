//! Normal and normal-mixture distribution math.
//!
//! The scoring functions here are the loss functions of the estimators as well
//! as the verification scores, so there is exactly one implementation of each.
//! Internal `*_slices` kernels work on borrowed component slices and are used
//! in the hot loops of fitting; the public functions validate and delegate.

use crate::error::{Error, Result};

/// 1/√(2π)
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// ½·log(2π)
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// 1/√π
pub const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const QUANTILE_TOL: f64 = 1e-10;
const QUANTILE_BRACKET_SDS: f64 = 40.0;

#[inline]
pub(crate) fn phi(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

#[inline]
pub(crate) fn big_phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// A(μ, σ²) = μ(2Φ(μ/σ) − 1) + 2σφ(μ/σ), which equals E|X| for X ~ N(μ, σ²).
#[inline]
pub(crate) fn a_unchecked(mu: f64, var: f64) -> f64 {
    let s = var.sqrt();
    let z = mu / s;
    mu * (2.0 * big_phi(z) - 1.0) + 2.0 * s * phi(z)
}

/// Standard normal density φ(z).
pub fn std_normal_pdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::domain(format!(
            "std_normal_pdf: non-finite input {z}"
        )));
    }
    Ok(phi(z))
}

/// Standard normal distribution function Φ(z), via the complementary error
/// function so that both tails keep full relative accuracy.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::domain(format!(
            "std_normal_cdf: non-finite input {z}"
        )));
    }
    Ok(big_phi(z))
}

/// E|X| for X ~ N(`mu`, `var`).
pub fn a_func(mu: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() || !mu.is_finite() {
        return Err(Error::domain(format!(
            "a_func: need finite mu and var > 0, got ({mu}, {var})"
        )));
    }
    Ok(a_unchecked(mu, var))
}

/// A single normal distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarGaussian {
    location: f64,
    scale: f64,
}

impl ScalarGaussian {
    pub fn new(location: f64, scale: f64) -> Result<Self> {
        if !location.is_finite() || !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::domain(format!(
                "normal needs finite location and scale > 0, got ({location}, {scale})"
            )));
        }
        Ok(ScalarGaussian { location, scale })
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl From<ScalarGaussian> for MixtureParams {
    fn from(g: ScalarGaussian) -> Self {
        MixtureParams {
            weights: vec![1.0],
            locations: vec![g.location],
            scales: vec![g.scale],
        }
    }
}

/// Weights, locations and scales of a `K`-component normal mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    weights: Vec<f64>,
    locations: Vec<f64>,
    scales: Vec<f64>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, locations: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || locations.len() != k || scales.len() != k {
            return Err(Error::domain(format!(
                "mixture needs K >= 1 equally long vectors, got {}/{}/{}",
                weights.len(),
                locations.len(),
                scales.len()
            )));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::domain(format!(
                "mixture weights must lie in [0, 1]: {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::domain(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if locations.iter().any(|m| !m.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite mixture location: {locations:?}"
            )));
        }
        if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::domain(format!(
                "mixture scales must be positive: {scales:?}"
            )));
        }
        Ok(MixtureParams {
            weights,
            locations,
            scales,
        })
    }

    pub fn normal(location: f64, scale: f64) -> Result<Self> {
        ScalarGaussian::new(location, scale).map(Into::into)
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Predictive mean Σ ω_k μ_k.
    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.locations)
            .map(|(w, m)| w * m)
            .sum()
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.components()
            .map(|(w, m, s)| w * phi((y - m) / s) / s)
            .sum()
    }

    pub(crate) fn components(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.locations)
            .zip(&self.scales)
            .map(|((&w, &m), &s)| (w, m, s))
    }
}

/// −log f(y), evaluated with a log-sum-exp so that only a genuinely zero
/// density (all components at zero weight or astronomically far away)
/// overflows. `None` signals that overflow.
pub(crate) fn logs_slices(w: &[f64], m: &[f64], s: &[f64], y: f64) -> Option<f64> {
    if w.len() == 1 {
        let z = (y - m[0]) / s[0];
        let v = s[0].ln() + 0.5 * z * z + HALF_LN_2PI;
        return v.is_finite().then_some(v);
    }
    let mut max_term = f64::NEG_INFINITY;
    for k in 0..w.len() {
        let t = log_component(w[k], m[k], s[k], y);
        if t > max_term {
            max_term = t;
        }
    }
    if !max_term.is_finite() {
        return None;
    }
    let mut acc = 0.0;
    for k in 0..w.len() {
        acc += (log_component(w[k], m[k], s[k], y) - max_term).exp();
    }
    let v = -(max_term + acc.ln()) + HALF_LN_2PI;
    v.is_finite().then_some(v)
}

/// log(ω φ(z)/σ) + ½log(2π)
#[inline]
pub(crate) fn log_component(w: f64, m: f64, s: f64, y: f64) -> f64 {
    let z = (y - m) / s;
    w.ln() - s.ln() - 0.5 * z * z
}

pub(crate) fn crps_slices(w: &[f64], m: &[f64], s: &[f64], y: f64) -> f64 {
    let k = w.len();
    let mut first = 0.0;
    for i in 0..k {
        first += w[i] * a_unchecked(y - m[i], s[i] * s[i]);
    }
    let mut second = 0.0;
    for i in 0..k {
        for j in 0..k {
            second += w[i] * w[j] * a_unchecked(m[i] - m[j], s[i] * s[i] + s[j] * s[j]);
        }
    }
    (first - 0.5 * second).max(0.0)
}

pub(crate) fn cdf_slices(w: &[f64], m: &[f64], s: &[f64], y: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..w.len() {
        acc += w[k] * big_phi((y - m[k]) / s[k]);
    }
    acc.clamp(0.0, 1.0)
}

fn check_y(y: f64) -> Result<()> {
    if y.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "observation must be finite, got {y}"
        )))
    }
}

/// Logarithmic score −log f(y) of a normal mixture.
pub fn logs_mixture(params: &MixtureParams, y: f64) -> Result<f64> {
    check_y(y)?;
    logs_slices(&params.weights, &params.locations, &params.scales, y)
        .ok_or(Error::ScoreOverflow { y })
}

/// Closed-form CRPS of a normal mixture:
/// Σ_k ω_k A(y−μ_k, σ_k²) − ½ Σ_k Σ_j ω_k ω_j A(μ_k−μ_j, σ_k²+σ_j²).
pub fn crps_mixture(params: &MixtureParams, y: f64) -> Result<f64> {
    check_y(y)?;
    Ok(crps_slices(
        &params.weights,
        &params.locations,
        &params.scales,
        y,
    ))
}

/// Mixture distribution function; accepts ±∞.
pub fn mixture_cdf(params: &MixtureParams, y: f64) -> f64 {
    cdf_slices(&params.weights, &params.locations, &params.scales, y)
}

/// Quantile function by safeguarded Newton iteration inside a bisection
/// bracket spanning 40 standard deviations beyond the outermost components.
pub fn mixture_quantile(params: &MixtureParams, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "quantile level must lie in (0, 1), got {p}"
        )));
    }
    if params.n_components() == 1 {
        // Single normal: Newton on the standardized scale converges fast from 0.
        let z = std_normal_quantile(p);
        return Ok(params.locations[0] + params.scales[0] * z);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, m, s) in params.components() {
        lo = lo.min(m - QUANTILE_BRACKET_SDS * s);
        hi = hi.max(m + QUANTILE_BRACKET_SDS * s);
    }
    let mut x = params.mean().clamp(lo, hi);
    for _ in 0..200 {
        let f = mixture_cdf(params, x) - p;
        if f.abs() <= QUANTILE_TOL {
            return Ok(x);
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = params.pdf(x);
        let newton = x - f / d;
        x = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            return Ok(x);
        }
    }
    Ok(x)
}

/// Standard normal quantile, refined to the accuracy of [`big_phi`].
fn std_normal_quantile(p: f64) -> f64 {
    // Bracketing on z ∈ [-40, 40], Newton from 0.
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    let mut z = 0.0;
    for _ in 0..200 {
        let f = big_phi(z) - p;
        if f.abs() <= QUANTILE_TOL * 1e-2 {
            break;
        }
        if f > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let d = phi(z);
        let newton = z - f / d;
        z = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 {
            break;
        }
    }
    z
}
