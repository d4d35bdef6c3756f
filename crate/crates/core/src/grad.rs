//! Gradients of LogS and CRPS with respect to the linear predictors of a
//! normal mixture: softmax-linked weights, identity-linked locations and
//! log-linked scales.
//!
//! Both BFGS (through the chain rule over coefficients) and boosting (as the
//! negative-gradient working response) consume these.

use crate::dist::{big_phi, log_component, phi, MixtureParams, HALF_LN_2PI};
use crate::error::{Error, Result};
use crate::estimate::Loss;

/// ∂ℓ/∂η for every linear predictor of a `K`-component mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorGradients {
    pub d_eta_mu: Vec<f64>,
    pub d_eta_sigma: Vec<f64>,
    pub d_eta_omega: Vec<f64>,
}

impl PredictorGradients {
    fn zeros(k: usize) -> Self {
        PredictorGradients {
            d_eta_mu: vec![0.0; k],
            d_eta_sigma: vec![0.0; k],
            d_eta_omega: vec![0.0; k],
        }
    }
}

/// Softmax, shifted by the maximum before exponentiation.
pub fn softmax(etas: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; etas.len()];
    softmax_into(etas, &mut out);
    out
}

pub(crate) fn softmax_into(etas: &[f64], out: &mut [f64]) {
    let max = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &e) in out.iter_mut().zip(etas) {
        *o = (e - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Posterior component probabilities π_k = ω_k f_k(y) / Σ_i ω_i f_i(y).
pub fn posterior_probs(params: &MixtureParams, y: f64) -> Result<Vec<f64>> {
    let k = params.n_components();
    let mut g = PredictorGradients::zeros(k);
    let mut post = vec![0.0; k];
    logs_kernel(
        params.weights(),
        params.locations(),
        params.scales(),
        y,
        &mut g.d_eta_mu,
        &mut g.d_eta_sigma,
        &mut g.d_eta_omega,
        &mut post,
    )
    .ok_or(Error::ScoreOverflow { y })?;
    Ok(post)
}

/// Gradients of the logarithmic score.
pub fn logs_gradients(params: &MixtureParams, y: f64) -> Result<PredictorGradients> {
    loss_gradients(Loss::LogS, params, y).map(|(_, g)| g)
}

/// Gradients of the CRPS.
pub fn crps_gradients(params: &MixtureParams, y: f64) -> Result<PredictorGradients> {
    loss_gradients(Loss::Crps, params, y).map(|(_, g)| g)
}

/// Loss value together with its predictor gradients.
pub fn loss_gradients(
    loss: Loss,
    params: &MixtureParams,
    y: f64,
) -> Result<(f64, PredictorGradients)> {
    if !y.is_finite() {
        return Err(Error::domain(format!(
            "observation must be finite, got {y}"
        )));
    }
    let k = params.n_components();
    let mut g = PredictorGradients::zeros(k);
    let mut scratch = vec![0.0; k];
    let value = loss_grad_slices(
        loss,
        params.weights(),
        params.locations(),
        params.scales(),
        y,
        &mut g.d_eta_mu,
        &mut g.d_eta_sigma,
        &mut g.d_eta_omega,
        &mut scratch,
    )
    .ok_or(Error::ScoreOverflow { y })?;
    Ok((value, g))
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn loss_grad_slices(
    loss: Loss,
    w: &[f64],
    m: &[f64],
    s: &[f64],
    y: f64,
    d_mu: &mut [f64],
    d_sigma: &mut [f64],
    d_omega: &mut [f64],
    scratch: &mut [f64],
) -> Option<f64> {
    match loss {
        Loss::LogS => logs_kernel(w, m, s, y, d_mu, d_sigma, d_omega, scratch),
        Loss::Crps => Some(crps_kernel(w, m, s, y, d_mu, d_sigma, d_omega, scratch)),
    }
}

/// LogS value and gradients; `post` receives the posterior probabilities.
#[allow(clippy::too_many_arguments)]
fn logs_kernel(
    w: &[f64],
    m: &[f64],
    s: &[f64],
    y: f64,
    d_mu: &mut [f64],
    d_sigma: &mut [f64],
    d_omega: &mut [f64],
    post: &mut [f64],
) -> Option<f64> {
    let k = w.len();
    let mut max_term = f64::NEG_INFINITY;
    for i in 0..k {
        post[i] = log_component(w[i], m[i], s[i], y);
        max_term = max_term.max(post[i]);
    }
    if !max_term.is_finite() {
        return None;
    }
    let mut total = 0.0;
    for p in post.iter_mut() {
        *p = (*p - max_term).exp();
        total += *p;
    }
    for i in 0..k {
        post[i] /= total;
        let r = (m[i] - y) / s[i];
        d_mu[i] = post[i] * r / s[i];
        d_sigma[i] = post[i] * (1.0 - r * r);
        d_omega[i] = w[i] - post[i];
    }
    let value = -(max_term + total.ln()) + HALF_LN_2PI;
    value.is_finite().then_some(value)
}

/// CRPS value and gradients. `a` receives A(y − μ_i, σ_i²).
#[allow(clippy::too_many_arguments)]
fn crps_kernel(
    w: &[f64],
    m: &[f64],
    s: &[f64],
    y: f64,
    d_mu: &mut [f64],
    d_sigma: &mut [f64],
    d_omega: &mut [f64],
    a: &mut [f64],
) -> f64 {
    let k = w.len();
    let mut weighted_a = 0.0;
    for i in 0..k {
        let z = (y - m[i]) / s[i];
        let (cdf, pdf) = (big_phi(z), phi(z));
        a[i] = (y - m[i]) * (2.0 * cdf - 1.0) + 2.0 * s[i] * pdf;
        weighted_a += w[i] * a[i];
        d_mu[i] = 1.0 - 2.0 * cdf;
        d_sigma[i] = pdf;
        // Σ_i ω_i A(μ_i − μ_k, σ_i² + σ_k²) accumulates here first
        d_omega[i] = 0.0;
    }
    let mut pair_sum = 0.0;
    for kk in 0..k {
        let mut mu_acc = 0.0;
        let mut sigma_acc = 0.0;
        let mut b_acc = 0.0;
        for i in 0..k {
            let var = s[kk] * s[kk] + s[i] * s[i];
            let sd = var.sqrt();
            let u = (m[kk] - m[i]) / sd;
            let (cdf, pdf) = if i == kk {
                (0.5, phi(0.0))
            } else {
                (big_phi(u), phi(u))
            };
            mu_acc += w[i] * (1.0 - 2.0 * cdf);
            sigma_acc += w[i] * s[kk] / sd * pdf;
            let b = (m[kk] - m[i]) * (2.0 * cdf - 1.0) + 2.0 * sd * pdf;
            b_acc += w[i] * b;
        }
        pair_sum += w[kk] * b_acc;
        d_mu[kk] = w[kk] * (d_mu[kk] + mu_acc);
        d_sigma[kk] = 2.0 * w[kk] * s[kk] * (d_sigma[kk] - sigma_acc);
        d_omega[kk] = b_acc;
    }
    let crps = weighted_a - 0.5 * pair_sum;
    for kk in 0..k {
        // −2ω_k·CRPS + ω_k A_k + ω_k Σ_i ω_i A_i − ω_k Σ_i ω_i B_ik
        d_omega[kk] = w[kk] * (-2.0 * crps + a[kk] + weighted_a - d_omega[kk]);
    }
    crps.max(0.0)
}
