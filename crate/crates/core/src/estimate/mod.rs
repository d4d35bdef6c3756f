//! Model specifications, loss assembly over data and BFGS estimation.
//!
//! A [`ModelSpec`] lists one linear predictor per mixture parameter in a fixed
//! order: the `K` weight predictors (absent when `K = 1`), then location and
//! scale of component 1, location and scale of component 2, and so on.
//! Coefficients of all predictors are estimated jointly by minimizing the
//! summed LogS or CRPS over the training rows.

mod bfgs;
mod file;

pub use bfgs::{minimize, BfgsOptions, BfgsOutcome, StopReason};
pub use file::{format_model_block, parse_model_block, ModelBlock, MODEL_FORMAT_VERSION};

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dist::{big_phi, phi, FRAC_1_SQRT_PI, HALF_LN_2PI};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::grad::{loss_grad_slices, softmax_into};
use crate::MixtureParams;

/// Linear predictors of scale parameters are clamped to this range before
/// exponentiation.
pub const SCALE_ETA_BOUND: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    LogS,
    Crps,
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::LogS => "logs",
            Loss::Crps => "crps",
        })
    }
}

impl FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logs" => Ok(Loss::LogS),
            "crps" => Ok(Loss::Crps),
            other => Err(Error::Config(format!(
                "unknown loss {other:?} (expected logs or crps)"
            ))),
        }
    }
}

/// Which mixture parameter a linear predictor drives. Components are
/// zero-based here and one-based in text form (`location[1]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PredictorTarget {
    Weight(usize),
    Location(usize),
    Scale(usize),
}

impl PredictorTarget {
    pub fn component(&self) -> usize {
        match *self {
            PredictorTarget::Weight(k)
            | PredictorTarget::Location(k)
            | PredictorTarget::Scale(k) => k,
        }
    }
}

impl fmt::Display for PredictorTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PredictorTarget::Weight(k) => write!(f, "weight[{}]", k + 1),
            PredictorTarget::Location(k) => write!(f, "location[{}]", k + 1),
            PredictorTarget::Scale(k) => write!(f, "scale[{}]", k + 1),
        }
    }
}

impl FromStr for PredictorTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Spec(format!("bad predictor target {s:?}"));
        let (kind, rest) = s.split_once('[').ok_or_else(bad)?;
        let k: usize = rest
            .strip_suffix(']')
            .ok_or_else(bad)?
            .parse()
            .map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match kind {
            "weight" => Ok(PredictorTarget::Weight(k - 1)),
            "location" => Ok(PredictorTarget::Location(k - 1)),
            "scale" => Ok(PredictorTarget::Scale(k - 1)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictorSpec {
    pub target: PredictorTarget,
    pub covariates: Vec<String>,
    pub has_intercept: bool,
}

impl LinearPredictorSpec {
    pub fn new(target: PredictorTarget, covariates: &[&str], has_intercept: bool) -> Self {
        LinearPredictorSpec {
            target,
            covariates: covariates.iter().map(|c| c.to_string()).collect(),
            has_intercept,
        }
    }

    fn n_coefficients(&self) -> usize {
        self.covariates.len() + usize::from(self.has_intercept)
    }
}

/// Declarative description of a normal-mixture regression model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub n_components: usize,
    pub predictors: Vec<LinearPredictorSpec>,
    pub loss: Loss,
    /// Covariates each component's predictors may use.
    pub groups: Vec<Vec<String>>,
}

pub(crate) fn valid_identifier(s: &str) -> bool {
    !s.is_empty()
        && !s
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '=' | ',' | ';' | '#'))
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        n_components: usize,
        predictors: Vec<LinearPredictorSpec>,
        loss: Loss,
        groups: Vec<Vec<String>>,
    ) -> Result<Self> {
        let spec = ModelSpec {
            name: name.into(),
            n_components,
            predictors,
            loss,
            groups,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Predictor targets in canonical order for `k` components.
    pub fn expected_targets(k: usize) -> Vec<PredictorTarget> {
        let mut out = Vec::with_capacity(3 * k);
        if k > 1 {
            out.extend((0..k).map(PredictorTarget::Weight));
        }
        for c in 0..k {
            out.push(PredictorTarget::Location(c));
            out.push(PredictorTarget::Scale(c));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_components;
        if k == 0 {
            return Err(Error::Spec("a mixture needs at least one component".into()));
        }
        if !valid_identifier(&self.name) {
            return Err(Error::Spec(format!("invalid model name {:?}", self.name)));
        }
        let targets: Vec<_> = self.predictors.iter().map(|p| p.target).collect();
        if targets != Self::expected_targets(k) {
            return Err(Error::Spec(format!(
                "predictors must be ordered {:?} for K={k}, got {targets:?}",
                Self::expected_targets(k)
            )));
        }
        if self.groups.len() != k {
            return Err(Error::Spec(format!(
                "need one covariate group per component, got {}",
                self.groups.len()
            )));
        }
        for p in &self.predictors {
            let group = &self.groups[p.target.component()];
            for (i, c) in p.covariates.iter().enumerate() {
                if !valid_identifier(c) || c == "intercept" {
                    return Err(Error::Spec(format!("invalid covariate id {c:?}")));
                }
                if p.covariates[..i].contains(c) {
                    return Err(Error::Spec(format!(
                        "{}: duplicate covariate {c}",
                        p.target
                    )));
                }
                if !group.contains(c) {
                    return Err(Error::Spec(format!(
                        "{}: covariate {c} is not in the exchangeable group of component {}",
                        p.target,
                        p.target.component() + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_coefficients(&self) -> usize {
        self.predictors
            .iter()
            .map(LinearPredictorSpec::n_coefficients)
            .sum()
    }

    fn weight_offset(&self) -> usize {
        if self.n_components > 1 {
            self.n_components
        } else {
            0
        }
    }

    pub fn predictor_index(&self, target: PredictorTarget) -> usize {
        let off = self.weight_offset();
        match target {
            PredictorTarget::Weight(k) => k,
            PredictorTarget::Location(k) => off + 2 * k,
            PredictorTarget::Scale(k) => off + 2 * k + 1,
        }
    }

    /// All distinct covariates referenced by any predictor, in first-use order.
    pub fn covariates(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.predictors {
            for c in &p.covariates {
                if !out.contains(c) {
                    out.push(c.clone());
                }
            }
        }
        out
    }

    /// Short digest of the model structure (components, loss, predictors,
    /// groups). The name does not enter.
    pub fn structure_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("K={};loss={}\n", self.n_components, self.loss));
        for p in &self.predictors {
            h.update(format!(
                "{} {} {}\n",
                p.target,
                p.has_intercept,
                p.covariates.join(",")
            ));
        }
        for g in &self.groups {
            h.update(format!("group {}\n", g.join(",")));
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Coefficients of every linear predictor. Intercepts of predictors without
/// an intercept are held at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub intercepts: Vec<f64>,
    pub slopes: Vec<Vec<f64>>,
}

impl Coefficients {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Coefficients {
            intercepts: vec![0.0; spec.predictors.len()],
            slopes: spec
                .predictors
                .iter()
                .map(|p| vec![0.0; p.covariates.len()])
                .collect(),
        }
    }

    /// Free coefficients in predictor order, intercept first.
    pub fn flatten(&self, spec: &ModelSpec) -> Vec<f64> {
        let mut out = Vec::with_capacity(spec.n_coefficients());
        for (j, p) in spec.predictors.iter().enumerate() {
            if p.has_intercept {
                out.push(self.intercepts[j]);
            }
            out.extend_from_slice(&self.slopes[j]);
        }
        out
    }

    pub fn unflatten(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.n_coefficients() {
            return Err(Error::Spec(format!(
                "expected {} coefficients, got {}",
                spec.n_coefficients(),
                flat.len()
            )));
        }
        let mut c = Coefficients::zeros(spec);
        let mut pos = 0;
        for (j, p) in spec.predictors.iter().enumerate() {
            if p.has_intercept {
                c.intercepts[j] = flat[pos];
                pos += 1;
            }
            let n = p.covariates.len();
            c.slopes[j].copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(c)
    }

    pub fn nonzero_slopes(&self) -> usize {
        self.slopes.iter().flatten().filter(|v| **v != 0.0).count()
    }
}

/// Mixture parameter buffers reused across rows.
pub(crate) struct RowBuf {
    eta_w: Vec<f64>,
    pub(crate) w: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) s: Vec<f64>,
    d_mu: Vec<f64>,
    d_sigma: Vec<f64>,
    d_omega: Vec<f64>,
    scratch: Vec<f64>,
}

impl RowBuf {
    pub(crate) fn new(k: usize) -> Self {
        RowBuf {
            eta_w: vec![0.0; k],
            w: vec![1.0; k],
            m: vec![0.0; k],
            s: vec![1.0; k],
            d_mu: vec![0.0; k],
            d_sigma: vec![0.0; k],
            d_omega: vec![0.0; k],
            scratch: vec![0.0; k],
        }
    }
}

/// Maps clamped scale predictors to σ.
#[inline]
pub(crate) fn scale_from_eta(eta: f64) -> f64 {
    eta.clamp(-SCALE_ETA_BOUND, SCALE_ETA_BOUND).exp()
}

/// Derivative of the clamp applied to scale predictors: the loss is flat in
/// η_σ outside the bound.
#[inline]
pub(crate) fn clamp_gate(eta: f64) -> f64 {
    if eta.abs() > SCALE_ETA_BOUND {
        0.0
    } else {
        1.0
    }
}

/// A model spec bound to the columns of a design matrix and the responses.
pub(crate) struct Problem<'a> {
    pub(crate) spec: &'a ModelSpec,
    columns: Vec<Vec<&'a [f64]>>,
    pub(crate) y: &'a [f64],
}

impl<'a> Problem<'a> {
    pub(crate) fn new(spec: &'a ModelSpec, frame: &'a Frame, y: &'a [f64]) -> Result<Self> {
        spec.validate()?;
        if frame.n_rows() != y.len() {
            return Err(Error::Data(format!(
                "design matrix has {} rows but there are {} responses",
                frame.n_rows(),
                y.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("response at row {i} is not finite")));
        }
        let mut columns = Vec::with_capacity(spec.predictors.len());
        for p in &spec.predictors {
            let mut cols = Vec::with_capacity(p.covariates.len());
            for c in &p.covariates {
                let col = frame.require(c)?;
                if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Data(format!(
                        "covariate {c} is not finite at row {i}"
                    )));
                }
                cols.push(col);
            }
            columns.push(cols);
        }
        Ok(Problem { spec, columns, y })
    }

    pub(crate) fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub(crate) fn column(&self, predictor: usize, covariate: usize) -> &'a [f64] {
        self.columns[predictor][covariate]
    }

    pub(crate) fn n_covariates(&self, predictor: usize) -> usize {
        self.columns[predictor].len()
    }

    /// Linear predictor values, predictor-major (`J × N`).
    pub(crate) fn etas(&self, coeffs: &Coefficients) -> Vec<Vec<f64>> {
        let n = self.n_rows();
        self.columns
            .iter()
            .enumerate()
            .map(|(j, cols)| {
                let mut eta = vec![coeffs.intercepts[j]; n];
                for (col, &beta) in cols.iter().zip(&coeffs.slopes[j]) {
                    if beta != 0.0 {
                        for (e, x) in eta.iter_mut().zip(col.iter()) {
                            *e += beta * x;
                        }
                    }
                }
                eta
            })
            .collect()
    }

    #[inline]
    pub(crate) fn fill_params(&self, eta_at: impl Fn(usize) -> f64, buf: &mut RowBuf) {
        let k = self.spec.n_components;
        let off = if k > 1 { k } else { 0 };
        if k > 1 {
            for c in 0..k {
                buf.eta_w[c] = eta_at(c);
            }
            softmax_into(&buf.eta_w, &mut buf.w);
        }
        for c in 0..k {
            buf.m[c] = eta_at(off + 2 * c);
            buf.s[c] = scale_from_eta(eta_at(off + 2 * c + 1));
        }
    }

    #[inline]
    pub(crate) fn row_loss(
        &self,
        eta_at: impl Fn(usize) -> f64,
        y: f64,
        buf: &mut RowBuf,
    ) -> Option<f64> {
        self.fill_params(eta_at, buf);
        match self.spec.loss {
            crate::estimate::Loss::LogS => crate::dist::logs_slices(&buf.w, &buf.m, &buf.s, y),
            crate::estimate::Loss::Crps => {
                Some(crate::dist::crps_slices(&buf.w, &buf.m, &buf.s, y))
            }
        }
    }

    /// Loss of row `i` and ∂ℓ/∂η_j for every predictor `j`, written to `out`.
    #[inline]
    pub(crate) fn row_loss_grad(
        &self,
        etas: &[Vec<f64>],
        i: usize,
        buf: &mut RowBuf,
        out: &mut [f64],
    ) -> Option<f64> {
        let k = self.spec.n_components;
        let off = if k > 1 { k } else { 0 };
        self.fill_params(|j| etas[j][i], buf);
        let RowBuf {
            w,
            m,
            s,
            d_mu,
            d_sigma,
            d_omega,
            scratch,
            ..
        } = buf;
        let v = loss_grad_slices(
            self.spec.loss,
            w,
            m,
            s,
            self.y[i],
            d_mu,
            d_sigma,
            d_omega,
            scratch,
        )?;
        if k > 1 {
            out[..k].copy_from_slice(d_omega);
        }
        for c in 0..k {
            out[off + 2 * c] = d_mu[c];
            out[off + 2 * c + 1] = clamp_gate(etas[off + 2 * c + 1][i]) * d_sigma[c];
        }
        Some(v)
    }

    pub(crate) fn total_loss(&self, etas: &[Vec<f64>]) -> Result<f64> {
        let mut buf = RowBuf::new(self.spec.n_components);
        let mut total = 0.0;
        for (i, &y) in self.y.iter().enumerate() {
            total += self
                .row_loss(|j| etas[j][i], y, &mut buf)
                .ok_or_else(|| Error::ScoreOverflow { y }.at_row(i))?;
        }
        Ok(total)
    }

    /// Summed loss and gradient over the flattened free coefficients.
    pub(crate) fn loss_and_gradient(&self, coeffs: &Coefficients) -> Result<(f64, Vec<f64>)> {
        let etas = self.etas(coeffs);
        let jn = self.spec.predictors.len();
        let mut buf = RowBuf::new(self.spec.n_components);
        let mut d_eta = vec![0.0; jn];
        let mut grad = Coefficients::zeros(self.spec);
        let mut total = 0.0;
        for i in 0..self.n_rows() {
            total += self
                .row_loss_grad(&etas, i, &mut buf, &mut d_eta)
                .ok_or_else(|| Error::ScoreOverflow { y: self.y[i] }.at_row(i))?;
            for (j, &d) in d_eta.iter().enumerate() {
                grad.intercepts[j] += d;
                for (g, col) in grad.slopes[j].iter_mut().zip(&self.columns[j]) {
                    *g += d * col[i];
                }
            }
        }
        Ok((total, grad.flatten(self.spec)))
    }

    pub(crate) fn params_at(&self, etas: &[Vec<f64>], i: usize) -> Result<MixtureParams> {
        let mut buf = RowBuf::new(self.spec.n_components);
        self.fill_params(|j| etas[j][i], &mut buf);
        MixtureParams::new(buf.w, buf.m, buf.s)
    }
}

/// Summed loss Σ_i ℓ(y_i; params(x_i)) and its gradient with respect to the
/// free coefficients, in [`Coefficients::flatten`] order.
pub fn total_loss_and_gradient(
    spec: &ModelSpec,
    coeffs: &Coefficients,
    design: &Frame,
    responses: &[f64],
) -> Result<(f64, Vec<f64>)> {
    Problem::new(spec, design, responses)?.loss_and_gradient(coeffs)
}

/// Summed loss only.
pub fn total_loss(
    spec: &ModelSpec,
    coeffs: &Coefficients,
    design: &Frame,
    responses: &[f64],
) -> Result<f64> {
    let problem = Problem::new(spec, design, responses)?;
    problem.total_loss(&problem.etas(coeffs))
}

/// Predictive mixture for every row of `design`.
pub fn predict_rows(
    spec: &ModelSpec,
    coeffs: &Coefficients,
    design: &Frame,
) -> Result<Vec<MixtureParams>> {
    let dummy = vec![0.0; design.n_rows()];
    let problem = Problem::new(spec, design, &dummy)?;
    let etas = problem.etas(coeffs);
    (0..design.n_rows())
        .map(|i| problem.params_at(&etas, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedCoefficients {
    pub coefficients: Coefficients,
    pub iterations: usize,
    pub grad_norm: f64,
    pub loss: f64,
    pub start_loss: f64,
    pub stop: StopReason,
}

impl FittedCoefficients {
    fn from_outcome(spec: &ModelSpec, out: BfgsOutcome) -> Result<Self> {
        Ok(FittedCoefficients {
            coefficients: Coefficients::unflatten(spec, &out.x)?,
            iterations: out.iterations,
            grad_norm: out.grad_norm,
            loss: out.value,
            start_loss: out.start_value,
            stop: out.stop,
        })
    }
}

fn check_sample_size(spec: &ModelSpec, n: usize) -> Result<()> {
    let need = spec.n_coefficients() + 5;
    if n < need {
        return Err(Error::Data(format!(
            "{} needs at least {need} rows to estimate {} coefficients, got {n}",
            spec.name,
            spec.n_coefficients()
        )));
    }
    Ok(())
}

/// BFGS over all coefficients from the all-zero start.
pub fn fit_bfgs(
    spec: &ModelSpec,
    design: &Frame,
    responses: &[f64],
    opts: &BfgsOptions,
) -> Result<FittedCoefficients> {
    fit_bfgs_from(spec, design, responses, opts, Coefficients::zeros(spec))
}

pub fn fit_bfgs_from(
    spec: &ModelSpec,
    design: &Frame,
    responses: &[f64],
    opts: &BfgsOptions,
    start: Coefficients,
) -> Result<FittedCoefficients> {
    let problem = Problem::new(spec, design, responses)?;
    check_sample_size(spec, problem.n_rows())?;
    let out = minimize(
        |x| problem.loss_and_gradient(&Coefficients::unflatten(spec, x)?),
        start.flatten(spec),
        opts,
    )?;
    FittedCoefficients::from_outcome(spec, out)
}

/// Loss, ∂/∂μ and ∂/∂η_σ of a single normal, without the mixture machinery.
#[inline]
pub(crate) fn normal_loss_grad(loss: Loss, mu: f64, sigma: f64, y: f64) -> (f64, f64, f64) {
    let z = (y - mu) / sigma;
    match loss {
        Loss::LogS => (
            sigma.ln() + 0.5 * z * z + HALF_LN_2PI,
            -z / sigma,
            1.0 - z * z,
        ),
        Loss::Crps => {
            let (cdf, pdf) = (big_phi(z), phi(z));
            let value = sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - FRAC_1_SQRT_PI);
            (value, 1.0 - 2.0 * cdf, sigma * (2.0 * pdf - FRAC_1_SQRT_PI))
        }
    }
}

/// BFGS for `K = 1` specs through closed-form single-normal scores. Used for
/// climatologies and as an independent route for one-component models.
pub fn fit_single_normal(
    spec: &ModelSpec,
    design: &Frame,
    responses: &[f64],
    opts: &BfgsOptions,
    start: Option<Coefficients>,
) -> Result<FittedCoefficients> {
    if spec.n_components != 1 {
        return Err(Error::Spec(format!(
            "{} has {} components, expected 1",
            spec.name, spec.n_components
        )));
    }
    let problem = Problem::new(spec, design, responses)?;
    check_sample_size(spec, problem.n_rows())?;
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let coeffs = Coefficients::unflatten(spec, x)?;
        let etas = problem.etas(&coeffs);
        let mut grad = Coefficients::zeros(spec);
        let mut total = 0.0;
        for (i, &y) in problem.y.iter().enumerate() {
            let (v, d_mu, d_sigma) =
                normal_loss_grad(spec.loss, etas[0][i], scale_from_eta(etas[1][i]), y);
            let d_sigma = clamp_gate(etas[1][i]) * d_sigma;
            if !v.is_finite() {
                return Err(Error::ScoreOverflow { y }.at_row(i));
            }
            total += v;
            for (j, d) in [(0, d_mu), (1, d_sigma)] {
                grad.intercepts[j] += d;
                for (c, g) in grad.slopes[j].iter_mut().enumerate() {
                    *g += d * problem.column(j, c)[i];
                }
            }
        }
        Ok((total, grad.flatten(spec)))
    };
    let x0 = start
        .unwrap_or_else(|| Coefficients::zeros(spec))
        .flatten(spec);
    let out = minimize(objective, x0, opts)?;
    FittedCoefficients::from_outcome(spec, out)
}

/// Closed-form single-normal score, exposed for cross-checks against the
/// mixture route.
pub fn normal_score(loss: Loss, mu: f64, sigma: f64, y: f64) -> f64 {
    normal_loss_grad(loss, mu, sigma, y).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{crps_mixture, logs_mixture};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn lp(t: PredictorTarget, c: &[&str], icpt: bool) -> LinearPredictorSpec {
        LinearPredictorSpec::new(t, c, icpt)
    }

    fn groups(g: &[&[&str]]) -> Vec<Vec<String>> {
        g.iter()
            .map(|v| v.iter().map(|s| s.to_string()).collect())
            .collect()
    }

    fn two_component(loss: Loss) -> ModelSpec {
        use PredictorTarget::*;
        ModelSpec::new(
            "mix",
            2,
            vec![
                lp(Weight(0), &["a"], true),
                lp(Weight(1), &["c"], true),
                lp(Location(0), &["a"], true),
                lp(Scale(0), &["b"], true),
                lp(Location(1), &["c"], true),
                lp(Scale(1), &[], true),
            ],
            loss,
            groups(&[&["a", "b"], &["c"]]),
        )
        .unwrap()
    }

    fn random_frame(n: usize, seed: u64) -> (Frame, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let mut cols = Vec::new();
        for name in ["a", "b", "c"] {
            cols.push((
                name.to_string(),
                (0..n).map(|_| nd.sample(&mut rng)).collect(),
            ));
        }
        let y = (0..n).map(|_| nd.sample(&mut rng)).collect();
        (Frame::from_columns(cols).unwrap(), y)
    }

    #[test]
    fn spec_validation() {
        use PredictorTarget::*;
        let g = groups(&[&["a"], &["c"]]);
        // wrong order
        let bad = ModelSpec::new(
            "x",
            2,
            vec![
                lp(Weight(0), &[], true),
                lp(Weight(1), &[], true),
                lp(Scale(0), &[], true),
                lp(Location(0), &[], true),
                lp(Location(1), &[], true),
                lp(Scale(1), &[], true),
            ],
            Loss::LogS,
            g.clone(),
        );
        assert!(bad.is_err());
        // group violation: c belongs to component 2
        let bad = ModelSpec::new(
            "x",
            2,
            vec![
                lp(Weight(0), &[], true),
                lp(Weight(1), &[], true),
                lp(Location(0), &["c"], true),
                lp(Scale(0), &[], true),
                lp(Location(1), &[], true),
                lp(Scale(1), &[], true),
            ],
            Loss::LogS,
            g.clone(),
        );
        assert!(matches!(bad, Err(Error::Spec(_))));
        let dup = ModelSpec::new(
            "x",
            1,
            vec![lp(Location(0), &["a", "a"], true), lp(Scale(0), &[], true)],
            Loss::LogS,
            groups(&[&["a"]]),
        );
        assert!(dup.is_err());
    }

    #[test]
    fn target_text_round_trip() {
        for t in [
            PredictorTarget::Weight(0),
            PredictorTarget::Location(2),
            PredictorTarget::Scale(1),
        ] {
            assert_eq!(t.to_string().parse::<PredictorTarget>().unwrap(), t);
        }
        assert!("location[0]".parse::<PredictorTarget>().is_err());
        assert!("shape[1]".parse::<PredictorTarget>().is_err());
    }

    #[test]
    fn coefficient_flattening() {
        let spec = two_component(Loss::LogS);
        assert_eq!(spec.n_coefficients(), 11);
        let flat: Vec<f64> = (0..11).map(|v| v as f64).collect();
        let c = Coefficients::unflatten(&spec, &flat).unwrap();
        assert_eq!(c.flatten(&spec), flat);
        assert_eq!(c.intercepts[5], 10.0);
        assert!(Coefficients::unflatten(&spec, &flat[..3]).is_err());
    }

    #[test]
    fn zero_coefficients_give_equal_weight_standard_normals() {
        let (frame, y) = random_frame(40, 1);
        for loss in [Loss::LogS, Loss::Crps] {
            let spec = two_component(loss);
            let (v, _) =
                total_loss_and_gradient(&spec, &Coefficients::zeros(&spec), &frame, &y).unwrap();
            let p = MixtureParams::new(vec![0.5, 0.5], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
            let expect: f64 = y
                .iter()
                .map(|&yi| match loss {
                    Loss::LogS => logs_mixture(&p, yi).unwrap(),
                    Loss::Crps => crps_mixture(&p, yi).unwrap(),
                })
                .sum();
            assert_abs_diff_eq!(v, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_over_coefficients() {
        let (frame, y) = random_frame(60, 2);
        for loss in [Loss::LogS, Loss::Crps] {
            let spec = two_component(loss);
            let x: Vec<f64> = (0..spec.n_coefficients())
                .map(|i| 0.1 * ((i * 7 % 5) as f64 - 2.0))
                .collect();
            let c = Coefficients::unflatten(&spec, &x).unwrap();
            let (_, g) = total_loss_and_gradient(&spec, &c, &frame, &y).unwrap();
            let h = 1e-6;
            for i in 0..x.len() {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[i] += h;
                b[i] -= h;
                let fa = total_loss(
                    &spec,
                    &Coefficients::unflatten(&spec, &a).unwrap(),
                    &frame,
                    &y,
                )
                .unwrap();
                let fb = total_loss(
                    &spec,
                    &Coefficients::unflatten(&spec, &b).unwrap(),
                    &frame,
                    &y,
                )
                .unwrap();
                let fd = (fa - fb) / (2.0 * h);
                assert!(
                    (g[i] - fd).abs() <= f64::max(1e-6 * fd.abs(), 1e-6),
                    "{loss} coef {i}: {} vs {fd}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn duplicated_rows_double_loss_and_gradient() {
        let (frame, y) = random_frame(30, 3);
        let mut doubled = frame.clone();
        doubled.append_rows(&frame).unwrap();
        let y2: Vec<f64> = y.iter().chain(&y).cloned().collect();
        let spec = two_component(Loss::Crps);
        let c = Coefficients::unflatten(&spec, &[0.05; 11]).unwrap();
        let (v1, g1) = total_loss_and_gradient(&spec, &c, &frame, &y).unwrap();
        let (v2, g2) = total_loss_and_gradient(&spec, &c, &doubled, &y2).unwrap();
        assert_abs_diff_eq!(v2, 2.0 * v1, epsilon = 1e-10);
        for (a, b) in g1.iter().zip(&g2) {
            assert_abs_diff_eq!(*b, 2.0 * a, epsilon = 1e-10);
        }
    }

    #[test]
    fn logs_underflow_names_the_row() {
        use PredictorTarget::*;
        let spec = ModelSpec::new(
            "one",
            1,
            vec![lp(Location(0), &[], true), lp(Scale(0), &[], true)],
            Loss::LogS,
            groups(&[&[]]),
        )
        .unwrap();
        let frame = Frame::new(3);
        let y = [0.0, 0.0, 1e200];
        let err = total_loss(&spec, &Coefficients::zeros(&spec), &frame, &y).unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err}");
    }

    #[test]
    fn near_deterministic_regression_recovers_unit_slope() {
        use PredictorTarget::*;
        let (frame, _) = random_frame(400, 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let y: Vec<f64> = frame
            .column("a")
            .unwrap()
            .iter()
            .map(|a| a + noise.sample(&mut rng))
            .collect();
        let spec = ModelSpec::new(
            "lin",
            1,
            vec![lp(Location(0), &["a", "b"], true), lp(Scale(0), &[], true)],
            Loss::LogS,
            groups(&[&["a", "b"]]),
        )
        .unwrap();
        let fit = fit_bfgs(&spec, &frame, &y, &BfgsOptions::default()).unwrap();
        let c = &fit.coefficients;
        assert!((c.slopes[0][0] - 1.0).abs() < 0.01, "{c:?}");
        assert!(c.slopes[0][1].abs() < 0.01 && c.intercepts[0].abs() < 0.01);
        assert!((c.intercepts[1] - 0.01f64.ln()).abs() < 0.1);
        assert!(fit.loss <= fit.start_loss);
    }

    #[test]
    fn too_few_rows_rejected() {
        let (frame, y) = random_frame(12, 5);
        let spec = two_component(Loss::LogS);
        assert!(matches!(
            fit_bfgs(&spec, &frame, &y, &BfgsOptions::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn normal_score_agrees_with_mixture_route() {
        for &(mu, s, y) in &[(0.0, 1.0, 0.0), (1.2, 0.4, -0.3), (-3.0, 2.5, 4.0)] {
            let p = MixtureParams::normal(mu, s).unwrap();
            assert_abs_diff_eq!(
                normal_score(Loss::LogS, mu, s, y),
                logs_mixture(&p, y).unwrap(),
                epsilon = 1e-13
            );
            assert_abs_diff_eq!(
                normal_score(Loss::Crps, mu, s, y),
                crps_mixture(&p, y).unwrap(),
                epsilon = 1e-13
            );
        }
    }
}
