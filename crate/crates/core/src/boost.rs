//! Non-cyclic gradient boosting over all linear predictors of a mixture
//! model, with K-fold cross-validation of the stopping iteration.
//!
//! Each iteration regresses the negative gradient of every linear predictor
//! on each of its candidates (no intercept in that regression), keeps the
//! best candidate per predictor, and then updates the single predictor whose
//! candidate step lowers the training loss most. Candidates are the
//! predictor's covariates plus, when the spec gives it one, its intercept as
//! a constant column of ones. All coefficients start at zero, which on
//! standardized anomalies is the climatological start.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimate::{Coefficients, ModelSpec, Problem, RowBuf};
use crate::fmt::exact;
use crate::frame::Frame;
use crate::models::FittedModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostConfig {
    pub step_length: f64,
    pub m_stop: usize,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            step_length: 0.05,
            m_stop: 6000,
            cv_folds: 10,
            seed: 1,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_length > 0.0 && self.step_length <= 1.0) {
            return Err(Error::Config(format!(
                "step length {} outside (0, 1]",
                self.step_length
            )));
        }
        if self.m_stop == 0 {
            return Err(Error::Config("m_stop must be at least 1".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config(format!(
                "need at least 2 folds, got {}",
                self.cv_folds
            )));
        }
        Ok(())
    }
}

/// Training means and sample standard deviations of the design columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl ColumnStats {
    /// Standardizes the named columns of `frame` with the stored statistics.
    /// Other columns are copied unchanged; NaN stays NaN.
    pub fn apply(&self, frame: &Frame) -> Result<Frame> {
        let mut out = frame.clone();
        for ((name, m), s) in self.names.iter().zip(&self.means).zip(&self.sds) {
            let col = out
                .column_mut(name)
                .ok_or_else(|| Error::Data(format!("missing covariate column {name}")))?;
            for v in col.iter_mut() {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Standardizes every column of `design` to sample mean 0 and sd 1 (n − 1
/// denominator). Responses are returned unchanged: the models boost on
/// anomalies that are already standardized by the climatology.
pub fn standardize_columns(
    design: &Frame,
    responses: &[f64],
) -> Result<(Frame, Vec<f64>, ColumnStats)> {
    let n = design.n_rows();
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 rows to standardize, got {n}"
        )));
    }
    let mut stats = ColumnStats {
        names: Vec::new(),
        means: Vec::new(),
        sds: Vec::new(),
    };
    for (name, col) in design.columns() {
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "covariate {name} is not finite at row {i}"
            )));
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        if !(sd > 0.0) || sd < 1e-12 * mean.abs() {
            return Err(Error::Data(format!("covariate {name} has zero variance")));
        }
        stats.names.push(name.to_string());
        stats.means.push(mean);
        stats.sds.push(sd);
    }
    Ok((stats.apply(design)?, responses.to_vec(), stats))
}

/// One accepted update.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostStep {
    /// Index into `spec.predictors`.
    pub predictor: usize,
    /// Index into that predictor's covariates; `None` is the intercept.
    pub covariate: Option<usize>,
    /// Slope of the no-intercept regression of the negative gradient.
    pub rho: f64,
    /// Coefficient change, ν·ρ.
    pub delta: f64,
    /// Training loss after a candidate step on each predictor; +∞ for
    /// predictors without candidates.
    pub potential_losses: Vec<f64>,
    pub loss_before: f64,
    pub loss_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostState {
    pub spec: ModelSpec,
    pub config: BoostConfig,
    pub steps: Vec<BoostStep>,
    /// Set when no candidate lowered the loss; the iteration at which that
    /// happened. Later iterations repeat the last coefficients.
    pub halted_at: Option<usize>,
    /// Training loss at the zero start.
    pub start_loss: f64,
}

impl BoostState {
    /// Training loss after iteration `m` (clamped to the last step).
    pub fn training_loss(&self, m: usize) -> f64 {
        match m.min(self.steps.len()) {
            0 => self.start_loss,
            k => self.steps[k - 1].loss_after,
        }
    }

    /// Coefficients after `m` iterations. Replays the path, so the result is
    /// identical however often it is called.
    pub fn coefficients_at(&self, m: usize) -> Coefficients {
        let mut c = Coefficients::zeros(&self.spec);
        for s in self.steps.iter().take(m) {
            *coefficient_mut(&mut c, s) += s.delta;
        }
        c
    }

    /// Long-format coefficient paths. Iteration 0 lists every candidate at
    /// zero; each later iteration lists only the coefficient it changed, with
    /// its new value (forward-fill to plot).
    pub fn write_paths<W: Write>(&self, mut out: W, station: Option<&str>) -> Result<()> {
        let head = if station.is_some() { "station_id," } else { "" };
        writeln!(out, "{head}iteration,predictor_id,covariate_id,coefficient")?;
        self.write_path_rows(out, station)
    }

    /// [`BoostState::write_paths`] without the header line.
    pub fn write_path_rows<W: Write>(&self, mut out: W, station: Option<&str>) -> Result<()> {
        let lead = station.map(|s| format!("{s},")).unwrap_or_default();
        for p in &self.spec.predictors {
            let intercept = p.has_intercept.then_some(INTERCEPT_ID);
            for cov in intercept
                .into_iter()
                .chain(p.covariates.iter().map(String::as_str))
            {
                writeln!(out, "{lead}0,{},{cov},{}", p.target, exact(0.0))?;
            }
        }
        let mut c = Coefficients::zeros(&self.spec);
        for (m, s) in self.steps.iter().enumerate() {
            let value = coefficient_mut(&mut c, s);
            *value += s.delta;
            let p = &self.spec.predictors[s.predictor];
            let id = s
                .covariate
                .map_or(INTERCEPT_ID, |k| p.covariates[k].as_str());
            writeln!(out, "{lead}{},{},{id},{}", m + 1, p.target, exact(*value))?;
        }
        Ok(())
    }
}

/// Covariate id of intercepts in coefficient paths.
pub const INTERCEPT_ID: &str = "intercept";

fn coefficient_mut<'c>(c: &'c mut Coefficients, step: &BoostStep) -> &'c mut f64 {
    match step.covariate {
        Some(k) => &mut c.slopes[step.predictor][k],
        None => &mut c.intercepts[step.predictor],
    }
}

fn candidate<'a>(
    problem: &Problem<'a>,
    ones: &'a [f64],
    j: usize,
    covariate: Option<usize>,
) -> &'a [f64] {
    match covariate {
        Some(k) => problem.column(j, k),
        None => ones,
    }
}

/// Runs up to `config.m_stop` boosting iterations from all-zero
/// coefficients. `design` should hold standardized covariates.
pub fn boost_fit(
    spec: &ModelSpec,
    design: &Frame,
    responses: &[f64],
    config: &BoostConfig,
) -> Result<BoostState> {
    config.validate()?;
    let problem = Problem::new(spec, design, responses)?;
    boost_problem(&problem, config, |_, _| Ok(()))
}

/// Boosting core. `observe(m, step)` is called after each accepted update.
pub(crate) fn boost_problem(
    problem: &Problem<'_>,
    config: &BoostConfig,
    mut observe: impl FnMut(usize, &BoostStep) -> Result<()>,
) -> Result<BoostState> {
    let spec = problem.spec;
    let n = problem.n_rows();
    let jn = spec.predictors.len();
    let nu = config.step_length;
    let mut etas = problem.etas(&Coefficients::zeros(spec));
    let mut buf = RowBuf::new(spec.n_components);
    let mut d_eta = vec![0.0; jn];
    let mut neg_grad = vec![vec![0.0; n]; jn];
    let ones = vec![1.0; n];
    let wrap = |m: usize| {
        move |e: Error| Error::Boosting {
            iteration: m,
            source: Box::new(e),
        }
    };

    let mut loss = problem.total_loss(&etas).map_err(wrap(0))?;
    let mut state = BoostState {
        spec: spec.clone(),
        config: *config,
        steps: Vec::new(),
        halted_at: None,
        start_loss: loss,
    };

    for m in 1..=config.m_stop {
        // step 1: negative gradient per predictor
        for i in 0..n {
            problem
                .row_loss_grad(&etas, i, &mut buf, &mut d_eta)
                .ok_or_else(|| wrap(m)(Error::ScoreOverflow { y: problem.y[i] }.at_row(i)))?;
            for (g, d) in neg_grad.iter_mut().zip(&d_eta) {
                g[i] = -d;
            }
        }
        // steps 2-3: best covariate per predictor
        let mut best: Vec<Option<(Option<usize>, f64)>> = vec![None; jn];
        for (j, slot) in best.iter_mut().enumerate() {
            let intercept = spec.predictors[j].has_intercept.then_some(None);
            for c in intercept
                .into_iter()
                .chain((0..problem.n_covariates(j)).map(Some))
            {
                let x = candidate(problem, &ones, j, c);
                let rho = x.iter().zip(&neg_grad[j]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                if slot.is_none_or(|(_, r)| rho.abs() > r.abs()) {
                    *slot = Some((c, rho));
                }
            }
        }
        // step 4: potential losses
        let mut potential = vec![f64::INFINITY; jn];
        for j in 0..jn {
            let Some((c, rho)) = best[j] else { continue };
            let x = candidate(problem, &ones, j, c);
            let step = nu * rho;
            let mut total = 0.0;
            for i in 0..n {
                let shifted = etas[j][i] + step * x[i];
                total += problem
                    .row_loss(
                        |jj| if jj == j { shifted } else { etas[jj][i] },
                        problem.y[i],
                        &mut buf,
                    )
                    .ok_or_else(|| wrap(m)(Error::ScoreOverflow { y: problem.y[i] }.at_row(i)))?;
            }
            potential[j] = total;
        }
        // step 5: lowest potential loss, lowest index on ties
        let mut j_star = None;
        for j in 0..jn {
            if potential[j].is_finite() && j_star.is_none_or(|b: usize| potential[j] < potential[b])
            {
                j_star = Some(j);
            }
        }
        let Some(j_star) = j_star.filter(|&j| potential[j] < loss) else {
            state.halted_at = Some(m);
            break;
        };
        // step 6: update one coefficient
        let (c, rho) = best[j_star].expect("finite potential implies a candidate");
        let delta = nu * rho;
        let x = candidate(problem, &ones, j_star, c);
        for (e, xi) in etas[j_star].iter_mut().zip(x) {
            *e += delta * xi;
        }
        let step = BoostStep {
            predictor: j_star,
            covariate: c,
            rho,
            delta,
            potential_losses: potential,
            loss_before: loss,
            loss_after: 0.0,
        };
        loss = step.potential_losses[j_star];
        let step = BoostStep {
            loss_after: loss,
            ..step
        };
        observe(m, &step)?;
        state.steps.push(step);
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub m_opt: usize,
    /// Validation loss summed over folds; entry `m − 1` is iteration `m`.
    pub validation_loss: Vec<f64>,
}

/// Random row partition into `folds` parts of near-equal size.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

/// Chooses the stopping iteration by K-fold cross-validation: boosts on each
/// fold's complement, tracks held-out loss after every iteration and returns
/// the first minimizer of the loss summed over folds.
pub fn cross_validate_mstop(
    spec: &ModelSpec,
    design: &Frame,
    responses: &[f64],
    config: &BoostConfig,
) -> Result<CvResult> {
    config.validate()?;
    let n = responses.len();
    if n < config.cv_folds * 10 {
        return Err(Error::Data(format!(
            "{} rows are too few for {}-fold cross-validation (need {})",
            n,
            config.cv_folds,
            config.cv_folds * 10
        )));
    }
    let fold = fold_assignment(n, config.cv_folds, config.seed);
    let mut total = vec![0.0; config.m_stop];
    for f in 0..config.cv_folds {
        let (train, valid): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold[i] != f);
        let tr_frame = design.select_rows(&train);
        let tr_y: Vec<f64> = train.iter().map(|&i| responses[i]).collect();
        let va_frame = design.select_rows(&valid);
        let va_y: Vec<f64> = valid.iter().map(|&i| responses[i]).collect();
        let trainer = Problem::new(spec, &tr_frame, &tr_y)?;
        let validator = Problem::new(spec, &va_frame, &va_y)?;

        let va_ones = vec![1.0; va_y.len()];
        let mut va_etas = validator.etas(&Coefficients::zeros(spec));
        let mut current = validator.total_loss(&va_etas)?;
        let mut last_m = 0;
        let state = boost_problem(&trainer, config, |m, step| {
            let x = candidate(&validator, &va_ones, step.predictor, step.covariate);
            for (e, xi) in va_etas[step.predictor].iter_mut().zip(x) {
                *e += step.delta * xi;
            }
            current = validator
                .total_loss(&va_etas)
                .map_err(|e| Error::Boosting {
                    iteration: m,
                    source: Box::new(e),
                })?;
            total[m - 1] += current;
            last_m = m;
            Ok(())
        })
        .map_err(|e| Error::Data(format!("fold {}: {e}", f + 1)))?;
        debug_assert_eq!(state.steps.len(), last_m);
        // halted folds stay frozen at their last validation loss
        for t in total.iter_mut().skip(last_m) {
            *t += current;
        }
    }
    let mut m_opt = 1;
    for m in 2..=config.m_stop {
        if total[m - 1] < total[m_opt - 1] {
            m_opt = m;
        }
    }
    Ok(CvResult {
        m_opt,
        validation_loss: total,
    })
}

/// Freezes the boosted coefficients at iteration `m` into `base`, together
/// with the column statistics the design was standardized with.
pub fn finalize_model(
    state: &BoostState,
    m: usize,
    stats: ColumnStats,
    base: FittedModel,
) -> Result<FittedModel> {
    if m > state.config.m_stop {
        return Err(Error::Config(format!(
            "iteration {m} beyond m_stop {}",
            state.config.m_stop
        )));
    }
    if base.spec != state.spec {
        return Err(Error::Spec(
            "boosting state and model were built from different specs".into(),
        ));
    }
    Ok(FittedModel {
        coefficients: state.coefficients_at(m),
        column_stats: Some(stats),
        estimation: format!(
            "boosting nu={} m_stop={} folds={} seed={} m_opt={m}",
            state.config.step_length, state.config.m_stop, state.config.cv_folds, state.config.seed
        ),
        ..base
    })
}
