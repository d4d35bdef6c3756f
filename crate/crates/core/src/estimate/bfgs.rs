//! Dense BFGS with a backtracking Armijo line search.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Iteration cap.
    pub max_iter: usize,
    /// Stop once |f_old − f_new| ≤ rel_tol · (|f_old| + rel_tol).
    pub rel_tol: f64,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo: f64,
    /// Step shrink factor while backtracking.
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 5000,
            rel_tol: 1e-8,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    RelativeTolerance,
    MaxIterations,
    /// No step along the steepest-descent direction decreases the loss and
    /// the gradient is negligible relative to the loss.
    Stalled,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::RelativeTolerance => "relative-tolerance",
            StopReason::MaxIterations => "max-iterations",
            StopReason::Stalled => "stalled",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub start_value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `objective`, which returns the value and gradient at a point.
/// Errors raised by the objective during the line search count as an
/// infinite value; at the starting point they are propagated.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, opts: &BfgsOptions) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (mut f, mut g) = objective(&x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteStart);
    }
    let start_value = f;
    let mut x = x0;
    if n == 0 {
        return Ok(BfgsOutcome {
            x,
            value: f,
            start_value,
            grad_norm: 0.0,
            iterations: 0,
            stop: StopReason::RelativeTolerance,
        });
    }
    let mut h = identity(n);
    let mut h_is_identity = true;
    let mut first_update = true;

    for iteration in 1..=opts.max_iter {
        let gnorm = norm(&g);
        if gnorm == 0.0 {
            return Ok(done(
                x,
                f,
                start_value,
                gnorm,
                iteration - 1,
                StopReason::RelativeTolerance,
            ));
        }
        let mut d = mat_vec(&h, &g, -1.0);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h = identity(n);
            h_is_identity = true;
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }

        let step = match line_search(&mut objective, &x, f, &d, slope, opts) {
            Some(step) => step,
            None if !h_is_identity => {
                h = identity(n);
                h_is_identity = true;
                first_update = true;
                d = g.iter().map(|v| -v).collect();
                slope = -gnorm * gnorm;
                match line_search(&mut objective, &x, f, &d, slope, opts) {
                    Some(step) => step,
                    None => return stalled_or_error(x, f, start_value, gnorm, iteration, slope),
                }
            }
            None => return stalled_or_error(x, f, start_value, gnorm, iteration, slope),
        };
        let (x_new, f_new, g_new) = step;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) {
            if first_update {
                let scale = sy / dot(&yv, &yv);
                for (i, row) in h.iter_mut().enumerate() {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    row[i] = scale;
                }
                first_update = false;
            }
            bfgs_update(&mut h, &s, &yv, sy);
            h_is_identity = false;
        }

        let decrease = f - f_new;
        x = x_new;
        g = g_new;
        let f_old = f;
        f = f_new;
        if decrease.abs() <= opts.rel_tol * (f_old.abs() + opts.rel_tol) {
            return Ok(done(
                x,
                f,
                start_value,
                norm(&g),
                iteration,
                StopReason::RelativeTolerance,
            ));
        }
    }
    let gnorm = norm(&g);
    Ok(done(
        x,
        f,
        start_value,
        gnorm,
        opts.max_iter,
        StopReason::MaxIterations,
    ))
}

fn done(
    x: Vec<f64>,
    value: f64,
    start_value: f64,
    grad_norm: f64,
    iterations: usize,
    stop: StopReason,
) -> BfgsOutcome {
    BfgsOutcome {
        x,
        value,
        start_value,
        grad_norm,
        iterations,
        stop,
    }
}

fn stalled_or_error(
    x: Vec<f64>,
    f: f64,
    start_value: f64,
    grad_norm: f64,
    iteration: usize,
    slope: f64,
) -> Result<BfgsOutcome> {
    if grad_norm <= 1e-6 * (1.0 + f.abs()) {
        Ok(done(
            x,
            f,
            start_value,
            grad_norm,
            iteration - 1,
            StopReason::Stalled,
        ))
    } else {
        Err(Error::LineSearch {
            iteration,
            loss: f,
            grad_norm,
            slope,
        })
    }
}

type Step = (Vec<f64>, f64, Vec<f64>);

fn line_search<F>(
    objective: &mut F,
    x: &[f64],
    f: f64,
    d: &[f64],
    slope: f64,
    opts: &BfgsOptions,
) -> Option<Step>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut t = 1.0;
    for _ in 0..opts.max_backtracks {
        let trial: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + t * di).collect();
        if let Ok((ft, gt)) = objective(&trial) {
            if ft.is_finite()
                && gt.iter().all(|v| v.is_finite())
                && ft <= f + opts.armijo * t * slope
            {
                return Some((trial, ft, gt));
            }
        }
        t *= opts.shrink;
    }
    None
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(h: &[Vec<f64>], v: &[f64], scale: f64) -> Vec<f64> {
    h.iter().map(|row| scale * dot(row, v)).collect()
}

/// H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ with ρ = 1/(yᵀs).
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y, 1.0);
    let yhy = dot(y, &hy);
    let coef = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i][j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let opts = BfgsOptions {
            rel_tol: 1e-14,
            ..Default::default()
        };
        let out = minimize(
            |x: &[f64]| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ];
                Ok((f, g))
            },
            vec![-1.2, 1.0],
            &opts,
        )
        .unwrap();
        assert!(
            (out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4,
            "{out:?}"
        );
        assert!(out.value <= out.start_value);
    }

    #[test]
    fn quadratic_converges_quickly() {
        let out = minimize(
            |x: &[f64]| {
                Ok((
                    3.0 * (x[0] - 2.0).powi(2) + 0.5 * (x[1] + 1.0).powi(2),
                    vec![6.0 * (x[0] - 2.0), x[1] + 1.0],
                ))
            },
            vec![0.0, 0.0],
            &BfgsOptions::default(),
        )
        .unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-4 && (out.x[1] + 1.0).abs() < 1e-3);
        assert!(out.iterations < 50);
    }

    #[test]
    fn max_iterations_is_reported() {
        let opts = BfgsOptions {
            max_iter: 2,
            rel_tol: 0.0,
            ..Default::default()
        };
        let out = minimize(
            |x: &[f64]| {
                Ok((
                    (x[0] - 1.0).powi(4) + x[1].powi(2),
                    vec![4.0 * (x[0] - 1.0).powi(3), 2.0 * x[1]],
                ))
            },
            vec![5.0, 3.0],
            &opts,
        )
        .unwrap();
        assert_eq!(out.stop, StopReason::MaxIterations);
        assert_eq!(out.iterations, 2);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let r = minimize(
            |_: &[f64]| Ok((f64::NAN, vec![0.0])),
            vec![0.0],
            &BfgsOptions::default(),
        );
        assert!(matches!(r, Err(Error::NonFiniteStart)));
    }
}
