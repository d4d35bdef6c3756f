//! Seeded fixtures shared by the benchmarks.

use mixreg_core::dist::MixtureParams;
use mixreg_core::estimate::Loss;
use mixreg_core::models::{make_mixsamos_gb, CovariateCatalog};
use mixreg_core::{Frame, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `n` random mixtures with `k` components and an observation for each.
pub fn mixture_cases(n: usize, k: usize, seed: u64) -> Vec<(MixtureParams, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let p = MixtureParams::new(
                raw.iter().map(|w| w / total).collect(),
                (0..k).map(|_| rng.random_range(-3.0..3.0)).collect(),
                (0..k).map(|_| rng.random_range(0.3..2.0)).collect(),
            )
            .expect("valid mixture");
            (p, rng.random_range(-4.0..4.0))
        })
        .collect()
}

/// A MIXSAMOS-GB spec over `variables` with a standard-normal design of `n`
/// rows and a two-regime response.
pub fn boosting_problem(
    variables: &[&str],
    n: usize,
    loss: Loss,
    seed: u64,
) -> (ModelSpec, Frame, Vec<f64>) {
    let catalog = CovariateCatalog::new(variables).expect("known variables");
    let spec = make_mixsamos_gb(&catalog, loss).expect("valid model").spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<(String, Vec<f64>)> = catalog
        .all_ids()
        .into_iter()
        .map(|id| (id, (0..n).map(|_| rng.sample(StandardNormal)).collect()))
        .collect();
    let design = Frame::from_columns(cols).expect("distinct columns");
    let x = design
        .require(&format!("{}.mean", variables[0]))
        .expect("column")
        .to_vec();
    let y = x
        .iter()
        .map(|v| {
            let e: f64 = rng.sample(StandardNormal);
            if rng.random_range(0.0..1.0) < 0.6 {
                1.0 + v + 0.3 * e
            } else {
                -1.5 + 0.5 * e
            }
        })
        .collect();
    (spec, design, y)
}
