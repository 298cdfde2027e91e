//! Monte Carlo checks of the sub-task learners and the CV path.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use modreg_core::learners::cv_lambda_path;
use modreg_core::rng::{self, StreamRng};
use modreg_core::sim::{generate, Setting, SimConfig};
use modreg_core::{crossfit_means, split_folds, PenaltyConfig, RidgeCv};

fn normal(r: &mut StreamRng) -> f64 {
    StandardNormal.sample(r)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

#[test]
fn cv_lasso_support_contains_truth() {
    let (n, p, s) = (200, 50, 5);
    let hits: usize = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let mut r = rng::stream(1000 + seed, 0);
            let x = DMatrix::from_fn(n, p, |_, _| normal(&mut r));
            let beta = DVector::from_fn(p, |j, _| if j < s { 1.0 } else { 0.0 });
            let y = &x * &beta + DVector::from_fn(n, |_, _| normal(&mut r));
            let path = cv_lambda_path(&x, &y, &PenaltyConfig::default(), seed).unwrap();
            let coef = path.chosen_coefficients();
            usize::from((0..s).all(|j| coef[j] != 0.0))
        })
        .sum();
    assert!(hits >= 40, "support recovered in {hits} of 50 replicates");
}

/// Root mean squared gap between cross-fitted `μ̂_y` and the true `Zγ`.
fn mu_y_error(n: usize, seed: u64) -> f64 {
    let mut c = SimConfig::new(Setting::Low1).with_seed(seed);
    c.n = n;
    c.n_test = 1;
    let c = c.realize().unwrap();
    let g = generate(&c, 0).unwrap();
    let d = &g.train;
    let truth = d.z().unwrap() * DVector::from_vec(c.gamma.clone().unwrap());
    let learner = RidgeCv { seed, ..RidgeCv::default() };
    let preds = crossfit_means(d, &learner, &learner, &split_folds(n, 2, seed).unwrap()).unwrap();
    (preds.mu_y - truth).norm() / (n as f64).sqrt()
}

#[test]
fn crossfit_error_shrinks_with_sample_size() {
    let small: Vec<f64> = (0..20).into_par_iter().map(|s| mu_y_error(200, s)).collect();
    let large: Vec<f64> = (0..20).into_par_iter().map(|s| mu_y_error(800, s)).collect();
    let (a, b) = (median(small), median(large));
    assert!(b < a, "median error {a} at n = 200, {b} at n = 800");
}
