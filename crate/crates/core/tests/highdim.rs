//! Monte Carlo checks of structure learning and the projection shortcut.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use modreg_core::rng::{self, StreamRng};
use modreg_core::sim::{generate, Setting, SimConfig};
use modreg_core::{
    cv_projection_etas, learn_structure, projection_shortcut, structure_penalty, Dataset, PenaltyConfig,
    ProjectionOperator,
};

fn normal(r: &mut StreamRng) -> f64 {
    StandardNormal.sample(r)
}

/// `X ~ N(0, I₃)`, `Z = XBᵀ + noise`; `y` builds the response from the draw.
fn draw(seed: u64, n: usize, y: impl Fn(&DMatrix<f64>, &DMatrix<f64>, &mut StreamRng) -> DVector<f64>) -> Dataset {
    let mut r = rng::stream(seed, 0);
    let x = DMatrix::from_fn(n, 3, |_, _| normal(&mut r));
    let b = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, 0.5, 0.5, 0.0, 1.0]);
    let z = &x * b.transpose() + DMatrix::from_fn(n, 3, |_, _| normal(&mut r));
    let y = y(&x, &z, &mut r);
    Dataset::triples(x, z, y).unwrap()
}

fn frequency(hit: impl Fn(u64) -> bool + Sync) -> usize {
    (0..50u64).into_par_iter().filter(|&s| hit(s)).count()
}

#[test]
fn response_through_z_only_gives_empty_j2() {
    let hits = frequency(|seed| {
        let mut c = SimConfig::new(Setting::Low1).with_seed(seed);
        c.n = 1000;
        c.n_test = 1;
        c.sigma_y = 0.5;
        let g = generate(&c, 0).unwrap();
        learn_structure(&g.train, &structure_penalty(), seed).unwrap().j2.is_empty()
    });
    assert!(hits >= 45, "J2 empty in {hits} of 50 seeds");
}

#[test]
fn direct_effect_enters_j2() {
    let hits = frequency(|seed| {
        let mut d = draw(400 + seed, 500, |x, _, r| DVector::from_fn(x.nrows(), |i, _| x[(i, 0)] + normal(r)));
        // Z carries no information about Y
        let mut r = rng::stream(seed, 9);
        let z = DMatrix::from_fn(d.n(), 3, |_, _| normal(&mut r));
        d = Dataset::triples(d.x().unwrap().clone(), z, d.y().unwrap().clone()).unwrap();
        learn_structure(&d, &structure_penalty(), seed).unwrap().j2.contains(&0)
    });
    assert!(hits >= 45, "X1 in J2 in {hits} of 50 seeds");
}

#[test]
fn cv_eta_is_close_to_oracle_best() {
    let grid = [0.1, 1.0, 10.0, 100.0, 1000.0];
    let config = PenaltyConfig { n_lambda: 40, ..PenaltyConfig::default() }.with_folds(5);
    let (chosen, best): (Vec<f64>, Vec<f64>) = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let gen = |s: u64, n: usize| {
                let mut r = rng::stream(seed, s);
                let x = DMatrix::from_fn(n, 6, |_, _| normal(&mut r));
                let z = DMatrix::from_fn(n, 8, |i, j| x[(i, j % 6)] + 0.8 * normal(&mut r));
                let y = DVector::from_fn(n, |i, _| z[(i, 0)] - 0.7 * z[(i, 1)] + 0.5 * z[(i, 6)] + normal(&mut r));
                Dataset::triples(x, z, y).unwrap()
            };
            let (train, test) = (gen(1, 120), gen(2, 2000));
            let test_mse = |theta: &DVector<f64>| {
                (test.y().unwrap() - test.x().unwrap() * theta).norm_squared() / test.n() as f64
            };
            let (_, _, fit) = cv_projection_etas(&train, &grid, &grid, &config, seed).unwrap();
            let z = train.z().unwrap();
            let best = grid
                .iter()
                .flat_map(|&ex| grid.iter().map(move |&ey| (ex, ey)))
                .map(|(ex, ey)| {
                    let px = ProjectionOperator::ridge_hat(z, ex).unwrap();
                    let py = ProjectionOperator::ridge_hat(z, ey).unwrap();
                    test_mse(&projection_shortcut(&train, &px, &py, &config, seed).unwrap().theta)
                })
                .fold(f64::INFINITY, f64::min);
            (test_mse(&fit.theta), best)
        })
        .unzip();
    let (mean_chosen, mean_best) = (chosen.iter().sum::<f64>() / 20.0, best.iter().sum::<f64>() / 20.0);
    assert!(
        mean_chosen <= 1.05 * mean_best,
        "CV choice test MSE {mean_chosen} vs oracle-best {mean_best}"
    );
}
