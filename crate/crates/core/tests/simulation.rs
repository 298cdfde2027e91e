//! Checks of the simulation designs and the study runner.

use nalgebra::DVector;

use modreg_core::sim::{
    analytic_theta_star, generate, numeric_theta_star, run_study, EstimatorSpec, Plugin, Setting, SimConfig,
};

fn mean_se(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn low3_indicator_column_has_mean_one_half() {
    let mut c = SimConfig::new(Setting::Low3).with_seed(4);
    c.n = 10_000;
    c.n_test = 1;
    let g = generate(&c, 0).unwrap();
    let (m, se) = mean_se(g.train.z().unwrap().column(2).iter().copied());
    assert!((m - 0.5).abs() <= 3.0 * se, "mean {m}, se {se}");
}

#[test]
fn numeric_oracle_matches_closed_form_on_low1() {
    let c = SimConfig::new(Setting::Low1).with_seed(6).realize().unwrap();
    let exact = analytic_theta_star(&c).unwrap().unwrap();
    let numeric = numeric_theta_star(&c, 200_000).unwrap();
    for j in 0..exact.len() {
        // the low1 response is noiseless given X, so both sides agree to rounding
        let tol = 3.0 * numeric.mc_se[j] + 1e-12;
        assert!((numeric.theta[j] - exact[j]).abs() <= tol, "coordinate {j}: {} vs {}", numeric.theta[j], exact[j]);
    }
}

#[test]
fn numeric_oracle_tracks_noisy_low2() {
    let c = SimConfig::new(Setting::Low2).with_seed(6).realize().unwrap();
    let exact = analytic_theta_star(&c).unwrap().unwrap();
    let numeric = numeric_theta_star(&c, 400_000).unwrap();
    for j in 0..exact.len() {
        assert!(
            (numeric.theta[j] - exact[j]).abs() <= 3.0 * numeric.mc_se[j],
            "coordinate {j}: {} vs {} (se {})",
            numeric.theta[j],
            exact[j],
            numeric.mc_se[j]
        );
    }
}

#[test]
fn modular_ols_has_smaller_spread_than_ols_on_low1() {
    let c = SimConfig::new(Setting::Low1).with_seed(12);
    let estimators = [EstimatorSpec::Ols, EstimatorSpec::ModOls { plugin: Plugin::Linear }];
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get());
    let result = run_study(&c, &estimators, 200, threads).unwrap();
    let s = result.summaries();
    for j in 0..4 {
        assert!(s[1].sd[j] <= s[0].sd[j], "coordinate {j}: modular sd {} vs ols {}", s[1].sd[j], s[0].sd[j]);
    }
}

#[test]
fn high1_residual_variance_is_six_and_a_half() {
    let mut c = SimConfig::new(Setting::High1).with_seed(9);
    c.n = 50_000;
    c.n_test = 1;
    let g = generate(&c, 0).unwrap();
    let theta = g.theta_star.clone().unwrap();
    let resid: DVector<f64> = g.train.y().unwrap() - g.train.x().unwrap() * theta;
    // residual has mean zero, so its variance is the mean of its squares
    let (m, se) = mean_se(resid.iter().map(|r| r * r));
    assert!((m - 6.5).abs() <= 3.0 * se, "residual variance {m}, se {se}");
}
