//! Fixed workloads shared by the benchmarks.

use modreg_core::sim::{generate, Setting, SimConfig};
use modreg_core::{Dataset, FusionDataset};

/// Gaussian chain `X → Z → Y` with `p` covariates and auxiliaries and
/// `s` active coordinates.
pub fn chain(n: usize, p: usize, s: usize, seed: u64) -> Dataset {
    config(n, p, s, seed, None).0
}

/// Triples of size `n` with `(X, Z)` and `(Z, Y)` blocks of `rho · n` rows.
pub fn fusion(n: usize, p: usize, s: usize, rho: f64, seed: u64) -> FusionDataset {
    config(n, p, s, seed, Some(rho)).1.expect("rho > 0 gives pair blocks")
}

fn config(n: usize, p: usize, s: usize, seed: u64, rho: Option<f64>) -> (Dataset, Option<FusionDataset>) {
    let mut c = SimConfig::new(Setting::High1).with_seed(seed);
    c.n = n;
    c.n_test = 1;
    c.p_x = p;
    c.p_z = p;
    c.s = s;
    c.rho = rho;
    let g = generate(&c, 0).expect("valid benchmark config");
    (g.train, g.fusion)
}
