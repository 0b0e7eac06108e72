use rram_mcmc::crossbar::CrossbarArray;
use rram_mcmc::device::{DeviceLaw, VariabilityMode};
use rram_mcmc::mcmc::{train, LikelihoodModel, McmcConfig};
use rram_mcmc::rng::rng_from_seed;

/// Two-bump likelihood over a single parameter.
struct TwoBumps;

impl LikelihoodModel for TwoBumps {
    fn log_likelihood(&self, g: &[f64]) -> f64 {
        let w = g[0];
        let bump = |m: f64, s: f64| (-(w - m) * (w - m) / (2.0 * s * s)).exp() / s;
        (0.6 * bump(-1.0, 0.5) + 0.4 * bump(1.2, 0.6)).ln()
    }

    fn row_function(&self, x: f64) -> f64 {
        x
    }
}

/// Constant spread, median equal to the current: every proposal is a plain
/// symmetric Gaussian step around the source conductance.
fn idealized_law() -> DeviceLaw {
    DeviceLaw::new(0.8, 0.0, 1.0, 1.0, 0.0, 10.0, 10_000.0).unwrap()
}

fn histogram(rows: usize, burn_in: usize, seed: u64, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut cfg = McmcConfig::new(3.0, 1.0, burn_in);
    cfg.variability_mode = VariabilityMode::CycleOnly;
    cfg.reject_cap = 100_000;
    let mut rng = rng_from_seed(seed);
    let mut array = CrossbarArray::new(rows, 1, idealized_law(), None, VariabilityMode::CycleOnly, &mut rng).unwrap();
    train(&mut array, &TwoBumps, &cfg, &mut rng).unwrap();

    let width = (hi - lo) / bins as f64;
    let mut h = vec![0.0; bins];
    for n in burn_in..rows {
        let w = array.read_row(n).unwrap()[0];
        let k = (((w - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        h[k] += array.counter(n).unwrap() as f64;
    }
    let total: f64 = h.iter().sum();
    h.iter_mut().for_each(|x| *x /= total);
    h
}

#[test]
fn stationary_histogram_survives_doubling_the_chain() {
    let short = histogram(10_000, 1_000, 21, -4.0, 4.0, 32);
    let long = histogram(20_000, 1_000, 22, -4.0, 4.0, 32);
    let tv: f64 = short.iter().zip(&long).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.08, "total variation {tv}");
}
