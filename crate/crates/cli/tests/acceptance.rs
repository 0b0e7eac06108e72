//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rram_mcmc::crossbar::CrossbarArray;
use rram_mcmc::device::{DeviceLaw, VariabilityMode};
use rram_mcmc::mcmc::{log_acceptance_ratio, posterior_response, train, LikelihoodModel, McmcConfig};
use rram_mcmc::reinforcement::{cartpole_step, Action, CartpoleConfig, CartpoleState};
use rram_mcmc::rng::rng_from_seed;
use rram_mcmc::stats;
use rram_mcmc::supervised::{logistic_row_function, LabeledDataset, LogisticModel};
use rram_mcmc_cli::config::SupervisedSection;
use rram_mcmc_cli::{run, ExperimentConfig, Report};

// Criterion 1
const LAW_A: f64 = 0.093;
const LAW_B: f64 = 0.48;
const LAW_C: f64 = 0.78;
const LAW_D: f64 = 0.19;
const EXPONENT_TOL: f64 = 0.05;
const PREFACTOR_REL_TOL: f64 = 0.05;
const CHARACTERIZE_LIMIT: Duration = Duration::from_secs(10);

// Criterion 2
const TV_LIMIT: f64 = 0.08;
const MIN_EFFECTIVE_SAMPLES: u64 = 10_000;
const ORACLE_LIMIT: Duration = Duration::from_secs(30);

// Criterion 3
const BC_MEDIAN_LO: f64 = 0.963 - 0.025;
const BC_MEDIAN_HI: f64 = 0.963 + 0.025;
const BC_BURN_IN_ROWS: usize = 32;
const BC_CONVERGED_WITHIN: f64 = 0.02;
const BC_SMOKE_LIMIT: Duration = Duration::from_secs(60);

// Criterion 4
const TWO_D_MIN_PERFECT: usize = 19;

// Criterion 5
const CARTPOLE_MEDIAN_MIN: f64 = 440.0;
const CARTPOLE_SMOKE_LIMIT: Duration = Duration::from_secs(120);

// Criterion 6
const D2D_MEDIAN_REL_TOL: f64 = 0.10;

fn wdbc_path() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/wdbc.csv"))
}

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

fn preset(name: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(name).expect("bundled preset");
    if let Some(SupervisedSection::Csv { path, .. }) = cfg.supervised.as_mut() {
        *path = wdbc_path();
    }
    cfg
}

fn timed(cfg: &ExperimentConfig) -> Result<(Report, Duration), String> {
    let dir = scratch();
    let start = Instant::now();
    let report = run(cfg, dir.path(), 1).map_err(|e| e.to_string())?;
    Ok((report, start.elapsed()))
}

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn device_law_recovery() -> Check {
    let (report, elapsed) = timed(&preset("characterize-256"))?;
    let Report::Characterize(r) = report else { return Err("unexpected report".into()) };
    let (m, s) = (r.sweep.median_fit, r.sweep.sd_fit);
    let detail = format!(
        "c={:.4} d={:.4} b={:.4} a={:.4} over {} currents in {elapsed:.2?}",
        m.exponent,
        m.prefactor,
        s.exponent,
        s.prefactor,
        r.sweep.rows.len()
    );
    let ok = (m.exponent - LAW_C).abs() <= EXPONENT_TOL
        && (s.exponent - LAW_B).abs() <= EXPONENT_TOL
        && (m.prefactor / LAW_D - 1.0).abs() <= PREFACTOR_REL_TOL
        && (s.prefactor / LAW_A - 1.0).abs() <= PREFACTOR_REL_TOL
        && r.sweep.rows.len() == 9
        && elapsed < CHARACTERIZE_LIMIT;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Median equal to the current and a constant spread: proposals are plain
/// symmetric Gaussian steps.
fn idealized_law() -> DeviceLaw {
    DeviceLaw::new(0.8, 0.0, 1.0, 1.0, 0.0, 10.0, 10_000.0).unwrap()
}

struct TwoBumps;

fn two_bumps(w: f64) -> f64 {
    let bump = |m: f64, s: f64| (-(w - m) * (w - m) / (2.0 * s * s)).exp() / s;
    0.6 * bump(-1.0, 0.5) + 0.4 * bump(1.2, 0.6)
}

impl LikelihoodModel for TwoBumps {
    fn log_likelihood(&self, g: &[f64]) -> f64 {
        two_bumps(g[0]).ln()
    }
    fn row_function(&self, x: f64) -> f64 {
        x
    }
}

/// Regular binning over a box; values outside land in the edge bins.
struct Bins {
    lo: f64,
    hi: f64,
    per_axis: usize,
    dims: usize,
}

impl Bins {
    fn len(&self) -> usize {
        self.per_axis.pow(self.dims as u32)
    }

    fn index(&self, w: &[f64]) -> usize {
        let width = (self.hi - self.lo) / self.per_axis as f64;
        w.iter().fold(0, |acc, &x| {
            let k = (((x - self.lo) / width).floor().max(0.0) as usize).min(self.per_axis - 1);
            acc * self.per_axis + k
        })
    }

    /// Bin masses of an unnormalized density, integrated by the midpoint rule
    /// over `[lo - pad, hi + pad]` per axis.
    fn oracle(&self, pad: f64, steps: usize, density: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let (lo, hi) = (self.lo - pad, self.hi + pad);
        let h = (hi - lo) / steps as f64;
        let mut mass = vec![0.0; self.len()];
        let mut point = vec![0.0; self.dims];
        for flat in 0..steps.pow(self.dims as u32) {
            let mut rest = flat;
            for x in point.iter_mut().rev() {
                *x = lo + h * ((rest % steps) as f64 + 0.5);
                rest /= steps;
            }
            mass[self.index(&point)] += density(&point);
        }
        let total: f64 = mass.iter().sum();
        mass.iter_mut().for_each(|m| *m /= total);
        mass
    }

    fn chain(&self, array: &CrossbarArray, burn_in: usize) -> (Vec<f64>, u64) {
        let mut mass = vec![0.0; self.len()];
        let mut total = 0;
        for n in burn_in..array.rows() {
            let c = array.counter(n).unwrap();
            mass[self.index(&array.read_row(n).unwrap())] += c as f64;
            total += c;
        }
        mass.iter_mut().for_each(|m| *m /= total as f64);
        (mass, total)
    }
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
}

fn sample_toy(
    model: &dyn LikelihoodModel,
    cols: usize,
    rows: usize,
    burn_in: usize,
    sigma: f64,
    seed: u64,
) -> Result<CrossbarArray, String> {
    let mut cfg = McmcConfig::new(sigma, 1.0, burn_in);
    cfg.variability_mode = VariabilityMode::CycleOnly;
    cfg.reject_cap = 1_000_000;
    let mut rng = rng_from_seed(seed);
    let mut array = CrossbarArray::new(rows, cols, idealized_law(), None, VariabilityMode::CycleOnly, &mut rng)
        .map_err(|e| e.to_string())?;
    train(&mut array, model, &cfg, &mut rng).map_err(|e| e.to_string())?;
    Ok(array)
}

fn toy_dataset() -> LabeledDataset {
    LabeledDataset::new(
        vec![
            vec![1.0, 0.5],
            vec![-0.5, 1.0],
            vec![0.3, -1.0],
            vec![-1.0, -0.4],
            vec![0.8, 0.8],
            vec![-0.6, -0.9],
            vec![1.5, -0.2],
            vec![-1.2, 0.6],
        ],
        vec![1, 1, 0, 0, 0, 1, 1, 0],
        vec!["x0".into(), "x1".into()],
    )
    .unwrap()
}

fn sampler_oracle() -> Check {
    let start = Instant::now();

    let sigma1 = 3.0;
    let bins1 = Bins { lo: -4.0, hi: 4.0, per_axis: 32, dims: 1 };
    let oracle1 = bins1.oracle(4.0, 20_000, |w| (-(w[0] * w[0]) / (2.0 * sigma1 * sigma1)).exp() * two_bumps(w[0]));
    let array1 = sample_toy(&TwoBumps, 1, 20_000, 1_000, sigma1, 11)?;
    let (hist1, n1) = bins1.chain(&array1, 1_000);
    let tv1 = total_variation(&hist1, &oracle1);
    let prior1 = bins1.oracle(4.0, 20_000, |w| (-(w[0] * w[0]) / (2.0 * sigma1 * sigma1)).exp());
    let power1 = total_variation(&hist1, &prior1);

    let data = toy_dataset();
    let sigma2 = 2.0;
    let scale = 2.0;
    let model = LogisticModel::new(&data, scale);
    let bins2 = Bins { lo: -6.0, hi: 6.0, per_axis: 10, dims: 2 };
    let oracle2 = bins2.oracle(4.0, 400, |w| {
        let prior = (-(w[0] * w[0] + w[1] * w[1]) / (2.0 * sigma2 * sigma2)).exp();
        let lik: f64 = data
            .rows()
            .zip(data.labels())
            .map(|(x, &t)| {
                let p = 1.0 / (1.0 + (-scale * (w[0] * x[0] + w[1] * x[1])).exp());
                if t == 1 {
                    p
                } else {
                    1.0 - p
                }
            })
            .product();
        prior * lik
    });
    let array2 = sample_toy(&model, 2, 40_000, 2_000, sigma2, 12)?;
    let (hist2, n2) = bins2.chain(&array2, 2_000);
    let tv2 = total_variation(&hist2, &oracle2);
    let prior2 = bins2.oracle(4.0, 400, |w| (-(w[0] * w[0] + w[1] * w[1]) / (2.0 * sigma2 * sigma2)).exp());
    let power2 = total_variation(&hist2, &prior2);

    let elapsed = start.elapsed();
    let detail = format!(
        "1-parameter TV {tv1:.4} ({n1} samples, {power1:.3} from the prior alone), \
         2-parameter TV {tv2:.4} ({n2} samples, {power2:.3} from the prior alone) in {elapsed:.2?}"
    );
    // The oracle must also tell the posterior apart from the prior.
    let ok = tv1 < TV_LIMIT
        && tv2 < TV_LIMIT
        && power1 > TV_LIMIT
        && power2 > TV_LIMIT
        && n1 >= MIN_EFFECTIVE_SAMPLES
        && n2 >= MIN_EFFECTIVE_SAMPLES
        && elapsed < ORACLE_LIMIT;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn breast_cancer() -> Check {
    let (smoke, smoke_time) = timed(&preset("breast-cancer-smoke"))?;
    let Report::Supervised(smoke) = smoke else { return Err("unexpected report".into()) };

    let cfg = preset("breast-cancer-256x16");
    let (report, elapsed) = timed(&cfg)?;
    let Report::Supervised(summary) = report else { return Err("unexpected report".into()) };
    let median = summary.stats.median;

    // Training accuracy per accepted row of the first run; converged once it
    // comes within tolerance of its post-burn-in median.
    let trace: Vec<f64> = summary.runs[0].record.rows.iter().map(|r| r.accepted_metric).collect();
    let settled = stats::median(&trace[BC_BURN_IN_ROWS..]).unwrap_or(f64::NAN);
    let converged_at = trace.iter().position(|&a| a >= settled - BC_CONVERGED_WITHIN).unwrap_or(trace.len());

    let detail = format!(
        "{} runs, median test accuracy {:.4} (q1 {:.4}, q3 {:.4}) in {elapsed:.2?}; run 0 converged at row {converged_at} \
         (settled training accuracy {settled:.4}); {}-run smoke median {:.4} in {smoke_time:.2?}",
        summary.runs.len(),
        median,
        summary.stats.q1,
        summary.stats.q3,
        smoke.runs.len(),
        smoke.stats.median
    );
    let ok = summary.runs.len() == 100
        && (BC_MEDIAN_LO..=BC_MEDIAN_HI).contains(&median)
        && converged_at <= BC_BURN_IN_ROWS
        && smoke.runs.len() == 10
        && smoke_time < BC_SMOKE_LIMIT;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn illustrative_two_d() -> Check {
    let cfg = preset("illustrative-2d");
    let shift = match cfg.supervised {
        Some(SupervisedSection::TwoGaussians { shift, .. }) => shift,
        _ => return Err("preset is not the two-blob task".into()),
    };
    let (report, elapsed) = timed(&cfg)?;
    let Report::Supervised(summary) = report else { return Err("unexpected report".into()) };
    let perfect = summary.accuracies().iter().filter(|&&a| a == 1.0).count();

    // Along the segment joining the class means the posterior probability
    // must start above one half and end below it.
    let mcmc = cfg.mcmc_config(cfg.mcmc.as_ref().ok_or("preset lacks [mcmc]")?);
    let mut crossings = 0;
    for r in &summary.runs {
        let array = CrossbarArray::restore(&r.snapshot).map_err(|e| e.to_string())?;
        let p = |t: f64| {
            let v = [-shift + 2.0 * shift * t, shift - 2.0 * shift * t];
            posterior_response(&array, &v, mcmc.burn_in, |x| logistic_row_function(x, mcmc.scale)).unwrap()
        };
        if p(0.0) > 0.5 && p(1.0) < 0.5 {
            crossings += 1;
        }
    }
    let detail = format!(
        "{perfect}/{} runs with accuracy 1.0, contour crosses 0.5 between the means in {crossings} runs, {elapsed:.2?}",
        summary.runs.len()
    );
    let ok = summary.runs.len() == 20 && perfect >= TWO_D_MIN_PERFECT && crossings == summary.runs.len();
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rl_median(cfg: &ExperimentConfig) -> Result<(f64, usize, Duration), String> {
    let (report, elapsed) = timed(cfg)?;
    let Report::Rl(summary) = report else { return Err("unexpected report".into()) };
    Ok((summary.stats.median, summary.runs.len(), elapsed))
}

fn cartpole() -> Check {
    let smoke = preset("cartpole-smoke-64");
    let (smoke_median, _, smoke_time) = rl_median(&smoke)?;
    let cfg = preset("cartpole-512x4");
    let (median, runs, elapsed) = rl_median(&cfg)?;
    let detail = format!(
        "{runs} runs, median mean test reward {median:.1} in {elapsed:.2?}; 64-row smoke median {smoke_median:.1} in {smoke_time:.2?}"
    );
    let ok = runs == 20 && median >= CARTPOLE_MEDIAN_MIN && smoke_time < CARTPOLE_SMOKE_LIMIT;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn d2d_insensitivity() -> Check {
    let base = preset("cartpole-512x4");
    let mut cycle = base.clone();
    let mut d2d = base;
    cycle.mcmc.as_mut().unwrap().variability_mode = VariabilityMode::CycleOnly;
    d2d.mcmc.as_mut().unwrap().variability_mode = VariabilityMode::CycleAndD2d;
    let (m_cycle, _, _) = rl_median(&cycle)?;
    let (m_d2d, _, _) = match rl_median(&d2d) {
        Ok(r) => r,
        Err(e) => return Err(format!("cycle-only median {m_cycle:.1}; with device-to-device spread: {e}")),
    };
    let rel = (m_d2d - m_cycle).abs() / m_cycle;
    let detail =
        format!("cycle-only median {m_cycle:.1}, with device-to-device spread {m_d2d:.1}, relative gap {rel:.3}");
    if rel < D2D_MEDIAN_REL_TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn invariants() -> Check {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };

    let law = DeviceLaw::with_conductance_range(0.093, 0.48, 0.78, 0.19, 0.096, 40.0, 80.0).unwrap();
    let mut rng = rng_from_seed(1);
    let mut array = CrossbarArray::new(4, 5, law.clone(), None, VariabilityMode::CycleAndD2d, &mut rng).unwrap();
    array.initialize_row(1, &mut rng).unwrap();
    let (u, v) = ([0.3, -1.2, 2.0, 0.7, -0.1], [1.5, 0.2, -0.8, -2.2, 0.9]);
    let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 2.5 * a - 0.75 * b).collect();
    let lhs = array.dot_product(1, &mix).unwrap();
    let rhs = 2.5 * array.dot_product(1, &u).unwrap() - 0.75 * array.dot_product(1, &v).unwrap();
    check("dot-product linearity", (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));

    let (lo, hi) = law.median_range();
    let round_trip = (0..=100).all(|k| {
        let g = lo + (hi - lo) * k as f64 / 100.0;
        let back = law.median_conductance(law.d, law.i_set_for_target(g)).unwrap();
        (back - g).abs() <= 1e-9 * g
    });
    check("device-law round trip", round_trip);

    let data = toy_dataset();
    let mut cfg = McmcConfig::new(100.0, 0.2, 4);
    cfg.variability_mode = VariabilityMode::CycleOnly;
    cfg.reject_cap = 100_000;
    let model = LogisticModel::new(&data, cfg.scale);
    let mut chain = CrossbarArray::new(32, 2, law, None, VariabilityMode::CycleOnly, &mut rng_from_seed(2)).unwrap();
    let record = train(&mut chain, &model, &cfg, &mut rng_from_seed(3)).unwrap();
    check("counter conservation", chain.counters().iter().sum::<u64>() == record.accepts + record.rejects);

    let before = posterior_response(&chain, &[0.4, -0.7], cfg.burn_in, |x| model.row_function(x)).unwrap();
    for n in 0..cfg.burn_in {
        chain.write_row(n, &[123.0, 7.0], &[1.0, 99.0]).unwrap();
    }
    let after = posterior_response(&chain, &[0.4, -0.7], cfg.burn_in, |x| model.row_function(x)).unwrap();
    check("burn-in exclusion", before.to_bits() == after.to_bits());

    let equivalent =
        [(0.2, 0.7, 0.05, 0.3), (1e-4, 0.5, 0.9, 0.01), (0.6, 0.6, 0.6, 0.6)].iter().all(|&(lp, pp, lc, pc)| {
            let a: f64 = log_acceptance_ratio(f64::ln(lp), f64::ln(pp), f64::ln(lc), f64::ln(pc)).unwrap();
            let linear = (lp * pp) / (lc * pc);
            (a.exp() - linear).abs() <= 1e-12 * linear
        });
    check("log/linear acceptance equivalence", equivalent);

    let env = CartpoleConfig::default();
    let s = CartpoleState { x: 0.3, v: -0.4, theta: 0.05, omega: 0.2, step_count: 7 };
    let mirrored = [Action::Left, Action::Right].iter().all(|&a| {
        let next = cartpole_step(&s, a, &env).unwrap();
        let twin = cartpole_step(&s.mirrored(), a.mirrored(), &env).unwrap();
        twin.state == next.state.mirrored()
    });
    check("cart-pole mirror symmetry", mirrored);

    let mut reruns = ExperimentConfig::preset("cartpole-smoke-64").unwrap();
    reruns.runs = 2;
    let (a, b) = (scratch(), scratch());
    let same =
        run(&reruns, a.path(), 1).is_ok() && run(&reruns, b.path(), 1).is_ok() && tree(a.path()) == tree(b.path());
    check("byte-identical reruns", same);

    if failed.is_empty() {
        Ok("linearity, round trip, counters, burn-in, log/linear, mirror symmetry, reruns".into())
    } else {
        Err(format!("failed: {}", failed.join(", ")))
    }
}

fn tree(root: &std::path::Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("device-law recovery", device_law_recovery),
        ("sampler correctness oracle", sampler_oracle),
        ("breast-cancer reproduction", breast_cancer),
        ("illustrative 2-D task", illustrative_two_d),
        ("cart-pole reproduction", cartpole),
        ("device-to-device insensitivity", d2d_insensitivity),
        ("invariant suites", invariants),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {id} {name}: PASS ({detail})"),
            Err(detail) => {
                failures += 1;
                println!("criterion {id} {name}: FAIL ({detail})");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
