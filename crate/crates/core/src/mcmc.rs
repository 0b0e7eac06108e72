//! Metropolis-Hastings training over a crossbar.
//!
//! The chain walks down the rows of the array. Row `n` holds the current
//! model; a proposal is programmed into row `n + 1` by the device physics
//! itself. On acceptance the new row's counter starts at one and the chain
//! moves on; on rejection the proposal is erased and the current row's
//! counter grows. After the last row is accepted the array holds a
//! counter-weighted sample of the posterior.
//!
//! All probabilities are handled in the log domain.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossbar::{CrossbarArray, CrossbarError};
use crate::device::VariabilityMode;
use crate::rng::uniform_open_closed;

/// Per-point log-probabilities are floored here so a saturated logistic never
/// produces `-inf`.
pub const LOG_FLOOR: f64 = -690.775_527_898_213_7; // ln(1e-300)

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McmcError {
    #[error("chain stuck at row {row}: {rejections} consecutive rejections")]
    StuckChain { row: usize, rejections: u64 },
    #[error("non-finite value in acceptance ratio: {0}")]
    NonFinite(String),
    #[error("invalid MCMC configuration: {0}")]
    InvalidConfig(String),
    #[error("no posterior weight after burn-in (rows {burn_in}..)")]
    NoPosteriorWeight { burn_in: usize },
    #[error(transparent)]
    Crossbar(#[from] CrossbarError),
}

pub type Result<T> = std::result::Result<T, McmcError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    /// Prior standard deviation per parameter.
    pub sigma_prior: f64,
    /// Prior mean per parameter.
    #[serde(default)]
    pub mu_prior: f64,
    /// Scaling `S` inside the row function.
    pub scale: f64,
    /// Number of leading rows excluded from inference.
    pub burn_in: usize,
    /// Consecutive rejections at one row before the chain is declared stuck.
    #[serde(default = "default_reject_cap")]
    pub reject_cap: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variability_mode: VariabilityMode,
}

fn default_reject_cap() -> u64 {
    1000
}

impl McmcConfig {
    pub fn new(sigma_prior: f64, scale: f64, burn_in: usize) -> Self {
        McmcConfig {
            sigma_prior,
            mu_prior: 0.0,
            scale,
            burn_in,
            reject_cap: default_reject_cap(),
            seed: 0,
            variability_mode: VariabilityMode::CycleAndD2d,
        }
    }

    /// Check the configuration against an array with `rows` rows.
    pub fn validate(&self, rows: usize) -> Result<()> {
        if !(self.sigma_prior.is_finite() && self.sigma_prior > 0.0) {
            return Err(McmcError::InvalidConfig(format!("sigma_prior must be positive, got {}", self.sigma_prior)));
        }
        if !self.mu_prior.is_finite() || !self.scale.is_finite() {
            return Err(McmcError::InvalidConfig("mu_prior and scale must be finite".into()));
        }
        if self.reject_cap < 1 {
            return Err(McmcError::InvalidConfig("reject_cap must be at least 1".into()));
        }
        if rows < self.burn_in + 2 {
            return Err(McmcError::InvalidConfig(format!(
                "{rows} rows cannot hold burn-in {} plus two rows",
                self.burn_in
            )));
        }
        Ok(())
    }
}

/// The model a row encodes: a likelihood over the training data plus the
/// scalar function applied to a row's dot product.
pub trait LikelihoodModel {
    /// Log-likelihood of the data under parameters `g`. Must be finite for finite `g`.
    fn log_likelihood(&self, g: &[f64]) -> f64;

    /// Row function `f` applied to a dot product.
    fn row_function(&self, x: f64) -> f64;

    /// Metric recorded for each accepted row in the run trace.
    fn row_metric(&self, g: &[f64]) -> f64 {
        self.log_likelihood(g)
    }
}

/// Sum of independent normal log-densities `N(mu, sigma)` over the parameters.
pub fn log_prior(g: &[f64], cfg: &McmcConfig) -> f64 {
    let sigma = cfg.sigma_prior;
    let norm = -(sigma * (2.0 * PI).sqrt()).ln();
    g.iter()
        .map(|x| {
            let z = x - cfg.mu_prior;
            norm - z * z / (2.0 * sigma * sigma)
        })
        .sum()
}

/// `(prior_p + lik_p) - (prior_c + lik_c)`; the device proposal is symmetric,
/// so no proposal-density correction appears.
pub fn log_acceptance_ratio(log_lik_p: f64, log_prior_p: f64, log_lik_c: f64, log_prior_c: f64) -> Result<f64> {
    for (name, v) in [
        ("proposed log-likelihood", log_lik_p),
        ("proposed log-prior", log_prior_p),
        ("current log-likelihood", log_lik_c),
        ("current log-prior", log_prior_c),
    ] {
        if !v.is_finite() {
            return Err(McmcError::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok((log_prior_p + log_lik_p) - (log_prior_c + log_lik_c))
}

/// Accept when `log_a >= ln u` with `u ~ Uniform(0, 1]`. Consumes one uniform.
pub fn accept_decision<R: Rng + ?Sized>(log_a: f64, rng: &mut R) -> bool {
    let u = uniform_open_closed(rng);
    log_a >= u.ln()
}

/// Trace entry for one accepted row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowTrace {
    pub row: usize,
    pub accepted_metric: f64,
    pub counter: u64,
    pub rejects: u64,
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: McmcConfig,
    pub rows: Vec<RowTrace>,
    /// Accept (`true`) / reject (`false`) outcome of every proposal, in order.
    pub trace: Vec<bool>,
    /// Accept events, counting the initialization of row 0.
    pub accepts: u64,
    pub rejects: u64,
}

impl RunRecord {
    pub(crate) fn new(config: McmcConfig) -> Self {
        RunRecord { config, rows: Vec::new(), trace: Vec::new(), accepts: 0, rejects: 0 }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serialization cannot fail")
    }

    /// `row,accepted_metric,counter,rejects` per accepted row.
    pub fn write_trace_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Copy final counter values from the array into the per-row trace.
    pub(crate) fn finalize_counters(&mut self, counters: &[u64]) {
        for row in &mut self.rows {
            row.counter = counters[row.row];
            row.rejects = row.counter.saturating_sub(1);
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.trace.is_empty() {
            return 0.0;
        }
        self.trace.iter().filter(|&&a| a).count() as f64 / self.trace.len() as f64
    }
}

/// Run the chain from an erased array to its last row.
pub fn train<M: LikelihoodModel + ?Sized, R: Rng + ?Sized>(
    array: &mut CrossbarArray,
    model: &M,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<RunRecord> {
    cfg.validate(array.rows())?;
    let last = array.rows() - 1;
    let mut record = RunRecord::new(cfg.clone());

    array.reset_all();
    array.initialize_row(0, rng)?;
    array.set_counter(0, 1)?;
    record.accepts = 1;

    let mut g = array.read_row(0)?;
    let mut cur_prior = log_prior(&g, cfg);
    let mut cur_lik = model.log_likelihood(&g);
    record.rows.push(RowTrace { row: 0, accepted_metric: model.row_metric(&g), counter: 1, rejects: 0 });

    let mut n = 0;
    let mut consecutive = 0u64;
    while n < last {
        array.propose_row(n, n + 1, rng)?;
        array.read_row_into(n + 1, &mut g)?;
        let prop_prior = log_prior(&g, cfg);
        let prop_lik = model.log_likelihood(&g);
        let log_a = log_acceptance_ratio(prop_lik, prop_prior, cur_lik, cur_prior)?;
        let accepted = accept_decision(log_a, rng);
        record.trace.push(accepted);
        if accepted {
            n += 1;
            array.increment_counter(n)?;
            record.accepts += 1;
            cur_prior = prop_prior;
            cur_lik = prop_lik;
            consecutive = 0;
            record.rows.push(RowTrace { row: n, accepted_metric: model.row_metric(&g), counter: 1, rejects: 0 });
        } else {
            array.erase_row(n + 1)?;
            array.increment_counter(n)?;
            record.rejects += 1;
            consecutive += 1;
            if consecutive >= cfg.reject_cap {
                return Err(McmcError::StuckChain { row: n, rejections: consecutive });
            }
        }
    }
    record.finalize_counters(array.counters());
    Ok(record)
}

/// Counter-weighted response `(1/Tot) * sum_{n >= burn_in} C_n * f(v . g_n)`.
pub fn posterior_response<F: Fn(f64) -> f64>(array: &CrossbarArray, v: &[f64], burn_in: usize, f: F) -> Result<f64> {
    let mut total = 0u64;
    let mut acc = 0.0;
    for n in burn_in..array.rows() {
        let c = array.counter(n)?;
        if c == 0 {
            continue;
        }
        total += c;
        acc += c as f64 * f(array.dot_product(n, v)?);
    }
    if total == 0 {
        return Err(McmcError::NoPosteriorWeight { burn_in });
    }
    Ok(acc / total as f64)
}

/// Posterior prediction for input `v` using the model's row function.
pub fn infer<M: LikelihoodModel + ?Sized>(
    array: &CrossbarArray,
    model: &M,
    v: &[f64],
    cfg: &McmcConfig,
) -> Result<f64> {
    posterior_response(array, v, cfg.burn_in, |x| model.row_function(x))
}
