//! Policy search on a cart-pole with two competing crossbars.
//!
//! One array scores "push left", the other "push right"; the larger response
//! `S * (v . g)` wins. Rows of equal index in both arrays form one joint model
//! and share a counter. The acceptance ratio replaces the likelihood ratio by
//! the ratio of episode rewards, divided by the exploration constant `kappa`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossbar::{CrossbarArray, CrossbarError, PosteriorSnapshot};
use crate::experiment::{in_pool, ArraySetup, ExperimentError};
use crate::mcmc::{accept_decision, log_prior, McmcConfig, McmcError, RowTrace, RunRecord};
use crate::rng::{derive_seed, stream_rng, stream_seed, Stream};
use crate::stats::BoxStats;

/// Number of observed state variables.
pub const OBSERVATION_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RlError {
    #[error("episode already terminated at step {0}")]
    EpisodeOver(u32),
    #[error("reward must be positive, got {0}")]
    NonPositiveReward(f64),
    #[error("invalid reinforcement configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
}

impl From<CrossbarError> for RlError {
    fn from(e: CrossbarError) -> Self {
        RlError::Mcmc(e.into())
    }
}

/// Physical constants and episode limits of the cart-pole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartpoleConfig {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force: f64,
    /// Integration timestep in seconds.
    pub tau: f64,
    pub angle_limit_deg: f64,
    pub x_limit: f64,
    pub max_steps: u32,
    /// Half-width of the uniform initial perturbation of every state variable.
    pub init_spread: f64,
}

impl Default for CartpoleConfig {
    fn default() -> Self {
        CartpoleConfig {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            half_length: 0.5,
            force: 10.0,
            tau: 0.02,
            angle_limit_deg: 15.0,
            x_limit: 2.4,
            max_steps: 500,
            init_spread: 0.05,
        }
    }
}

impl CartpoleConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let positive = [
            ("mass_cart", self.mass_cart),
            ("mass_pole", self.mass_pole),
            ("half_length", self.half_length),
            ("tau", self.tau),
            ("angle_limit_deg", self.angle_limit_deg),
            ("x_limit", self.x_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(RlError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.gravity.is_finite() || !(self.force.is_finite() && self.force >= 0.0) {
            return Err(RlError::InvalidConfig("gravity and force must be finite".into()));
        }
        if !(self.init_spread.is_finite() && self.init_spread >= 0.0) {
            return Err(RlError::InvalidConfig("init_spread must be non-negative".into()));
        }
        if self.max_steps == 0 {
            return Err(RlError::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn angle_limit(&self) -> f64 {
        self.angle_limit_deg.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartpoleState {
    pub x: f64,
    pub v: f64,
    pub theta: f64,
    pub omega: f64,
    pub step_count: u32,
}

impl CartpoleState {
    /// Observation vector `[x, v, theta, omega]`.
    pub fn observation(&self) -> [f64; OBSERVATION_DIM] {
        [self.x, self.v, self.theta, self.omega]
    }

    pub fn is_alive(&self, cfg: &CartpoleConfig) -> bool {
        self.theta.abs() < cfg.angle_limit() && self.x.abs() < cfg.x_limit && self.step_count < cfg.max_steps
    }

    /// Every variable drawn uniformly from `[-init_spread, init_spread]`.
    pub fn random_start<R: Rng + ?Sized>(cfg: &CartpoleConfig, rng: &mut R) -> Self {
        let s = cfg.init_spread;
        let mut draw = || if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
        CartpoleState { x: draw(), v: draw(), theta: draw(), omega: draw(), step_count: 0 }
    }

    /// State with position, velocity, angle and angular velocity negated.
    pub fn mirrored(&self) -> Self {
        CartpoleState { x: -self.x, v: -self.v, theta: -self.theta, omega: -self.omega, step_count: self.step_count }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Left,
    Right,
}

impl Action {
    pub fn mirrored(self) -> Self {
        match self {
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: CartpoleState,
    pub reward: u32,
    pub done: bool,
}

/// Advance one timestep with explicit Euler integration. Every step,
/// including the terminating one, earns `+1`.
pub fn cartpole_step(state: &CartpoleState, action: Action, cfg: &CartpoleConfig) -> Result<StepOutcome, RlError> {
    if !state.is_alive(cfg) {
        return Err(RlError::EpisodeOver(state.step_count));
    }
    let force = match action {
        Action::Right => cfg.force,
        Action::Left => -cfg.force,
    };
    let total_mass = cfg.mass_cart + cfg.mass_pole;
    let pole_moment = cfg.mass_pole * cfg.half_length;
    let (sin, cos) = (state.theta.sin(), state.theta.cos());
    let temp = (force + pole_moment * state.omega * state.omega * sin) / total_mass;
    let theta_acc =
        (cfg.gravity * sin - cos * temp) / (cfg.half_length * (4.0 / 3.0 - cfg.mass_pole * cos * cos / total_mass));
    let x_acc = temp - pole_moment * theta_acc * cos / total_mass;

    let next = CartpoleState {
        x: state.x + cfg.tau * state.v,
        v: state.v + cfg.tau * x_acc,
        theta: state.theta + cfg.tau * state.omega,
        omega: state.omega + cfg.tau * theta_acc,
        step_count: state.step_count + 1,
    };
    Ok(StepOutcome { state: next, reward: 1, done: !next.is_alive(cfg) })
}

/// Winner-take-all between the two responses; an exact tie goes left.
pub fn wta_action(left_response: f64, right_response: f64) -> Action {
    if left_response >= right_response {
        Action::Left
    } else {
        Action::Right
    }
}

/// `(prior_p - prior_c) + ln r_p - ln r_c - ln kappa`.
pub fn rl_log_acceptance(
    reward_p: f64,
    reward_c: f64,
    log_prior_p: f64,
    log_prior_c: f64,
    kappa: f64,
) -> Result<f64, RlError> {
    for r in [reward_p, reward_c] {
        if !(r > 0.0 && r.is_finite()) {
            return Err(RlError::NonPositiveReward(r));
        }
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(RlError::InvalidConfig(format!("kappa must be positive, got {kappa}")));
    }
    if !(log_prior_p.is_finite() && log_prior_c.is_finite()) {
        return Err(McmcError::NonFinite("log-prior".into()).into());
    }
    Ok((log_prior_p - log_prior_c) + reward_p.ln() - reward_c.ln() - kappa.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlConfig {
    /// Exploration constant dividing the acceptance ratio.
    pub kappa: f64,
    #[serde(default = "default_test_episodes")]
    pub test_episodes: usize,
    #[serde(default)]
    pub env: CartpoleConfig,
}

fn default_test_episodes() -> usize {
    100
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig { kappa: 1.0, test_episodes: default_test_episodes(), env: CartpoleConfig::default() }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(RlError::InvalidConfig(format!("kappa must be positive, got {}", self.kappa)));
        }
        self.env.validate()
    }
}

/// Two arrays of identical shape, one per action.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPair {
    pub left: CrossbarArray,
    pub right: CrossbarArray,
}

/// Which model drives the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    /// The models stored in one row (training episodes).
    Row(usize),
    /// The counter-weighted posterior over rows `burn_in..` (test episodes).
    Posterior { burn_in: usize },
}

/// Action selector resolved for a given mode. In posterior mode the weighted
/// sum `(1/Tot) sum_n C_n (v . g_n)` is linear in `v`, so it is folded into a
/// single weight vector per array.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPolicy {
    left: [f64; OBSERVATION_DIM],
    right: [f64; OBSERVATION_DIM],
    scale: f64,
}

fn posterior_weights(array: &CrossbarArray, burn_in: usize) -> Result<[f64; OBSERVATION_DIM], McmcError> {
    let mut acc = [0.0; OBSERVATION_DIM];
    let mut total = 0u64;
    let mut row = vec![0.0; array.cols()];
    for n in burn_in..array.rows() {
        let c = array.counter(n)?;
        if c == 0 {
            continue;
        }
        total += c;
        array.read_row_into(n, &mut row)?;
        acc.iter_mut().zip(&row).for_each(|(a, g)| *a += c as f64 * g);
    }
    if total == 0 {
        return Err(McmcError::NoPosteriorWeight { burn_in });
    }
    acc.iter_mut().for_each(|a| *a /= total as f64);
    Ok(acc)
}

impl ResolvedPolicy {
    pub fn responses(&self, obs: &[f64; OBSERVATION_DIM]) -> (f64, f64) {
        let dot = |w: &[f64; OBSERVATION_DIM]| -> f64 { w.iter().zip(obs).map(|(a, b)| a * b).sum() };
        (self.scale * dot(&self.left), self.scale * dot(&self.right))
    }

    pub fn act(&self, obs: &[f64; OBSERVATION_DIM]) -> Action {
        let (l, r) = self.responses(obs);
        wta_action(l, r)
    }
}

/// One logged timestep of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: u32,
    pub x: f64,
    pub v: f64,
    pub theta: f64,
    pub omega: f64,
    pub action: Action,
}

impl PolicyPair {
    pub fn new(left: CrossbarArray, right: CrossbarArray) -> Result<Self, RlError> {
        if left.rows() != right.rows() || left.cols() != right.cols() {
            return Err(RlError::InvalidConfig("left and right arrays must have identical shapes".into()));
        }
        if left.cols() != OBSERVATION_DIM {
            return Err(RlError::InvalidConfig(format!(
                "policy arrays need {OBSERVATION_DIM} columns, got {}",
                left.cols()
            )));
        }
        Ok(PolicyPair { left, right })
    }

    pub fn rows(&self) -> usize {
        self.left.rows()
    }

    /// Shared counters (both arrays hold identical copies).
    pub fn counters(&self) -> &[u64] {
        self.left.counters()
    }

    pub fn resolve(&self, mode: PolicyMode, scale: f64) -> Result<ResolvedPolicy, McmcError> {
        let (left, right) = match mode {
            PolicyMode::Row(n) => {
                let read = |a: &CrossbarArray| -> Result<[f64; OBSERVATION_DIM], McmcError> {
                    let mut w = [0.0; OBSERVATION_DIM];
                    a.read_row_into(n, &mut w)?;
                    Ok(w)
                };
                (read(&self.left)?, read(&self.right)?)
            }
            PolicyMode::Posterior { burn_in } => {
                (posterior_weights(&self.left, burn_in)?, posterior_weights(&self.right, burn_in)?)
            }
        };
        Ok(ResolvedPolicy { left, right, scale })
    }

    /// Action chosen for observation `v` under `mode`.
    pub fn wta(&self, mode: PolicyMode, v: &[f64; OBSERVATION_DIM], scale: f64) -> Result<Action, McmcError> {
        Ok(self.resolve(mode, scale)?.act(v))
    }

    /// Joint prior over the concatenated parameters of row `n` in both arrays.
    fn joint_log_prior(&self, n: usize, cfg: &McmcConfig) -> Result<f64, McmcError> {
        Ok(log_prior(&self.left.read_row(n)?, cfg) + log_prior(&self.right.read_row(n)?, cfg))
    }
}

/// Play one episode from a start state seeded by `env_seed`.
pub fn run_episode(
    policy: &ResolvedPolicy,
    env: &CartpoleConfig,
    env_seed: u64,
    mut trajectory: Option<&mut Vec<TrajectoryStep>>,
) -> u32 {
    let mut rng = crate::rng::rng_from_seed(env_seed);
    let mut state = CartpoleState::random_start(env, &mut rng);
    let mut total = 0;
    loop {
        let action = policy.act(&state.observation());
        if let Some(t) = trajectory.as_deref_mut() {
            t.push(TrajectoryStep {
                step: state.step_count,
                x: state.x,
                v: state.v,
                theta: state.theta,
                omega: state.omega,
                action,
            });
        }
        // A fresh start state is always alive, and the loop stops at `done`.
        let out = cartpole_step(&state, action, env).expect("stepping a live episode");
        total += out.reward;
        state = out.state;
        if out.done {
            return total;
        }
    }
}

/// Cumulative reward of one episode under `mode`.
pub fn episode_reward(
    pair: &PolicyPair,
    mode: PolicyMode,
    env_seed: u64,
    scale: f64,
    env: &CartpoleConfig,
) -> Result<u32, RlError> {
    env.validate()?;
    let policy = pair.resolve(mode, scale)?;
    Ok(run_episode(&policy, env, env_seed, None))
}

/// Seed of the `k`-th training episode of a chain.
pub fn training_episode_seed(chain_seed: u64, k: u64) -> u64 {
    stream_seed(chain_seed, Stream::TrainEpisode, k)
}

/// Seed of the `i`-th test episode.
pub fn test_episode_seed(seed: u64, i: u64) -> u64 {
    stream_seed(seed, Stream::TestEpisode, i)
}

/// Metropolis-Hastings over paired rows. Every proposal faces a fresh
/// training episode; the reward recorded at acceptance stays attached to the
/// current model. The per-row metric in the record is that accepted reward.
pub fn train_rl<R: Rng + ?Sized>(
    pair: &mut PolicyPair,
    cfg: &McmcConfig,
    rl: &RlConfig,
    rng: &mut R,
) -> Result<RunRecord, RlError> {
    cfg.validate(pair.rows())?;
    rl.validate()?;
    let last = pair.rows() - 1;
    let mut record = RunRecord::new(cfg.clone());
    let mut episode = 0u64;
    let mut next_episode = || {
        let s = training_episode_seed(cfg.seed, episode);
        episode += 1;
        s
    };

    pair.left.reset_all();
    pair.right.reset_all();
    pair.left.initialize_row(0, rng)?;
    pair.right.initialize_row(0, rng)?;
    pair.left.set_counter(0, 1)?;
    pair.right.set_counter(0, 1)?;
    record.accepts = 1;

    let mut cur_reward = episode_reward(pair, PolicyMode::Row(0), next_episode(), cfg.scale, &rl.env)? as f64;
    let mut cur_prior = pair.joint_log_prior(0, cfg)?;
    record.rows.push(RowTrace { row: 0, accepted_metric: cur_reward, counter: 1, rejects: 0 });

    let mut n = 0;
    let mut consecutive = 0u64;
    while n < last {
        pair.left.propose_row(n, n + 1, rng)?;
        pair.right.propose_row(n, n + 1, rng)?;
        let reward = episode_reward(pair, PolicyMode::Row(n + 1), next_episode(), cfg.scale, &rl.env)? as f64;
        let prior = pair.joint_log_prior(n + 1, cfg)?;
        let log_a = rl_log_acceptance(reward, cur_reward, prior, cur_prior, rl.kappa)?;
        let accepted = accept_decision(log_a, rng);
        record.trace.push(accepted);
        if accepted {
            n += 1;
            pair.left.increment_counter(n)?;
            pair.right.increment_counter(n)?;
            record.accepts += 1;
            cur_reward = reward;
            cur_prior = prior;
            consecutive = 0;
            record.rows.push(RowTrace { row: n, accepted_metric: reward, counter: 1, rejects: 0 });
        } else {
            pair.left.erase_row(n + 1)?;
            pair.right.erase_row(n + 1)?;
            pair.left.increment_counter(n)?;
            pair.right.increment_counter(n)?;
            record.rejects += 1;
            consecutive += 1;
            if consecutive >= cfg.reject_cap {
                return Err(McmcError::StuckChain { row: n, rejections: consecutive }.into());
            }
        }
    }
    record.finalize_counters(pair.counters());
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlEvaluation {
    pub rewards: Vec<u32>,
    pub mean_reward: f64,
}

/// Test episodes with the posterior policy. Episode `i` starts from
/// `test_episode_seed(seed, i)`.
pub fn evaluate_rl(pair: &PolicyPair, cfg: &McmcConfig, rl: &RlConfig, seed: u64) -> Result<RlEvaluation, RlError> {
    rl.validate()?;
    let policy = pair.resolve(PolicyMode::Posterior { burn_in: cfg.burn_in }, cfg.scale)?;
    let rewards: Vec<u32> =
        (0..rl.test_episodes as u64).map(|i| run_episode(&policy, &rl.env, test_episode_seed(seed, i), None)).collect();
    let mean_reward =
        if rewards.is_empty() { 0.0 } else { rewards.iter().map(|&r| r as f64).sum::<f64>() / rewards.len() as f64 };
    Ok(RlEvaluation { rewards, mean_reward })
}

#[derive(Debug, Clone)]
pub struct RlRun {
    pub run: usize,
    pub seed: u64,
    pub record: RunRecord,
    pub evaluation: RlEvaluation,
    pub left: PosteriorSnapshot,
    pub right: PosteriorSnapshot,
}

#[derive(Debug, Clone)]
pub struct RlSummary {
    pub runs: Vec<RlRun>,
    pub stats: BoxStats,
}

impl RlSummary {
    pub fn mean_rewards(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.evaluation.mean_reward).collect()
    }
}

/// Build, train and test one pair of arrays.
pub fn train_and_evaluate_rl(
    setup: &ArraySetup,
    rl: &RlConfig,
    run: usize,
    seed: u64,
) -> Result<RlRun, ExperimentError> {
    let wrap = |e: RlError| match e {
        RlError::Mcmc(source) => ExperimentError::Run { run, source },
        other => ExperimentError::Run { run, source: McmcError::InvalidConfig(other.to_string()) },
    };
    let left = setup.build_array(OBSERVATION_DIM, seed, 0)?;
    let right = setup.build_array(OBSERVATION_DIM, seed, 1)?;
    let mut pair = PolicyPair::new(left, right).map_err(wrap)?;
    let mut cfg = setup.mcmc.clone();
    cfg.seed = seed;
    let mut rng = stream_rng(seed, Stream::Chain, 0);
    let record = train_rl(&mut pair, &cfg, rl, &mut rng).map_err(wrap)?;
    let evaluation = evaluate_rl(&pair, &cfg, rl, seed).map_err(wrap)?;
    Ok(RlRun { run, seed, record, evaluation, left: pair.left.snapshot(), right: pair.right.snapshot() })
}

/// `runs` independent training runs; run `r` uses `derive_seed(master_seed, r)`.
pub fn run_rl_experiment(
    setup: &ArraySetup,
    rl: &RlConfig,
    runs: usize,
    master_seed: u64,
    jobs: usize,
) -> Result<RlSummary, ExperimentError> {
    let results: Vec<_> = in_pool(jobs, || {
        (0..runs)
            .into_par_iter()
            .map(|r| train_and_evaluate_rl(setup, rl, r, derive_seed(master_seed, r as u64)))
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let means: Vec<f64> = runs.iter().map(|r| r.evaluation.mean_reward).collect();
    let stats = BoxStats::from_samples(&means).ok_or(ExperimentError::NoRuns)?;
    Ok(RlSummary { runs, stats })
}
