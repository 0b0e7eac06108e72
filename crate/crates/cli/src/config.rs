//! Experiment configuration files and the bundled presets.

use std::path::{Path, PathBuf};

use rram_mcmc::device::{DeviceLaw, UnitConvention, VariabilityMode};
use rram_mcmc::experiment::ArraySetup;
use rram_mcmc::mcmc::McmcConfig;
use rram_mcmc::reinforcement::{CartpoleConfig, RlConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Characterize,
    TrainSupervised,
    TrainRl,
    Infer,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Characterize => "characterize",
            Command::TrainSupervised => "train-supervised",
            Command::TrainRl => "train-rl",
            Command::Infer => "infer",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub device: DeviceSection,
    pub mcmc: Option<McmcSection>,
    pub supervised: Option<SupervisedSection>,
    pub rl: Option<RlSection>,
    pub characterize: Option<CharacterizeSection>,
    pub infer: Option<InferSection>,
    pub sweep: Option<SweepSection>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSection {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub unit_convention: UnitConvention,
    /// Population-median conductance range `[lo, hi]`, converted to currents.
    pub conductance_range: Option<[f64; 2]>,
    /// Programming current range `[i_min, i_max]`.
    pub current_range: Option<[f64; 2]>,
    pub g_floor: Option<f64>,
    pub lut: bool,
    pub lut_steps: usize,
}

impl Default for DeviceSection {
    fn default() -> Self {
        DeviceSection {
            a: 0.093,
            b: 0.48,
            c: 0.78,
            d: 0.19,
            e: 0.096,
            unit_convention: UnitConvention::Micro,
            conductance_range: None,
            current_range: None,
            g_floor: None,
            lut: true,
            lut_steps: 21,
        }
    }
}

impl DeviceSection {
    pub fn law(&self) -> Result<DeviceLaw, CliError> {
        let (a, b, c, d, e) = (self.a, self.b, self.c, self.d, self.e);
        let law = match (self.conductance_range, self.current_range) {
            (Some([lo, hi]), None) => DeviceLaw::with_conductance_range(a, b, c, d, e, lo, hi),
            (None, Some([lo, hi])) => DeviceLaw::new(a, b, c, d, e, lo, hi),
            (None, None) => DeviceLaw::with_conductance_range(a, b, c, d, e, 50.0, 200.0),
            (Some(_), Some(_)) => {
                return Err(CliError::Config("device: set either conductance_range or current_range, not both".into()))
            }
        }
        .map_err(|e| CliError::Config(format!("device: {e}")))?;
        let mut law = law.with_convention(self.unit_convention);
        if let Some(floor) = self.g_floor {
            law.g_floor = floor;
        }
        law.validate().map_err(|e| CliError::Config(format!("device: {e}")))?;
        Ok(law)
    }

    pub fn lut_steps(&self) -> Option<usize> {
        self.lut.then_some(self.lut_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub rows: usize,
    pub sigma_prior: f64,
    pub scale: f64,
    pub burn_in: usize,
    #[serde(default)]
    pub mu_prior: f64,
    #[serde(default = "default_reject_cap")]
    pub reject_cap: u64,
    #[serde(default)]
    pub variability_mode: VariabilityMode,
}

fn default_reject_cap() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "source", rename_all = "kebab-case")]
pub enum SupervisedSection {
    TwoGaussians {
        #[serde(default = "default_samples")]
        samples: usize,
        shift: f64,
        grid: Option<GridSpec>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_label")]
        label_column: String,
        train_count: usize,
        test_count: usize,
        #[serde(default)]
        split_seed: u64,
        select_features: Option<usize>,
    },
}

fn default_samples() -> usize {
    50
}

fn default_label() -> String {
    "diagnosis".into()
}

/// Regular grid over the first two input dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlSection {
    pub kappa: f64,
    #[serde(default = "default_test_episodes")]
    pub test_episodes: usize,
    #[serde(default)]
    pub env: CartpoleConfig,
    /// Dump the step-level trajectory of the first test episode of run 0.
    #[serde(default)]
    pub trajectory: bool,
}

fn default_test_episodes() -> usize {
    100
}

impl RlSection {
    pub fn rl_config(&self) -> RlConfig {
        RlConfig { kappa: self.kappa, test_episodes: self.test_episodes, env: self.env.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterizeSection {
    /// Explicit sweep currents; defaults to `points` evenly spaced values.
    pub currents: Option<Vec<f64>>,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default = "default_devices")]
    pub devices: usize,
    /// Current for the single-device and population runs (default `i_min`).
    pub distribution_current: Option<f64>,
    #[serde(default = "default_long_cycles")]
    pub distribution_cycles: usize,
    #[serde(default)]
    pub population_devices: usize,
    #[serde(default = "default_long_cycles")]
    pub population_cycles: usize,
    #[serde(default)]
    pub variability_mode: VariabilityMode,
}

fn default_points() -> usize {
    9
}
fn default_cycles() -> usize {
    100
}
fn default_devices() -> usize {
    256
}
fn default_long_cycles() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferSection {
    pub snapshot: PathBuf,
    /// CSV of input points (header row, numeric columns); alternative to `grid`.
    pub inputs: Option<PathBuf>,
    pub grid: Option<GridSpec>,
    /// Overrides for values stored in the snapshot metadata.
    pub scale: Option<f64>,
    pub burn_in: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Kappa,
    SigmaPrior,
    Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Experiment repeated for every value: `train-supervised` or `train-rl`.
    pub base: Command,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

/// Presets shipped with the binary.
pub const PRESETS: &[(&str, &str)] = &[
    ("illustrative-2d", include_str!("../presets/illustrative-2d.toml")),
    ("breast-cancer-256x16", include_str!("../presets/breast-cancer-256x16.toml")),
    ("breast-cancer-smoke", include_str!("../presets/breast-cancer-smoke.toml")),
    ("cartpole-512x4", include_str!("../presets/cartpole-512x4.toml")),
    ("cartpole-smoke-64", include_str!("../presets/cartpole-smoke-64.toml")),
    ("characterize-256", include_str!("../presets/characterize-256.toml")),
    ("characterize-4096", include_str!("../presets/characterize-4096.toml")),
    ("kappa-sweep", include_str!("../presets/kappa-sweep.toml")),
];

pub fn preset_text(name: &str) -> Result<&'static str, CliError> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        CliError::Config(format!("unknown preset {name:?}; available: {}", names.join(", ")))
    })
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        Self::from_toml(preset_text(name)?)
    }

    /// Make relative data paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(SupervisedSection::Csv { path, .. }) = &mut self.supervised {
            fix(path);
        }
        if let Some(inf) = &mut self.infer {
            fix(&mut inf.snapshot);
            if let Some(p) = &mut inf.inputs {
                fix(p);
            }
        }
    }

    /// Schema checks that need more than one field.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        self.device.law()?;
        if self.device.lut && self.device.lut_steps < 2 {
            return bad("device.lut_steps must be at least 2".into());
        }
        let needs_mcmc = |cmd: Command| matches!(cmd, Command::TrainSupervised | Command::TrainRl);
        let task = match self.command {
            Command::Sweep => match &self.sweep {
                Some(s) => {
                    if !needs_mcmc(s.base) {
                        return bad("sweep.base must be train-supervised or train-rl".into());
                    }
                    if s.values.is_empty() {
                        return bad("sweep.values must not be empty".into());
                    }
                    if s.parameter == SweepParameter::Kappa && s.base != Command::TrainRl {
                        return bad("kappa can only be swept for train-rl".into());
                    }
                    s.base
                }
                None => return bad("command sweep needs a [sweep] section".into()),
            },
            other => other,
        };
        if needs_mcmc(task) {
            let m = self.mcmc.as_ref().ok_or_else(|| CliError::Config("missing [mcmc] section".into()))?;
            self.mcmc_config(m).validate(m.rows).map_err(|e| CliError::Config(format!("mcmc: {e}")))?;
        }
        match task {
            Command::TrainSupervised => match &self.supervised {
                None => return bad("missing [supervised] section".into()),
                Some(SupervisedSection::TwoGaussians { samples, shift, grid }) => {
                    if *samples < 2 || !samples.is_multiple_of(2) || !shift.is_finite() {
                        return bad("supervised: samples must be even and >= 2, shift finite".into());
                    }
                    if let Some(g) = grid {
                        check_grid(g)?;
                    }
                }
                Some(SupervisedSection::Csv { train_count, test_count, select_features, .. }) => {
                    if *train_count < 2 || *test_count == 0 {
                        return bad("supervised: train_count >= 2 and test_count >= 1 required".into());
                    }
                    if select_features == &Some(0) {
                        return bad("supervised: select_features must be positive".into());
                    }
                }
            },
            Command::TrainRl => {
                let rl = self.rl.as_ref().ok_or_else(|| CliError::Config("missing [rl] section".into()))?;
                rl.rl_config().validate().map_err(|e| CliError::Config(format!("rl: {e}")))?;
                if self.mcmc.as_ref().is_some_and(|m| m.scale <= 0.0) {
                    return bad("mcmc.scale must be positive for train-rl".into());
                }
            }
            Command::Characterize => {
                let c = self.characterize.as_ref();
                let c = c.ok_or_else(|| CliError::Config("missing [characterize] section".into()))?;
                if c.cycles < 2 || c.devices == 0 || c.distribution_cycles < 2 || c.population_cycles < 2 {
                    return bad("characterize: cycles >= 2 and devices >= 1 required".into());
                }
                if c.currents.as_ref().map_or(c.points < 2, |v| v.len() < 2) {
                    return bad("characterize: at least two sweep currents required".into());
                }
            }
            Command::Infer => {
                let i = self.infer.as_ref().ok_or_else(|| CliError::Config("missing [infer] section".into()))?;
                match (&i.inputs, &i.grid) {
                    (Some(_), None) => {}
                    (None, Some(g)) => check_grid(g)?,
                    _ => return bad("infer: set exactly one of inputs or grid".into()),
                }
            }
            Command::Sweep => unreachable!("sweep resolved to its base command"),
        }
        Ok(())
    }

    pub fn mcmc_config(&self, m: &McmcSection) -> McmcConfig {
        let mut cfg = McmcConfig::new(m.sigma_prior, m.scale, m.burn_in);
        cfg.mu_prior = m.mu_prior;
        cfg.reject_cap = m.reject_cap;
        cfg.seed = self.master_seed;
        cfg.variability_mode = m.variability_mode;
        cfg
    }

    pub fn array_setup(&self) -> Result<ArraySetup, CliError> {
        let m = self.mcmc.as_ref().ok_or_else(|| CliError::Config("missing [mcmc] section".into()))?;
        Ok(ArraySetup {
            rows: m.rows,
            law: self.device.law()?,
            lut_steps: self.device.lut_steps(),
            mcmc: self.mcmc_config(m),
        })
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialization cannot fail");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }
}

fn check_grid(g: &GridSpec) -> Result<(), CliError> {
    let increasing = |r: [f64; 2]| r[0] < r[1];
    if g.steps < 2 || !increasing(g.x) || !increasing(g.y) {
        return Err(CliError::Config("grid needs steps >= 2 and increasing x/y bounds".into()));
    }
    Ok(())
}

/// Command-line overrides applied on top of a file or preset.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub no_d2d: bool,
    pub no_lut: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if self.no_d2d {
            if let Some(m) = &mut cfg.mcmc {
                m.variability_mode = VariabilityMode::CycleOnly;
            }
            if let Some(c) = &mut cfg.characterize {
                c.variability_mode = VariabilityMode::CycleOnly;
            }
        }
        if self.no_lut {
            cfg.device.lut = false;
        }
    }
}
