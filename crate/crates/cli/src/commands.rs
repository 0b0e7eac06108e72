//! One function per subcommand. Each writes its files under `out` and
//! returns the in-memory results.

use std::path::Path;

use rram_mcmc::characterize::{self, SweepConfig, SweepResult};
use rram_mcmc::crossbar::{CrossbarArray, PosteriorSnapshot};
use rram_mcmc::device::PowerLawFit;
use rram_mcmc::experiment::ArraySetup;
use rram_mcmc::mcmc::{self, McmcConfig, RunRecord};
use rram_mcmc::reinforcement::{
    self, run_episode, test_episode_seed, PolicyMode, PolicyPair, RlSummary, TrajectoryStep,
};
use rram_mcmc::stats::BoxStats;
use rram_mcmc::supervised::{self, logistic_row_function, LabeledDataset, SupervisedSummary};
use serde::Serialize;

use crate::config::{Command, ExperimentConfig, GridSpec, SupervisedSection, SweepParameter};
use crate::error::CliError;
use crate::output::{OutputDir, Provenance};

/// Metadata keys stored in every snapshot.
pub const META_SCALE: &str = "scale";
pub const META_BURN_IN: &str = "burn_in";

#[derive(Debug, Clone)]
pub enum Report {
    Characterize(CharacterizeReport),
    Supervised(SupervisedSummary),
    Rl(RlSummary),
    Infer(Vec<f64>),
    Sweep(Vec<SweepPoint>),
}

/// Validate, then run the configured command.
pub fn run(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Report, CliError> {
    cfg.validate()?;
    let dir = OutputDir::create(out, Provenance::new(cfg.hash(), cfg.master_seed))?;
    dir.json("config.json", "config", cfg)?;
    match cfg.command {
        Command::Characterize => cmd_characterize(cfg, &dir).map(Report::Characterize),
        Command::TrainSupervised => cmd_train_supervised(cfg, &dir, jobs).map(Report::Supervised),
        Command::TrainRl => cmd_train_rl(cfg, &dir, jobs).map(Report::Rl),
        Command::Infer => cmd_infer(cfg, &dir).map(Report::Infer),
        Command::Sweep => cmd_sweep(cfg, &dir, jobs).map(Report::Sweep),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub configured: PowerLawFit,
    pub fitted: PowerLawFit,
    pub exponent_error: f64,
    pub prefactor_rel_error: f64,
}

impl FitReport {
    fn new(configured: PowerLawFit, fitted: PowerLawFit) -> Self {
        FitReport {
            configured,
            fitted,
            exponent_error: fitted.exponent - configured.exponent,
            prefactor_rel_error: fitted.prefactor / configured.prefactor - 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CharacterizeReport {
    pub sweep: SweepResult,
    pub median_law: FitReport,
    pub sd_law: FitReport,
}

#[derive(Serialize)]
struct CycleRow {
    cycle: usize,
    conductance: f64,
}

pub fn cmd_characterize(cfg: &ExperimentConfig, out: &OutputDir) -> Result<CharacterizeReport, CliError> {
    let c = cfg.characterize.as_ref().expect("validated");
    let law = cfg.device.law()?;
    let mut sweep_cfg = match &c.currents {
        Some(currents) => SweepConfig {
            currents: currents.clone(),
            cycles: c.cycles,
            devices: c.devices,
            variability_mode: c.variability_mode,
        },
        None => SweepConfig::evenly_spaced(&law, c.points, c.cycles, c.devices),
    };
    sweep_cfg.variability_mode = c.variability_mode;
    let dev_err = |e: rram_mcmc::DeviceError| CliError::Config(e.to_string());
    let sweep = characterize::current_sweep(&law, &sweep_cfg, cfg.master_seed).map_err(dev_err)?;
    out.csv("sweep.csv", &sweep.rows)?;

    let report = CharacterizeReport {
        median_law: FitReport::new(PowerLawFit { prefactor: law.d, exponent: law.c }, sweep.median_fit),
        sd_law: FitReport::new(PowerLawFit { prefactor: law.a * law.sd_scale, exponent: law.b }, sweep.sd_fit),
        sweep,
    };
    out.json("fit.json", "fit", &report)?;

    let i_dist = c.distribution_current.unwrap_or(law.i_min);
    let cycles =
        characterize::cycle_distribution(&law, i_dist, c.distribution_cycles, c.variability_mode, cfg.master_seed)
            .map_err(dev_err)?;
    out.csv(
        "cycle_distribution.csv",
        cycles.iter().enumerate().map(|(cycle, &conductance)| CycleRow { cycle, conductance }),
    )?;

    if c.population_devices > 0 {
        let pop = characterize::population_scatter(
            &law,
            i_dist,
            c.population_devices,
            c.population_cycles,
            c.variability_mode,
            cfg.master_seed,
        )
        .map_err(dev_err)?;
        out.csv("population.csv", &pop)?;
    }
    Ok(report)
}

#[derive(Serialize)]
struct SupervisedRunRow {
    run: usize,
    seed: u64,
    accuracy: f64,
    acceptance_rate: f64,
}

#[derive(Serialize)]
struct DataRow {
    x0: f64,
    x1: f64,
    label: u8,
}

fn snapshot_with_meta(mut snap: PosteriorSnapshot, p: &Provenance, mcmc: &McmcConfig, run: usize, seed: u64) -> String {
    let m = &mut snap.metadata;
    m.insert("tool".into(), format!("{} {}", p.tool, p.version));
    m.insert("config_sha256".into(), p.config_sha256.clone());
    m.insert("master_seed".into(), p.master_seed.to_string());
    m.insert("run".into(), run.to_string());
    m.insert("seed".into(), seed.to_string());
    m.insert(META_SCALE.into(), mcmc.scale.to_string());
    m.insert(META_BURN_IN.into(), mcmc.burn_in.to_string());
    snap.to_json() + "\n"
}

fn write_record(out: &OutputDir, dir: &str, record: &RunRecord) -> Result<(), CliError> {
    out.json(&format!("{dir}/record.json"), "record", record)?;
    out.csv(&format!("{dir}/trace.csv"), &record.rows)?;
    Ok(())
}

fn run_dir(run: usize) -> String {
    format!("run_{run:03}")
}

pub fn cmd_train_supervised(
    cfg: &ExperimentConfig,
    out: &OutputDir,
    jobs: usize,
) -> Result<SupervisedSummary, CliError> {
    let setup = cfg.array_setup()?;
    let section = cfg.supervised.as_ref().expect("validated");
    let summary = train_supervised(cfg, &setup, section, out, jobs)?;
    for r in &summary.runs {
        let dir = run_dir(r.run);
        out.text(
            &format!("{dir}/snapshot.json"),
            &snapshot_with_meta(r.snapshot.clone(), out.provenance(), &setup.mcmc, r.run, r.seed),
        )?;
        write_record(out, &dir, &r.record)?;
    }
    out.csv(
        "runs.csv",
        summary.runs.iter().map(|r| SupervisedRunRow {
            run: r.run,
            seed: r.seed,
            accuracy: r.accuracy,
            acceptance_rate: r.record.acceptance_rate(),
        }),
    )?;
    out.json("summary.json", "accuracy", &summary.stats)?;
    Ok(summary)
}

fn train_supervised(
    cfg: &ExperimentConfig,
    setup: &ArraySetup,
    section: &SupervisedSection,
    out: &OutputDir,
    jobs: usize,
) -> Result<SupervisedSummary, CliError> {
    match section {
        SupervisedSection::TwoGaussians { samples, shift, grid } => {
            let summary =
                supervised::run_two_gaussians_experiment(setup, *samples, *shift, cfg.runs, cfg.master_seed, jobs)?;
            if let Some(first) = summary.runs.first() {
                let data = two_gaussians_for(first.seed, *samples, *shift)?;
                out.csv(
                    &format!("{}/data.csv", run_dir(first.run)),
                    data.rows().zip(data.labels()).map(|(v, &label)| DataRow { x0: v[0], x1: v[1], label }),
                )?;
                if let Some(g) = grid {
                    let array = CrossbarArray::restore(&first.snapshot).map_err(|e| CliError::Data(e.to_string()))?;
                    write_grid(out, &format!("{}/probability_grid.csv", run_dir(first.run)), &array, &setup.mcmc, g)?;
                }
            }
            Ok(summary)
        }
        SupervisedSection::Csv { path, label_column, train_count, test_count, split_seed, select_features } => {
            let raw = supervised::read_labeled_csv_path(path, label_column)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let spec =
                supervised::SplitSpec { train_count: *train_count, test_count: *test_count, shuffle_seed: *split_seed };
            let (train, test, prep) =
                supervised::prepare_split(&raw, spec, *select_features).map_err(|e| CliError::Data(e.to_string()))?;
            out.json("preprocessing.json", "preprocessing", &prep)?;
            Ok(supervised::run_supervised_experiment(setup, &train, &test, cfg.runs, cfg.master_seed, jobs)?)
        }
    }
}

/// The dataset drawn for the run with this seed.
pub fn two_gaussians_for(seed: u64, samples: usize, shift: f64) -> Result<LabeledDataset, CliError> {
    use rram_mcmc::rng::{stream_rng, Stream};
    supervised::generate_two_gaussians(samples, shift, &mut stream_rng(seed, Stream::Dataset, 0))
        .map_err(|e| CliError::Data(e.to_string()))
}

fn write_grid(
    out: &OutputDir,
    rel: &str,
    array: &CrossbarArray,
    mcmc: &McmcConfig,
    g: &GridSpec,
) -> Result<Vec<f64>, CliError> {
    let grid = supervised::probability_grid(array, mcmc, (g.x[0], g.x[1]), (g.y[0], g.y[1]), g.steps)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let probs = grid.iter().map(|p| p[2]).collect();
    out.csv_raw(rel, &["x0", "x1", "probability"], grid.iter().map(|p| p.to_vec()))?;
    Ok(probs)
}

#[derive(Serialize)]
struct RlRunRow {
    run: usize,
    seed: u64,
    mean_reward: f64,
    acceptance_rate: f64,
}

#[derive(Serialize)]
struct RlTraceRow {
    row: usize,
    accepted_reward: f64,
    counter: u64,
}

#[derive(Serialize)]
struct EpisodeRow {
    episode: usize,
    seed: u64,
    reward: u32,
}

pub fn cmd_train_rl(cfg: &ExperimentConfig, out: &OutputDir, jobs: usize) -> Result<RlSummary, CliError> {
    let setup = cfg.array_setup()?;
    let section = cfg.rl.as_ref().expect("validated");
    let rl = section.rl_config();
    let summary = reinforcement::run_rl_experiment(&setup, &rl, cfg.runs, cfg.master_seed, jobs)?;
    for r in &summary.runs {
        let dir = run_dir(r.run);
        let p = out.provenance();
        out.text(&format!("{dir}/left.json"), &snapshot_with_meta(r.left.clone(), p, &setup.mcmc, r.run, r.seed))?;
        out.text(&format!("{dir}/right.json"), &snapshot_with_meta(r.right.clone(), p, &setup.mcmc, r.run, r.seed))?;
        out.json(&format!("{dir}/record.json"), "record", &r.record)?;
        out.csv(
            &format!("{dir}/trace.csv"),
            r.record.rows.iter().map(|t| RlTraceRow {
                row: t.row,
                accepted_reward: t.accepted_metric,
                counter: t.counter,
            }),
        )?;
        out.csv(
            &format!("{dir}/test_episodes.csv"),
            r.evaluation.rewards.iter().enumerate().map(|(episode, &reward)| EpisodeRow {
                episode,
                seed: test_episode_seed(r.seed, episode as u64),
                reward,
            }),
        )?;
    }
    if section.trajectory {
        if let Some(first) = summary.runs.first() {
            let restore = |s: &PosteriorSnapshot| CrossbarArray::restore(s).map_err(|e| CliError::Data(e.to_string()));
            let pair = PolicyPair::new(restore(&first.left)?, restore(&first.right)?)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let policy = pair
                .resolve(PolicyMode::Posterior { burn_in: setup.mcmc.burn_in }, setup.mcmc.scale)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let mut steps: Vec<TrajectoryStep> = Vec::new();
            run_episode(&policy, &rl.env, test_episode_seed(first.seed, 0), Some(&mut steps));
            out.csv(&format!("{}/trajectory.csv", run_dir(first.run)), &steps)?;
        }
    }
    out.csv(
        "runs.csv",
        summary.runs.iter().map(|r| RlRunRow {
            run: r.run,
            seed: r.seed,
            mean_reward: r.evaluation.mean_reward,
            acceptance_rate: r.record.acceptance_rate(),
        }),
    )?;
    out.json("summary.json", "mean_reward", &summary.stats)?;
    Ok(summary)
}

pub fn cmd_infer(cfg: &ExperimentConfig, out: &OutputDir) -> Result<Vec<f64>, CliError> {
    let section = cfg.infer.as_ref().expect("validated");
    let text = std::fs::read_to_string(&section.snapshot)
        .map_err(|e| CliError::Data(format!("cannot read snapshot {}: {e}", section.snapshot.display())))?;
    let snap = PosteriorSnapshot::from_json(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", section.snapshot.display())))?;
    let meta = |key: &str| -> Result<Option<String>, CliError> { Ok(snap.metadata.get(key).cloned()) };
    let scale = match (section.scale, meta(META_SCALE)?) {
        (Some(s), _) => s,
        (None, Some(s)) => s.parse().map_err(|_| CliError::Data(format!("bad scale metadata {s:?}")))?,
        (None, None) => return Err(CliError::Config("infer: snapshot has no scale; set infer.scale".into())),
    };
    let burn_in = match (section.burn_in, meta(META_BURN_IN)?) {
        (Some(b), _) => b,
        (None, Some(b)) => b.parse().map_err(|_| CliError::Data(format!("bad burn_in metadata {b:?}")))?,
        (None, None) => 0,
    };
    let array = CrossbarArray::restore(&snap).map_err(|e| CliError::Data(e.to_string()))?;
    let mut mcmc = McmcConfig::new(1.0, scale, burn_in);
    mcmc.seed = cfg.master_seed;

    if let Some(g) = &section.grid {
        if array.cols() != 2 {
            return Err(CliError::Data(format!("grid inference needs a 2-column snapshot, got {}", array.cols())));
        }
        return write_grid(out, "probabilities.csv", &array, &mcmc, g);
    }

    let path = section.inputs.as_ref().expect("validated");
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> =
        reader.headers().map_err(|e| CliError::Data(e.to_string()))?.iter().map(String::from).collect();
    if header.len() != array.cols() {
        return Err(CliError::Data(format!("inputs have {} columns, snapshot expects {}", header.len(), array.cols())));
    }
    let mut rows = Vec::new();
    let mut probs = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Data(format!("inputs line {}: {e}", i + 2)))?;
        if v.len() != array.cols() {
            return Err(CliError::Data(format!("inputs line {}: expected {} values", i + 2, array.cols())));
        }
        let p = mcmc::posterior_response(&array, &v, burn_in, |x| logistic_row_function(x, scale))
            .map_err(|e| CliError::Data(e.to_string()))?;
        probs.push(p);
        let mut row = v;
        row.push(p);
        rows.push(row);
    }
    let mut cols: Vec<&str> = header.iter().map(String::as_str).collect();
    cols.push("probability");
    out.csv_raw("probabilities.csv", &cols, rows)?;
    Ok(probs)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl SweepPoint {
    fn new(value: f64, s: &BoxStats) -> Self {
        SweepPoint { value, min: s.min, q1: s.q1, median: s.median, q3: s.q3, max: s.max }
    }
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &OutputDir, jobs: usize) -> Result<Vec<SweepPoint>, CliError> {
    let sweep = cfg.sweep.as_ref().expect("validated");
    let base_setup = cfg.array_setup()?;
    let mut points = Vec::with_capacity(sweep.values.len());
    for &value in &sweep.values {
        let mut setup = base_setup.clone();
        let mut rl = cfg.rl.as_ref().map(|r| r.rl_config());
        match sweep.parameter {
            SweepParameter::Kappa => rl.as_mut().expect("validated").kappa = value,
            SweepParameter::SigmaPrior => setup.mcmc.sigma_prior = value,
            SweepParameter::Scale => setup.mcmc.scale = value,
        }
        let stats = match sweep.base {
            Command::TrainRl => {
                let rl = rl.ok_or_else(|| CliError::Config("sweep over train-rl needs an [rl] section".into()))?;
                rl.validate().map_err(|e| CliError::Config(format!("sweep value {value}: {e}")))?;
                reinforcement::run_rl_experiment(&setup, &rl, cfg.runs, cfg.master_seed, jobs)?.stats
            }
            _ => {
                let section = cfg.supervised.as_ref().ok_or_else(|| {
                    CliError::Config("sweep over train-supervised needs a [supervised] section".into())
                })?;
                let scratch = OutputDir::create(&out.root().join(format!("value_{value}")), out.provenance().clone())?;
                train_supervised(cfg, &setup, section, &scratch, jobs)?.stats
            }
        };
        points.push(SweepPoint::new(value, &stats));
    }
    out.csv("sweep.csv", &points)?;
    Ok(points)
}
