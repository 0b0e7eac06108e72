use rram_mcmc::experiment::ExperimentError;
use rram_mcmc::mcmc::McmcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("run {run}: chain stuck: {detail}")]
    StuckChain { run: usize, detail: String },
    #[error("run {run}: {detail}")]
    Run { run: usize, detail: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// Process exit code: 2 config, 3 data, 4 stuck chain, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::StuckChain { .. } => 4,
            CliError::Run { .. } | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Run { run, source: source @ McmcError::StuckChain { .. } } => {
                CliError::StuckChain { run, detail: source.to_string() }
            }
            ExperimentError::Run { run, source } => CliError::Run { run, detail: source.to_string() },
            ExperimentError::NoRuns => CliError::Config("no runs requested".into()),
            ExperimentError::Data(e) => CliError::Data(e.to_string()),
            ExperimentError::Device(e) => CliError::Config(e.to_string()),
            ExperimentError::Crossbar(e) => CliError::Config(e.to_string()),
        }
    }
}
