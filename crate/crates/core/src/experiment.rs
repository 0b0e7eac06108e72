//! Settings and plumbing shared by the supervised and reinforcement experiments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossbar::{CrossbarArray, CrossbarError};
use crate::device::{DeviceError, DeviceLaw, ProgrammingLut};
use crate::mcmc::{McmcConfig, McmcError};
use crate::rng::{stream_rng, Stream};
use crate::supervised::DataError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("run {run}: {source}")]
    Run { run: usize, source: McmcError },
    #[error("no runs requested")]
    NoRuns,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Crossbar(#[from] CrossbarError),
}

impl ExperimentError {
    /// Index of the failed run, when the failure belongs to one.
    pub fn run(&self) -> Option<usize> {
        match self {
            ExperimentError::Run { run, .. } => Some(*run),
            _ => None,
        }
    }

    pub fn is_stuck_chain(&self) -> bool {
        matches!(self, ExperimentError::Run { source: McmcError::StuckChain { .. }, .. })
    }
}

/// Array geometry and device settings shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySetup {
    pub rows: usize,
    pub law: DeviceLaw,
    /// Number of LUT entries; `None` programs currents directly.
    pub lut_steps: Option<usize>,
    pub mcmc: McmcConfig,
}

impl ArraySetup {
    /// Fresh array for a run. `array_index` separates the device draws of
    /// several arrays belonging to the same run.
    pub fn build_array(&self, cols: usize, seed: u64, array_index: u64) -> Result<CrossbarArray, CrossbarError> {
        let lut = self.lut_steps.map(|s| ProgrammingLut::uniform(&self.law, s)).transpose()?;
        let mut rng = stream_rng(seed, Stream::Devices, array_index);
        CrossbarArray::new(self.rows, cols, self.law.clone(), lut, self.mcmc.variability_mode, &mut rng)
    }
}

/// Run `f` on a rayon pool limited to `jobs` threads.
pub(crate) fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
