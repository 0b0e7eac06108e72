//! Behavioral simulator for Metropolis-Hastings sampling on resistive-memory
//! crossbars.
//!
//! The cycle-to-cycle spread of OxRAM high-conductance states is the random
//! source of the sampler: programming a row of the array with currents derived
//! from the previous row draws a proposal directly from the device physics.
//! The crate provides the device model, the differential crossbar, the
//! sampler, and two applications (Bayesian logistic regression and
//! policy-search on a cart-pole).

pub mod characterize;
pub mod crossbar;
pub mod device;
pub mod experiment;
pub mod mcmc;
pub mod reinforcement;
pub mod rng;
pub mod stats;
pub mod supervised;

pub use crossbar::{CrossbarArray, CrossbarError, PosteriorSnapshot};
pub use device::{DeviceCell, DeviceError, DeviceLaw, ProgrammingLut, UnitConvention, VariabilityMode};
pub use mcmc::{LikelihoodModel, McmcConfig, McmcError, RunRecord};
