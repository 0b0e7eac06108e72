//! Virtual device characterization: repeated SET/RESET cycling over a sweep
//! of programming currents, and power-law fits of the measured statistics.

use serde::{Deserialize, Serialize};

use crate::device::{fit_power_law, DeviceCell, DeviceError, DeviceLaw, PowerLawFit, VariabilityMode};
use crate::rng::{stream_rng, Stream};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub currents: Vec<f64>,
    pub cycles: usize,
    pub devices: usize,
    #[serde(default)]
    pub variability_mode: VariabilityMode,
}

impl SweepConfig {
    /// `points` currents evenly spaced over the law's current range.
    pub fn evenly_spaced(law: &DeviceLaw, points: usize, cycles: usize, devices: usize) -> Self {
        let currents = if points <= 1 {
            vec![law.i_min]
        } else {
            (0..points).map(|k| law.i_min + (law.i_max - law.i_min) * k as f64 / (points - 1) as f64).collect()
        };
        SweepConfig { currents, cycles, devices, variability_mode: VariabilityMode::default() }
    }

    fn validate(&self, law: &DeviceLaw) -> Result<(), DeviceError> {
        if self.currents.is_empty() || self.cycles < 2 || self.devices == 0 {
            return Err(DeviceError::InvalidLaw(
                "a sweep needs at least one current, two cycles and one device".into(),
            ));
        }
        for &i in &self.currents {
            law.sd_conductance(i)?;
        }
        Ok(())
    }
}

/// Statistics at one programming current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub i_set: f64,
    /// Median of all reads pooled over devices and cycles.
    pub empirical_median: f64,
    /// Root-mean-square of per-device cycle-to-cycle standard deviations.
    pub empirical_sd: f64,
    pub law_median: f64,
    pub law_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub median_fit: PowerLawFit,
    pub sd_fit: PowerLawFit,
}

/// Cycle every device `cycles` times at each current. Device prefactors come
/// from the `Devices` stream and cycling noise from the `Characterize` stream
/// of `seed`.
pub fn current_sweep(law: &DeviceLaw, cfg: &SweepConfig, seed: u64) -> Result<SweepResult, DeviceError> {
    law.validate()?;
    cfg.validate(law)?;
    let mut device_rng = stream_rng(seed, Stream::Devices, 0);
    let mut cells: Vec<DeviceCell> = (0..cfg.devices)
        .map(|_| DeviceCell::new(law.sample_prefactor(cfg.variability_mode, &mut device_rng)))
        .collect();
    let mut rng = stream_rng(seed, Stream::Characterize, 0);

    let mut rows = Vec::with_capacity(cfg.currents.len());
    let mut pooled = Vec::with_capacity(cfg.cycles * cfg.devices);
    let mut per_device = Vec::with_capacity(cfg.cycles);
    for &i_set in &cfg.currents {
        pooled.clear();
        let mut var_sum = 0.0;
        for cell in &mut cells {
            per_device.clear();
            for _ in 0..cfg.cycles {
                per_device.push(cell.set_pulse(law, i_set, &mut rng)?);
                cell.reset_pulse();
            }
            var_sum += stats::std_dev(&per_device).unwrap_or(0.0).powi(2);
            pooled.extend_from_slice(&per_device);
        }
        rows.push(SweepRow {
            i_set,
            empirical_median: stats::median(&pooled).unwrap_or(f64::NAN),
            empirical_sd: (var_sum / cfg.devices as f64).sqrt(),
            law_median: law.median_conductance(law.d, i_set)?,
            law_sd: law.sd_conductance(i_set)?,
        });
    }
    let median_fit = fit_power_law(&rows.iter().map(|r| (r.i_set, r.empirical_median)).collect::<Vec<_>>())?;
    let sd_fit = fit_power_law(&rows.iter().map(|r| (r.i_set, r.empirical_sd)).collect::<Vec<_>>())?;
    Ok(SweepResult { rows, median_fit, sd_fit })
}

/// `cycles` successive reads of one device at one current.
pub fn cycle_distribution(
    law: &DeviceLaw,
    i_set: f64,
    cycles: usize,
    mode: VariabilityMode,
    seed: u64,
) -> Result<Vec<f64>, DeviceError> {
    law.validate()?;
    let d_i = law.sample_prefactor(mode, &mut stream_rng(seed, Stream::Devices, 0));
    let mut cell = DeviceCell::new(d_i);
    let mut rng = stream_rng(seed, Stream::Characterize, 0);
    (0..cycles)
        .map(|_| {
            let g = cell.set_pulse(law, i_set, &mut rng)?;
            cell.reset_pulse();
            Ok(g)
        })
        .collect()
}

/// Median and spread of one device over repeated cycling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceStats {
    pub device: usize,
    pub d_i: f64,
    pub median: f64,
    pub sd: f64,
}

/// Cycle each of `devices` devices `cycles` times at `i_set` and report
/// per-device statistics.
pub fn population_scatter(
    law: &DeviceLaw,
    i_set: f64,
    devices: usize,
    cycles: usize,
    mode: VariabilityMode,
    seed: u64,
) -> Result<Vec<DeviceStats>, DeviceError> {
    law.validate()?;
    law.sd_conductance(i_set)?;
    if cycles < 2 {
        return Err(DeviceError::InvalidLaw("population statistics need at least two cycles".into()));
    }
    let mut device_rng = stream_rng(seed, Stream::Devices, 0);
    let mut rng = stream_rng(seed, Stream::Characterize, 0);
    let mut reads = Vec::with_capacity(cycles);
    (0..devices)
        .map(|device| {
            let mut cell = DeviceCell::new(law.sample_prefactor(mode, &mut device_rng));
            reads.clear();
            for _ in 0..cycles {
                reads.push(cell.set_pulse(law, i_set, &mut rng)?);
                cell.reset_pulse();
            }
            Ok(DeviceStats {
                device,
                d_i: cell.d_i(),
                median: stats::median(&reads).unwrap_or(f64::NAN),
                sd: stats::std_dev(&reads).unwrap_or(f64::NAN),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_medians_follow_prefactors() {
        let law = law();
        let pop = population_scatter(&law, 40.0, 200, 200, VariabilityMode::CycleAndD2d, 4).unwrap();
        assert_eq!(pop.len(), 200);
        let sd = law.sd_conductance(40.0).unwrap();
        // Devices near the floor have their median lifted by truncation.
        for s in pop.iter().filter(|s| law.median_conductance(s.d_i, 40.0).unwrap() > 3.0 * sd) {
            let expected = law.median_conductance(s.d_i, 40.0).unwrap();
            assert!((s.median - expected).abs() < 5.0 * sd / 10.0, "{s:?} vs {expected}");
        }
        let medians: Vec<f64> = pop.iter().map(|s| s.median).collect();
        let spread = stats::std_dev(&medians).unwrap();
        let law_spread = law.e * 40f64.powf(law.c);
        assert!((spread / law_spread - 1.0).abs() < 0.2, "{spread} vs {law_spread}");
        let flat = population_scatter(&law, 40.0, 50, 50, VariabilityMode::CycleOnly, 4).unwrap();
        assert!(flat.iter().all(|s| s.d_i == law.d));
    }

    fn law() -> DeviceLaw {
        DeviceLaw::new(0.093, 0.48, 0.78, 0.19, 0.096, 20.0, 100.0).unwrap()
    }

    #[test]
    fn sweep_recovers_law_without_d2d() {
        let law = law();
        let mut cfg = SweepConfig::evenly_spaced(&law, 5, 400, 20);
        cfg.variability_mode = VariabilityMode::CycleOnly;
        let res = current_sweep(&law, &cfg, 3).unwrap();
        assert_eq!(res.rows.len(), 5);
        assert!((res.median_fit.exponent - 0.78).abs() < 0.02);
        assert!((res.sd_fit.exponent - 0.48).abs() < 0.05);
        for r in &res.rows {
            assert!((r.empirical_median / r.law_median - 1.0).abs() < 0.02);
            assert!((r.empirical_sd / r.law_sd - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn sweep_is_deterministic_and_validated() {
        let law = law();
        let cfg = SweepConfig::evenly_spaced(&law, 3, 10, 4);
        assert_eq!(current_sweep(&law, &cfg, 1).unwrap(), current_sweep(&law, &cfg, 1).unwrap());
        let bad = SweepConfig { currents: vec![5.0], ..cfg.clone() };
        assert!(matches!(current_sweep(&law, &bad, 1), Err(DeviceError::CurrentOutOfRange { .. })));
        let empty = SweepConfig { devices: 0, ..cfg };
        assert!(current_sweep(&law, &empty, 1).is_err());
    }

    #[test]
    fn cycle_distribution_spread() {
        let law = law();
        let g = cycle_distribution(&law, 50.0, 5000, VariabilityMode::CycleOnly, 8).unwrap();
        let sd = stats::std_dev(&g).unwrap();
        assert!((sd / law.sd_conductance(50.0).unwrap() - 1.0).abs() < 0.05);
        assert!(g.iter().all(|&x| x >= law.g_floor));
    }
}
