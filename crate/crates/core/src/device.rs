//! Behavioral model of a filamentary OxRAM cell in its high conductance state.
//!
//! A SET pulse at programming current `i_set` draws a conductance from a normal
//! distribution whose median and standard deviation both follow power laws in
//! `i_set`:
//!
//! ```text
//! median(i) = d_i * i^c        sd(i) = a * i^b
//! ```
//!
//! `d_i` is a per-device prefactor sampled once around the population value
//! `d` (device-to-device variability). RESET returns the cell to the low
//! conductance state, which reads as exactly zero.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("programming current {i_set} outside [{i_min}, {i_max}]")]
    CurrentOutOfRange { i_set: f64, i_min: f64, i_max: f64 },
    #[error("invalid device law: {0}")]
    InvalidLaw(String),
    #[error("invalid programming look-up table: {0}")]
    InvalidLut(String),
    #[error("power-law fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, DeviceError>;

/// Units in which currents and conductances are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitConvention {
    /// Amperes and siemens.
    Si,
    /// Microamperes and microsiemens.
    #[default]
    Micro,
}

impl UnitConvention {
    /// Default truncation floor for SET draws, 1 nS expressed in this convention.
    pub fn default_floor(self) -> f64 {
        match self {
            UnitConvention::Si => 1e-9,
            UnitConvention::Micro => 1e-3,
        }
    }
}

/// Which sources of device randomness are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariabilityMode {
    /// Cycle-to-cycle spread plus a per-device median prefactor.
    #[default]
    CycleAndD2d,
    /// Cycle-to-cycle spread only; every device uses the population prefactor.
    CycleOnly,
}

/// Calibrated power-law constants of the HCS distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceLaw {
    /// SD-law prefactor.
    pub a: f64,
    /// SD-law exponent.
    pub b: f64,
    /// Median-law exponent.
    pub c: f64,
    /// Median-law prefactor (population value).
    pub d: f64,
    /// Device-to-device standard deviation of the median-law prefactor.
    pub e: f64,
    pub i_min: f64,
    pub i_max: f64,
    #[serde(default)]
    pub unit_convention: UnitConvention,
    /// Lower truncation bound for SET draws.
    pub g_floor: f64,
    /// Multiplier on the SD law. `0` makes programming deterministic.
    #[serde(default = "one")]
    pub sd_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl DeviceLaw {
    /// Build a law from its constants and the SET current range.
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, i_min: f64, i_max: f64) -> Result<Self> {
        let law = DeviceLaw {
            a,
            b,
            c,
            d,
            e,
            i_min,
            i_max,
            unit_convention: UnitConvention::Micro,
            g_floor: UnitConvention::Micro.default_floor(),
            sd_scale: 1.0,
        };
        law.validate()?;
        Ok(law)
    }

    /// Build a law whose current range is chosen so that the population median
    /// spans `[g_lo, g_hi]`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_conductance_range(a: f64, b: f64, c: f64, d: f64, e: f64, g_lo: f64, g_hi: f64) -> Result<Self> {
        if !(g_lo > 0.0 && g_lo < g_hi) {
            return Err(DeviceError::InvalidLaw(format!(
                "conductance range [{g_lo}, {g_hi}] must be positive and increasing"
            )));
        }
        if !(c > 0.0 && d > 0.0) {
            return Err(DeviceError::InvalidLaw("c and d must be positive".into()));
        }
        let i_min = (g_lo / d).powf(1.0 / c);
        let i_max = (g_hi / d).powf(1.0 / c);
        Self::new(a, b, c, d, e, i_min, i_max)
    }

    pub fn with_convention(mut self, convention: UnitConvention) -> Self {
        self.unit_convention = convention;
        self.g_floor = convention.default_floor();
        self
    }

    pub fn with_sd_scale(mut self, sd_scale: f64) -> Self {
        self.sd_scale = sd_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("a", self.a),
            ("c", self.c),
            ("d", self.d),
            ("i_min", self.i_min),
            ("i_max", self.i_max),
            ("g_floor", self.g_floor),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(DeviceError::InvalidLaw(format!("{name} must be positive, got {v}")));
            }
        }
        // b = 0 (constant SD) and e = 0 (no spread) are admitted as degenerate laws.
        if !(self.b.is_finite() && self.b >= 0.0) {
            return Err(DeviceError::InvalidLaw(format!("b must be non-negative, got {}", self.b)));
        }
        if !(self.e.is_finite() && self.e >= 0.0) {
            return Err(DeviceError::InvalidLaw(format!("e must be non-negative, got {}", self.e)));
        }
        if !(self.sd_scale.is_finite() && self.sd_scale >= 0.0) {
            return Err(DeviceError::InvalidLaw(format!("sd_scale must be non-negative, got {}", self.sd_scale)));
        }
        if self.i_min >= self.i_max {
            return Err(DeviceError::InvalidLaw(format!(
                "i_min ({}) must be below i_max ({})",
                self.i_min, self.i_max
            )));
        }
        Ok(())
    }

    fn check_current(&self, i_set: f64) -> Result<()> {
        if i_set >= self.i_min && i_set <= self.i_max {
            Ok(())
        } else {
            Err(DeviceError::CurrentOutOfRange { i_set, i_min: self.i_min, i_max: self.i_max })
        }
    }

    /// Median HCS conductance `d_i * i_set^c` of a device with prefactor `d_i`.
    pub fn median_conductance(&self, d_i: f64, i_set: f64) -> Result<f64> {
        self.check_current(i_set)?;
        Ok(d_i * i_set.powf(self.c))
    }

    /// Cycle-to-cycle standard deviation `a * i_set^b` (times `sd_scale`).
    pub fn sd_conductance(&self, i_set: f64) -> Result<f64> {
        self.check_current(i_set)?;
        Ok(self.sd_scale * self.a * i_set.powf(self.b))
    }

    /// Programming current that targets population median `g_target`, clamped
    /// to the available current range.
    pub fn i_set_for_target(&self, g_target: f64) -> f64 {
        if g_target.is_nan() || g_target <= 0.0 {
            return self.i_min;
        }
        (g_target / self.d).powf(1.0 / self.c).clamp(self.i_min, self.i_max)
    }

    /// Population median range `[d * i_min^c, d * i_max^c]`.
    pub fn median_range(&self) -> (f64, f64) {
        (self.d * self.i_min.powf(self.c), self.d * self.i_max.powf(self.c))
    }

    /// Sample a per-device prefactor. Draws from `Normal(d, e)` redrawn until
    /// positive; returns `d` without touching the stream in `CycleOnly` mode.
    pub fn sample_prefactor<R: Rng + ?Sized>(&self, mode: VariabilityMode, rng: &mut R) -> f64 {
        match mode {
            VariabilityMode::CycleOnly => self.d,
            VariabilityMode::CycleAndD2d => {
                if self.e == 0.0 {
                    return self.d;
                }
                loop {
                    let z: f64 = StandardNormal.sample(rng);
                    let d_i = self.d + self.e * z;
                    if d_i > 0.0 {
                        return d_i;
                    }
                }
            }
        }
    }
}

/// Conduction state of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    #[serde(rename = "LCS")]
    Lcs,
    #[serde(rename = "HCS")]
    Hcs,
}

/// Maximum redraws of a truncated SET sample before pinning to the floor.
const MAX_REDRAWS: usize = 10_000;

/// One 1T1R element.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCell {
    state: CellState,
    conductance: f64,
    d_i: f64,
}

impl DeviceCell {
    /// A fresh cell in the LCS with median prefactor `d_i`.
    pub fn new(d_i: f64) -> Self {
        DeviceCell { state: CellState::Lcs, conductance: 0.0, d_i }
    }

    pub(crate) fn from_parts(state: CellState, conductance: f64, d_i: f64) -> Self {
        DeviceCell { state, conductance, d_i }
    }

    pub fn state(&self) -> CellState {
        self.state
    }

    pub fn d_i(&self) -> f64 {
        self.d_i
    }

    pub fn is_hcs(&self) -> bool {
        self.state == CellState::Hcs
    }

    /// Conductance seen by a readout; zero in the LCS.
    pub fn read(&self) -> f64 {
        match self.state {
            CellState::Hcs => self.conductance,
            CellState::Lcs => 0.0,
        }
    }

    /// Program the cell into the HCS at `i_set`. One standard-normal draw is
    /// consumed, plus one per redraw when the sample falls below `g_floor`.
    pub fn set_pulse<R: Rng + ?Sized>(&mut self, law: &DeviceLaw, i_set: f64, rng: &mut R) -> Result<f64> {
        let median = law.median_conductance(self.d_i, i_set)?;
        let sd = law.sd_conductance(i_set)?;
        let mut g = law.g_floor;
        for _ in 0..MAX_REDRAWS {
            let z: f64 = StandardNormal.sample(rng);
            let draw = median + sd * z;
            if draw >= law.g_floor {
                g = draw;
                break;
            }
            if sd == 0.0 {
                break;
            }
        }
        self.state = CellState::Hcs;
        self.conductance = g;
        Ok(g)
    }

    pub fn reset_pulse(&mut self) {
        self.state = CellState::Lcs;
        self.conductance = 0.0;
    }
}

/// One row of the programming look-up table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LutEntry {
    pub gate_voltage_step: usize,
    pub set_current: f64,
    pub median_conductance: f64,
}

/// Discrete set of available programming currents with their measured medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgrammingLut {
    entries: Vec<LutEntry>,
}

impl ProgrammingLut {
    pub fn new(entries: Vec<LutEntry>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(DeviceError::InvalidLut(format!("need at least 2 entries, got {}", entries.len())));
        }
        for w in entries.windows(2) {
            if !(w[1].set_current > w[0].set_current && w[1].median_conductance > w[0].median_conductance) {
                return Err(DeviceError::InvalidLut(
                    "entries must increase strictly in current and median conductance".into(),
                ));
            }
        }
        Ok(ProgrammingLut { entries })
    }

    /// `steps` currents evenly spaced over `[i_min, i_max]`, medians from the
    /// population law.
    pub fn uniform(law: &DeviceLaw, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(DeviceError::InvalidLut(format!("need at least 2 steps, got {steps}")));
        }
        let span = law.i_max - law.i_min;
        let entries = (0..steps)
            .map(|k| {
                let i = if k + 1 == steps { law.i_max } else { law.i_min + span * k as f64 / (steps - 1) as f64 };
                LutEntry { gate_voltage_step: k, set_current: i, median_conductance: law.d * i.powf(law.c) }
            })
            .collect();
        Self::new(entries)
    }

    /// Initial sweep: SET every device once per current and record the
    /// population median of the read conductances.
    pub fn calibrate<R: Rng + ?Sized>(
        law: &DeviceLaw,
        currents: &[f64],
        cells: &mut [DeviceCell],
        rng: &mut R,
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(currents.len());
        let mut reads = Vec::with_capacity(cells.len());
        for (k, &i) in currents.iter().enumerate() {
            reads.clear();
            for cell in cells.iter_mut() {
                reads.push(cell.set_pulse(law, i, rng)?);
                cell.reset_pulse();
            }
            let median = crate::stats::median(&reads)
                .ok_or_else(|| DeviceError::InvalidLut("calibration needs at least one device".into()))?;
            entries.push(LutEntry { gate_voltage_step: k, set_current: i, median_conductance: median });
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[LutEntry] {
        &self.entries
    }

    /// Current of the entry whose median is closest to the population median
    /// at `i_set`. Ties resolve to the lower entry.
    pub fn quantize(&self, law: &DeviceLaw, i_set: f64) -> f64 {
        let target = law.d * i_set.powf(law.c);
        let mut best = &self.entries[0];
        let mut best_dist = (best.median_conductance - target).abs();
        for entry in &self.entries[1..] {
            let dist = (entry.median_conductance - target).abs();
            if dist < best_dist {
                best = entry;
                best_dist = dist;
            }
        }
        best.set_current
    }
}

/// Result of a log-log least-squares fit `y = prefactor * x^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub prefactor: f64,
    pub exponent: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(DeviceError::Fit(format!("need at least 2 points, got {}", points.len())));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(DeviceError::Fit(format!("non-positive point ({x}, {y})")));
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x.ln(), sy + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x.ln() - mx;
        sxx += dx * dx;
        sxy += dx * (y.ln() - my);
    }
    if sxx == 0.0 {
        return Err(DeviceError::Fit("x values must not all coincide".into()));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    Ok(PowerLawFit { prefactor: intercept.exp(), exponent })
}
