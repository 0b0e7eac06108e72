//! Differential crossbar holding one conductance model per row.
//!
//! Each of the `rows x cols` parameters is stored as a pair of cells
//! `(g_plus, g_minus)`; the signed parameter is their difference. Readout is
//! digital (conductances are read and subtracted), so no analog noise enters
//! the dot product. Every row also owns an integer counter used to weight it
//! in the posterior.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{CellState, DeviceCell, DeviceError, DeviceLaw, ProgrammingLut, VariabilityMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrossbarError {
    #[error("row {row} out of bounds for an array with {rows} rows")]
    RowOutOfBounds { row: usize, rows: usize },
    #[error("input length {got} does not match column count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("row {0} is not fully programmed")]
    RowNotProgrammed(usize),
    #[error("invalid array dimensions {rows}x{cols}")]
    InvalidDims { rows: usize, cols: usize },
    #[error("snapshot rejected: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

pub type Result<T> = std::result::Result<T, CrossbarError>;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarArray {
    rows: usize,
    cols: usize,
    g_plus: Vec<DeviceCell>,
    g_minus: Vec<DeviceCell>,
    counters: Vec<u64>,
    law: DeviceLaw,
    lut: Option<ProgrammingLut>,
}

impl CrossbarArray {
    /// Build an all-LCS array. Per-device prefactors are drawn here, once,
    /// `g_plus` grid first then `g_minus`, both row-major.
    pub fn new<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        law: DeviceLaw,
        lut: Option<ProgrammingLut>,
        variability: VariabilityMode,
        rng: &mut R,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CrossbarError::InvalidDims { rows, cols });
        }
        law.validate()?;
        let mut grid = || -> Vec<DeviceCell> {
            (0..rows * cols).map(|_| DeviceCell::new(law.sample_prefactor(variability, rng))).collect()
        };
        let g_plus = grid();
        let g_minus = grid();
        Ok(CrossbarArray { rows, cols, g_plus, g_minus, counters: vec![0; rows], law, lut })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn law(&self) -> &DeviceLaw {
        &self.law
    }

    pub fn lut(&self) -> Option<&ProgrammingLut> {
        self.lut.as_ref()
    }

    pub fn counters(&self) -> &[u64] {
        &self.counters
    }

    pub fn counter(&self, n: usize) -> Result<u64> {
        self.check_row(n)?;
        Ok(self.counters[n])
    }

    pub fn increment_counter(&mut self, n: usize) -> Result<()> {
        self.check_row(n)?;
        self.counters[n] += 1;
        Ok(())
    }

    pub fn set_counter(&mut self, n: usize, value: u64) -> Result<()> {
        self.check_row(n)?;
        self.counters[n] = value;
        Ok(())
    }

    pub fn cell_plus(&self, n: usize, m: usize) -> &DeviceCell {
        &self.g_plus[n * self.cols + m]
    }

    pub fn cell_minus(&self, n: usize, m: usize) -> &DeviceCell {
        &self.g_minus[n * self.cols + m]
    }

    fn check_row(&self, n: usize) -> Result<()> {
        if n < self.rows {
            Ok(())
        } else {
            Err(CrossbarError::RowOutOfBounds { row: n, rows: self.rows })
        }
    }

    fn row_range(&self, n: usize) -> std::ops::Range<usize> {
        n * self.cols..(n + 1) * self.cols
    }

    /// Differential conductances `g_plus - g_minus` of row `n`.
    pub fn read_row(&self, n: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cols];
        self.read_row_into(n, &mut out)?;
        Ok(out)
    }

    pub fn read_row_into(&self, n: usize, out: &mut [f64]) -> Result<()> {
        self.check_row(n)?;
        if out.len() != self.cols {
            return Err(CrossbarError::LengthMismatch { expected: self.cols, got: out.len() });
        }
        let range = self.row_range(n);
        for ((o, p), q) in out.iter_mut().zip(&self.g_plus[range.clone()]).zip(&self.g_minus[range]) {
            *o = p.read() - q.read();
        }
        Ok(())
    }

    /// `sum_m v[m] * (g_plus[n][m] - g_minus[n][m])`.
    pub fn dot_product(&self, n: usize, v: &[f64]) -> Result<f64> {
        self.check_row(n)?;
        if v.len() != self.cols {
            return Err(CrossbarError::LengthMismatch { expected: self.cols, got: v.len() });
        }
        let range = self.row_range(n);
        Ok(v.iter()
            .zip(&self.g_plus[range.clone()])
            .zip(&self.g_minus[range])
            .map(|((x, p), q)| x * (p.read() - q.read()))
            .sum())
    }

    /// Whether every cell of row `n` is in the HCS.
    pub fn row_programmed(&self, n: usize) -> Result<bool> {
        self.check_row(n)?;
        let range = self.row_range(n);
        Ok(self.g_plus[range.clone()].iter().chain(&self.g_minus[range]).all(DeviceCell::is_hcs))
    }

    /// SET every cell of row `n` at the lowest available current, the widest
    /// proposal the device offers. Draw order: per column, `g_plus` then `g_minus`.
    pub fn initialize_row<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Result<()> {
        self.check_row(n)?;
        let i_min = self.law.i_min;
        for idx in self.row_range(n) {
            self.g_plus[idx].set_pulse(&self.law, i_min, rng)?;
            self.g_minus[idx].set_pulse(&self.law, i_min, rng)?;
        }
        Ok(())
    }

    /// Program row `dst` with a proposal centred on row `src`: every cell of
    /// `dst` is SET at the current whose population median matches the
    /// conductance read from the corresponding cell of `src`.
    pub fn propose_row<R: Rng + ?Sized>(&mut self, src: usize, dst: usize, rng: &mut R) -> Result<()> {
        self.check_row(src)?;
        self.check_row(dst)?;
        if !self.row_programmed(src)? {
            return Err(CrossbarError::RowNotProgrammed(src));
        }
        let (src_base, dst_base) = (src * self.cols, dst * self.cols);
        for m in 0..self.cols {
            let i_plus = self.programming_current(self.g_plus[src_base + m].read());
            self.g_plus[dst_base + m].set_pulse(&self.law, i_plus, rng)?;
            let i_minus = self.programming_current(self.g_minus[src_base + m].read());
            self.g_minus[dst_base + m].set_pulse(&self.law, i_minus, rng)?;
        }
        Ok(())
    }

    fn programming_current(&self, g_src: f64) -> f64 {
        let i = self.law.i_set_for_target(g_src);
        match &self.lut {
            Some(lut) => lut.quantize(&self.law, i),
            None => i,
        }
    }

    /// RESET all cells of row `n`.
    pub fn erase_row(&mut self, n: usize) -> Result<()> {
        self.check_row(n)?;
        for idx in self.row_range(n) {
            self.g_plus[idx].reset_pulse();
            self.g_minus[idx].reset_pulse();
        }
        Ok(())
    }

    /// RESET the whole array and clear the counters.
    pub fn reset_all(&mut self) {
        self.g_plus.iter_mut().chain(self.g_minus.iter_mut()).for_each(DeviceCell::reset_pulse);
        self.counters.iter_mut().for_each(|c| *c = 0);
    }

    /// Place exact conductances into row `n`, bypassing the device
    /// stochastics. A value of `0` leaves the cell in the LCS.
    pub fn write_row(&mut self, n: usize, g_plus: &[f64], g_minus: &[f64]) -> Result<()> {
        self.check_row(n)?;
        for v in [g_plus, g_minus] {
            if v.len() != self.cols {
                return Err(CrossbarError::LengthMismatch { expected: self.cols, got: v.len() });
            }
        }
        if let Some(&bad) = g_plus.iter().chain(g_minus).find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(CrossbarError::Snapshot(format!("conductance {bad} must be finite and non-negative")));
        }
        let base = n * self.cols;
        for m in 0..self.cols {
            self.g_plus[base + m] = placed_cell(g_plus[m], self.g_plus[base + m].d_i());
            self.g_minus[base + m] = placed_cell(g_minus[m], self.g_minus[base + m].d_i());
        }
        Ok(())
    }

    pub fn snapshot(&self) -> PosteriorSnapshot {
        PosteriorSnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            rows: self.rows,
            cols: self.cols,
            law: self.law.clone(),
            lut: self.lut.clone(),
            counters: self.counters.clone(),
            g_plus: self.g_plus.iter().map(DeviceCell::read).collect(),
            g_minus: self.g_minus.iter().map(DeviceCell::read).collect(),
            d_plus: self.g_plus.iter().map(DeviceCell::d_i).collect(),
            d_minus: self.g_minus.iter().map(DeviceCell::d_i).collect(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn restore(snapshot: &PosteriorSnapshot) -> Result<Self> {
        snapshot.validate()?;
        let cells = |g: &[f64], d: &[f64]| -> Vec<DeviceCell> {
            g.iter().zip(d).map(|(&g, &d_i)| placed_cell(g, d_i)).collect()
        };
        Ok(CrossbarArray {
            rows: snapshot.rows,
            cols: snapshot.cols,
            g_plus: cells(&snapshot.g_plus, &snapshot.d_plus),
            g_minus: cells(&snapshot.g_minus, &snapshot.d_minus),
            counters: snapshot.counters.clone(),
            law: snapshot.law.clone(),
            lut: snapshot.lut.clone(),
        })
    }
}

fn placed_cell(g: f64, d_i: f64) -> DeviceCell {
    if g > 0.0 {
        DeviceCell::from_parts(CellState::Hcs, g, d_i)
    } else {
        DeviceCell::new(d_i)
    }
}

pub const SNAPSHOT_FORMAT: &str = "rram-mcmc-posterior";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Serializable image of a crossbar. LCS cells are stored as conductance `0`;
/// HCS conductances are always at least the law's positive floor, so the
/// encoding is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorSnapshot {
    pub format: String,
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
    pub law: DeviceLaw,
    pub lut: Option<ProgrammingLut>,
    pub counters: Vec<u64>,
    pub g_plus: Vec<f64>,
    pub g_minus: Vec<f64>,
    pub d_plus: Vec<f64>,
    pub d_minus: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl PosteriorSnapshot {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CrossbarError::Snapshot(msg));
        if self.format != SNAPSHOT_FORMAT {
            return bad(format!("unknown format {:?}", self.format));
        }
        if self.version != SNAPSHOT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("invalid dims {}x{}", self.rows, self.cols));
        }
        self.law.validate().map_err(|e| CrossbarError::Snapshot(e.to_string()))?;
        if let Some(lut) = &self.lut {
            ProgrammingLut::new(lut.entries().to_vec()).map_err(|e| CrossbarError::Snapshot(e.to_string()))?;
        }
        if self.counters.len() != self.rows {
            return bad(format!("{} counters for {} rows", self.counters.len(), self.rows));
        }
        let cells = self.rows * self.cols;
        for (name, v) in
            [("g_plus", &self.g_plus), ("g_minus", &self.g_minus), ("d_plus", &self.d_plus), ("d_minus", &self.d_minus)]
        {
            if v.len() != cells {
                return bad(format!("{name} has {} entries, expected {cells}", v.len()));
            }
        }
        if let Some(g) = self.g_plus.iter().chain(&self.g_minus).find(|g| !(g.is_finite() && **g >= 0.0)) {
            return bad(format!("conductance {g} must be finite and non-negative"));
        }
        if let Some(d) = self.d_plus.iter().chain(&self.d_minus).find(|d| !(d.is_finite() && **d > 0.0)) {
            return bad(format!("device prefactor {d} must be positive"));
        }
        Ok(())
    }

    /// Pretty JSON with a fixed field order; identical arrays give identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: PosteriorSnapshot = serde_json::from_str(text).map_err(|e| CrossbarError::Snapshot(e.to_string()))?;
        snap.validate()?;
        Ok(snap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn law() -> DeviceLaw {
        DeviceLaw::with_conductance_range(0.093, 0.48, 0.78, 0.19, 0.096, 50.0, 200.0).unwrap()
    }

    fn array(rows: usize, cols: usize, mode: VariabilityMode, seed: u64) -> CrossbarArray {
        CrossbarArray::new(rows, cols, law(), None, mode, &mut rng_from_seed(seed)).unwrap()
    }

    #[test]
    fn fresh_array_reads_zero() {
        let a = array(4, 3, VariabilityMode::CycleAndD2d, 1);
        for n in 0..4 {
            assert_eq!(a.read_row(n).unwrap(), vec![0.0; 3]);
        }
        assert_eq!(a.counters(), &[0, 0, 0, 0]);
    }

    #[test]
    fn read_row_subtracts_pairs() {
        let mut a = array(2, 2, VariabilityMode::CycleOnly, 1);
        a.write_row(1, &[60.0, 10.0], &[40.0, 30.0]).unwrap();
        assert_eq!(a.read_row(1).unwrap(), vec![20.0, -20.0]);
    }

    #[test]
    fn bounds_and_lengths() {
        let a = array(2, 3, VariabilityMode::CycleOnly, 1);
        assert!(matches!(a.read_row(2), Err(CrossbarError::RowOutOfBounds { .. })));
        assert!(matches!(a.dot_product(0, &[1.0]), Err(CrossbarError::LengthMismatch { .. })));
        assert!(CrossbarArray::new(0, 3, law(), None, VariabilityMode::CycleOnly, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn dot_product_basis_and_zero() {
        let mut a = array(1, 3, VariabilityMode::CycleOnly, 2);
        a.initialize_row(0, &mut rng_from_seed(3)).unwrap();
        let g = a.read_row(0).unwrap();
        assert_eq!(a.dot_product(0, &[0.0; 3]).unwrap(), 0.0);
        for k in 0..3 {
            let mut e = [0.0; 3];
            e[k] = 1.0;
            assert_eq!(a.dot_product(0, &e).unwrap(), g[k]);
        }
    }

    #[test]
    fn initialize_row_programs_everything() {
        let mut a = array(3, 4, VariabilityMode::CycleAndD2d, 5);
        a.initialize_row(0, &mut rng_from_seed(6)).unwrap();
        assert!(a.row_programmed(0).unwrap());
        assert!(!a.row_programmed(1).unwrap());
    }

    #[test]
    fn noiseless_initialization_cancels() {
        let mut a =
            CrossbarArray::new(2, 4, law().with_sd_scale(0.0), None, VariabilityMode::CycleOnly, &mut rng_from_seed(1))
                .unwrap();
        a.initialize_row(0, &mut rng_from_seed(2)).unwrap();
        assert_eq!(a.read_row(0).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn propose_requires_programmed_source() {
        let mut a = array(3, 2, VariabilityMode::CycleOnly, 1);
        assert!(matches!(a.propose_row(0, 1, &mut rng_from_seed(1)), Err(CrossbarError::RowNotProgrammed(0))));
    }

    #[test]
    fn noiseless_proposal_is_a_fixed_point() {
        let law = law().with_sd_scale(0.0);
        let mut a = CrossbarArray::new(2, 3, law, None, VariabilityMode::CycleOnly, &mut rng_from_seed(1)).unwrap();
        a.write_row(0, &[55.0, 120.0, 199.0], &[70.0, 51.0, 150.0]).unwrap();
        a.propose_row(0, 1, &mut rng_from_seed(2)).unwrap();
        for m in 0..3 {
            let (p0, p1) = (a.cell_plus(0, m).read(), a.cell_plus(1, m).read());
            let (q0, q1) = (a.cell_minus(0, m).read(), a.cell_minus(1, m).read());
            assert!((p0 - p1).abs() < 1e-9 * p0, "{p0} {p1}");
            assert!((q0 - q1).abs() < 1e-9 * q0, "{q0} {q1}");
        }
    }

    #[test]
    fn proposal_below_range_uses_lowest_current() {
        let law = law().with_sd_scale(0.0);
        let mut a =
            CrossbarArray::new(2, 1, law.clone(), None, VariabilityMode::CycleOnly, &mut rng_from_seed(1)).unwrap();
        a.write_row(0, &[1.0], &[500.0]).unwrap();
        a.propose_row(0, 1, &mut rng_from_seed(2)).unwrap();
        let (lo, hi) = law.median_range();
        assert!((a.cell_plus(1, 0).read() - lo).abs() < 1e-9);
        assert!((a.cell_minus(1, 0).read() - hi).abs() < 1e-9);
    }

    #[test]
    fn lut_quantizes_proposals() {
        let law = law().with_sd_scale(0.0);
        let lut = ProgrammingLut::uniform(&law, 21).unwrap();
        let mut a = CrossbarArray::new(2, 1, law, Some(lut.clone()), VariabilityMode::CycleOnly, &mut rng_from_seed(1))
            .unwrap();
        a.write_row(0, &[77.0], &[131.0]).unwrap();
        a.propose_row(0, 1, &mut rng_from_seed(2)).unwrap();
        let medians: Vec<f64> = lut.entries().iter().map(|e| e.median_conductance).collect();
        for g in [a.cell_plus(1, 0).read(), a.cell_minus(1, 0).read()] {
            assert!(medians.iter().any(|m| (m - g).abs() < 1e-9), "{g} not a LUT median");
        }
    }

    #[test]
    fn proposal_touches_only_destination() {
        let mut a = array(4, 3, VariabilityMode::CycleAndD2d, 9);
        let mut rng = rng_from_seed(10);
        a.initialize_row(0, &mut rng).unwrap();
        a.propose_row(0, 1, &mut rng).unwrap();
        a.propose_row(1, 2, &mut rng).unwrap();
        let before = a.snapshot();
        a.propose_row(1, 3, &mut rng).unwrap();
        let after = a.snapshot();
        for n in [0usize, 1, 2] {
            let r = n * 3..(n + 1) * 3;
            assert_eq!(before.g_plus[r.clone()], after.g_plus[r.clone()]);
            assert_eq!(before.g_minus[r.clone()], after.g_minus[r]);
        }
    }

    #[test]
    fn erase_row_is_idempotent() {
        let mut a = array(2, 3, VariabilityMode::CycleOnly, 1);
        a.initialize_row(0, &mut rng_from_seed(1)).unwrap();
        a.erase_row(0).unwrap();
        assert_eq!(a.read_row(0).unwrap(), vec![0.0; 3]);
        assert!((0..3).all(|m| !a.cell_plus(0, m).is_hcs() && !a.cell_minus(0, m).is_hcs()));
        a.erase_row(0).unwrap();
        assert_eq!(a.dot_product(0, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut a = array(3, 2, VariabilityMode::CycleAndD2d, 4);
        let mut rng = rng_from_seed(5);
        a.initialize_row(0, &mut rng).unwrap();
        a.propose_row(0, 1, &mut rng).unwrap();
        a.set_counter(0, 3).unwrap();
        a.set_counter(1, 1).unwrap();
        let json = a.snapshot().to_json();
        assert_eq!(json, a.snapshot().to_json());
        let b = CrossbarArray::restore(&PosteriorSnapshot::from_json(&json).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_snapshot_is_rejected() {
        let a = array(2, 2, VariabilityMode::CycleOnly, 4);
        let json = a.snapshot().to_json();
        assert!(PosteriorSnapshot::from_json(&json.replace("\"version\": 1", "\"version\": 9")).is_err());
        assert!(PosteriorSnapshot::from_json(&json.replace("\"rows\": 2", "\"rows\": 3")).is_err());
        assert!(PosteriorSnapshot::from_json(&json.replace("\"cols\"", "\"columns\"")).is_err());
        assert!(PosteriorSnapshot::from_json(&json[..json.len() / 2]).is_err());
        let mut snap = a.snapshot();
        snap.d_plus[0] = -1.0;
        assert!(CrossbarArray::restore(&snap).is_err());
    }
}
