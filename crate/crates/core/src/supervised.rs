//! Bayesian logistic regression on the crossbar.
//!
//! Each row is a logistic-regression model `f(v . g) = 1 / (1 + exp(-S v . g))`.
//! Data are centred instead of carrying a bias column, so the separating
//! hyper-plane passes through the origin.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossbar::{CrossbarArray, PosteriorSnapshot};
use crate::experiment::{in_pool, ArraySetup, ExperimentError};
use crate::mcmc::{self, LikelihoodModel, McmcConfig, McmcError, RunRecord, LOG_FLOOR};
use crate::rng::{derive_seed, rng_from_seed, stream_rng, Stream};
use crate::stats::BoxStats;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset: {0}")]
    Invalid(String),
    #[error("feature width {got} does not match expected {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("chi-squared selection needs non-negative features; feature {feature} has {value}")]
    NegativeFeature { feature: String, value: f64 },
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    CsvRead(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Feature matrix with binary targets. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    width: usize,
    labels: Vec<u8>,
    feature_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<u8>, feature_names: Vec<String>) -> Result<Self, DataError> {
        let width = feature_names.len();
        if rows.len() != labels.len() {
            return Err(DataError::Invalid(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        let mut features = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(DataError::Invalid(format!("row {i} has {} features, expected {width}", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(DataError::Invalid(format!("row {i} has non-finite value {v}")));
            }
            features.extend_from_slice(row);
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(DataError::Invalid(format!("label {l} is not binary")));
        }
        Ok(LabeledDataset { features, width, labels, feature_names })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.width.max(1)).take(self.labels.len())
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// A training set needs at least two points and both classes.
    pub fn check_trainable(&self) -> Result<(), DataError> {
        let pos = self.positives();
        if self.len() < 2 || pos == 0 || pos == self.len() {
            return Err(DataError::Invalid(format!(
                "training data needs both classes ({} points, {pos} positive)",
                self.len()
            )));
        }
        Ok(())
    }

    /// Copy of the dataset restricted to the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset { features, width: self.width, labels, feature_names: self.feature_names.clone() }
    }

    /// Copy keeping only the given feature columns, in the given order.
    pub fn select_features(&self, columns: &[usize]) -> Self {
        let mut features = Vec::with_capacity(self.len() * columns.len());
        for row in self.rows() {
            features.extend(columns.iter().map(|&c| row[c]));
        }
        LabeledDataset {
            features,
            width: columns.len(),
            labels: self.labels.clone(),
            feature_names: columns.iter().map(|&c| self.feature_names[c].clone()).collect(),
        }
    }

    /// Same points with every label inverted.
    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        out.labels.iter_mut().for_each(|l| *l = 1 - *l);
        out
    }

    fn map_features(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for row in out.features.chunks_exact_mut(self.width.max(1)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = f(j, *v);
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 / (1 + exp(-S x))`, evaluated without overflow in either tail.
pub fn logistic_row_function(x: f64, scale: f64) -> f64 {
    let z = scale * x;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(y))`.
fn softplus(y: f64) -> f64 {
    if y > 0.0 {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}

/// Log-likelihood of binary targets under a logistic row, each point's term
/// floored at `ln(1e-300)`.
pub fn supervised_log_likelihood(g: &[f64], data: &LabeledDataset, scale: f64) -> Result<f64, DataError> {
    if g.len() != data.width() {
        return Err(DataError::WidthMismatch { expected: data.width(), got: g.len() });
    }
    Ok(log_likelihood_unchecked(g, data, scale))
}

fn log_likelihood_unchecked(g: &[f64], data: &LabeledDataset, scale: f64) -> f64 {
    data.rows()
        .zip(data.labels())
        .map(|(v, &t)| {
            let z = scale * dot(v, g);
            // ln f(z) = -softplus(-z); ln(1 - f(z)) = -softplus(z)
            let term = if t == 1 { -softplus(-z) } else { -softplus(z) };
            term.max(LOG_FLOOR)
        })
        .sum()
}

/// Fraction of points a single parameter vector classifies correctly.
pub fn row_accuracy(g: &[f64], data: &LabeledDataset, scale: f64) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data
        .rows()
        .zip(data.labels())
        .filter(|(v, &t)| (logistic_row_function(dot(v, g), scale) >= 0.5) == (t == 1))
        .count();
    hits as f64 / data.len() as f64
}

/// Logistic-regression likelihood bound to a training set.
#[derive(Debug, Clone, Copy)]
pub struct LogisticModel<'a> {
    pub data: &'a LabeledDataset,
    pub scale: f64,
}

impl<'a> LogisticModel<'a> {
    pub fn new(data: &'a LabeledDataset, scale: f64) -> Self {
        LogisticModel { data, scale }
    }
}

impl LikelihoodModel for LogisticModel<'_> {
    fn log_likelihood(&self, g: &[f64]) -> f64 {
        log_likelihood_unchecked(g, self.data, self.scale)
    }

    fn row_function(&self, x: f64) -> f64 {
        logistic_row_function(x, self.scale)
    }

    /// Training accuracy of the row.
    fn row_metric(&self, g: &[f64]) -> f64 {
        row_accuracy(g, self.data, self.scale)
    }
}

/// Two unit-variance 2-D Gaussian blobs: the first `n/2` points are shifted by
/// `(-shift, +shift)` and labelled 1, the rest by `(+shift, -shift)` and labelled 0.
pub fn generate_two_gaussians<R: Rng + ?Sized>(n: usize, shift: f64, rng: &mut R) -> Result<LabeledDataset, DataError> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(DataError::Invalid(format!("sample count must be even and positive, got {n}")));
    }
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let x: f64 = StandardNormal.sample(rng);
        let y: f64 = StandardNormal.sample(rng);
        if i < n / 2 {
            rows.push(vec![x - shift, y + shift]);
            labels.push(1);
        } else {
            rows.push(vec![x + shift, y - shift]);
            labels.push(0);
        }
    }
    LabeledDataset::new(rows, labels, vec!["x".into(), "y".into()])
}

/// Per-feature chi-squared statistic between class-wise feature sums and their
/// expectation under class priors.
pub fn chi2_scores(data: &LabeledDataset) -> Result<Vec<f64>, DataError> {
    for row in data.rows() {
        if let Some((j, &v)) = row.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(DataError::NegativeFeature { feature: data.feature_names[j].clone(), value: v });
        }
    }
    let n = data.len() as f64;
    let n_pos = data.positives() as f64;
    let priors = [(n - n_pos) / n, n_pos / n];
    let mut observed = vec![[0.0f64; 2]; data.width()];
    for (row, &t) in data.rows().zip(data.labels()) {
        for (o, v) in observed.iter_mut().zip(row) {
            o[t as usize] += v;
        }
    }
    Ok(observed
        .iter()
        .map(|o| {
            let total = o[0] + o[1];
            (0..2)
                .map(|c| {
                    let expected = priors[c] * total;
                    if expected > 0.0 {
                        (o[c] - expected).powi(2) / expected
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect())
}

/// Indices of the `k` highest chi-squared features, returned in column order.
/// Equal scores favour the earlier column.
pub fn chi2_top_features(data: &LabeledDataset, k: usize) -> Result<Vec<usize>, DataError> {
    if k == 0 || k > data.width() {
        return Err(DataError::Invalid(format!("cannot select {k} of {} features", data.width())));
    }
    let scores = chi2_scores(data)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn chi2_select(data: &LabeledDataset, k: usize) -> Result<LabeledDataset, DataError> {
    Ok(data.select_features(&chi2_top_features(data, k)?))
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &LabeledDataset) -> Result<Self, DataError> {
        if data.len() < 2 {
            return Err(DataError::Invalid("centering needs at least two points".into()));
        }
        let n = data.len() as f64;
        let mut means = vec![0.0; data.width()];
        for row in data.rows() {
            means.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; data.width()];
        for row in data.rows() {
            for ((s, v), m) in vars.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let stds = vars.iter().map(|s| (s / n).sqrt()).collect();
        Ok(Standardizer { means, stds })
    }

    /// `(x - mean) / std`; constant features map to 0.
    pub fn apply(&self, data: &LabeledDataset) -> Result<LabeledDataset, DataError> {
        if data.width() != self.means.len() {
            return Err(DataError::WidthMismatch { expected: self.means.len(), got: data.width() });
        }
        Ok(data.map_features(|j, v| if self.stds[j] > 0.0 { (v - self.means[j]) / self.stds[j] } else { 0.0 }))
    }
}

/// Zero mean and unit variance per feature, over the dataset itself.
pub fn center_scale(data: &LabeledDataset) -> Result<LabeledDataset, DataError> {
    Standardizer::fit(data)?.apply(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_count: usize,
    pub test_count: usize,
    pub shuffle_seed: u64,
}

/// Shuffle once with `shuffle_seed` and cut into train and test parts.
pub fn split(data: &LabeledDataset, spec: SplitSpec) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    if spec.train_count + spec.test_count != data.len() {
        return Err(DataError::Invalid(format!(
            "split {}+{} does not cover {} points",
            spec.train_count,
            spec.test_count,
            data.len()
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng_from_seed(spec.shuffle_seed));
    let (train, test) = idx.split_at(spec.train_count);
    Ok((data.subset(train), data.subset(test)))
}

/// Preprocessing applied to a raw labelled table: split, chi-squared selection
/// on the training part (raw, non-negative features), then centring and
/// scaling with training statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedSplit {
    pub selected: Vec<String>,
    pub standardizer: Standardizer,
}

pub fn prepare_split(
    raw: &LabeledDataset,
    spec: SplitSpec,
    select_k: Option<usize>,
) -> Result<(LabeledDataset, LabeledDataset, PreparedSplit), DataError> {
    let (train, test) = split(raw, spec)?;
    let (train, test) = match select_k {
        Some(k) => {
            let cols = chi2_top_features(&train, k)?;
            (train.select_features(&cols), test.select_features(&cols))
        }
        None => (train, test),
    };
    let standardizer = Standardizer::fit(&train)?;
    let train = standardizer.apply(&train)?;
    let test = standardizer.apply(&test)?;
    let info = PreparedSplit { selected: train.feature_names().to_vec(), standardizer };
    Ok((train, test, info))
}

/// Read a labelled CSV with a header row. A column named `id` is ignored, the
/// label column accepts `M`/`B`, `malignant`/`benign` or `1`/`0`, and every
/// other column must be numeric.
pub fn read_labeled_csv<R: Read>(reader: R, label_column: &str) -> Result<LabeledDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::Invalid(format!("label column {label_column:?} not found")))?;
    let feature_cols: Vec<usize> =
        (0..headers.len()).filter(|&j| j != label_idx && !headers[j].eq_ignore_ascii_case("id")).collect();
    if feature_cols.is_empty() {
        return Err(DataError::Invalid("no feature columns".into()));
    }
    let names = feature_cols.iter().map(|&j| headers[j].to_string()).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(DataError::Csv { line, msg: format!("{} fields, expected {}", rec.len(), headers.len()) });
        }
        let label = match rec[label_idx].to_ascii_lowercase().as_str() {
            "m" | "malignant" | "1" => 1,
            "b" | "benign" | "0" => 0,
            other => return Err(DataError::Csv { line, msg: format!("label {other:?} is not binary") }),
        };
        let mut row = Vec::with_capacity(feature_cols.len());
        for &j in &feature_cols {
            let field = &rec[j];
            let v: f64 = field.parse().map_err(|_| DataError::Csv {
                line,
                msg: format!("column {:?}: {field:?} is not a number", &headers[j]),
            })?;
            if !v.is_finite() {
                return Err(DataError::Csv { line, msg: format!("column {:?} is not finite", &headers[j]) });
            }
            row.push(v);
        }
        rows.push(row);
        labels.push(label);
    }
    LabeledDataset::new(rows, labels, names)
}

pub fn read_labeled_csv_path(path: &Path, label_column: &str) -> Result<LabeledDataset, DataError> {
    read_labeled_csv(std::fs::File::open(path)?, label_column)
}

/// Fraction of points whose posterior prediction (`>= 0.5` means class 1)
/// matches the label.
pub fn evaluate_accuracy(array: &CrossbarArray, data: &LabeledDataset, cfg: &McmcConfig) -> Result<f64, McmcError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (v, &t) in data.rows().zip(data.labels()) {
        let p = mcmc::posterior_response(array, v, cfg.burn_in, |x| logistic_row_function(x, cfg.scale))?;
        if (p >= 0.5) == (t == 1) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Posterior probability on a regular 2-D grid, row-major in `y` then `x`.
pub fn probability_grid(
    array: &CrossbarArray,
    cfg: &McmcConfig,
    x_range: (f64, f64),
    y_range: (f64, f64),
    steps: usize,
) -> Result<Vec<[f64; 3]>, McmcError> {
    let steps = steps.max(2);
    let at = |(lo, hi): (f64, f64), k: usize| lo + (hi - lo) * k as f64 / (steps - 1) as f64;
    let mut out = Vec::with_capacity(steps * steps);
    for j in 0..steps {
        for i in 0..steps {
            let (x, y) = (at(x_range, i), at(y_range, j));
            let p = mcmc::posterior_response(array, &[x, y], cfg.burn_in, |z| logistic_row_function(z, cfg.scale))?;
            out.push([x, y, p]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SupervisedRun {
    pub run: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub record: RunRecord,
    pub snapshot: PosteriorSnapshot,
}

/// Train one chain on `train` and report posterior accuracy on `test`.
pub fn train_and_evaluate(
    setup: &ArraySetup,
    train: &LabeledDataset,
    test: &LabeledDataset,
    run: usize,
    seed: u64,
) -> Result<SupervisedRun, ExperimentError> {
    let wrap = |source: McmcError| ExperimentError::Run { run, source };
    let mut array = setup.build_array(train.width(), seed, 0).map_err(|e| wrap(e.into()))?;
    let mut cfg = setup.mcmc.clone();
    cfg.seed = seed;
    let model = LogisticModel::new(train, cfg.scale);
    let mut rng = stream_rng(seed, Stream::Chain, 0);
    let record = mcmc::train(&mut array, &model, &cfg, &mut rng).map_err(wrap)?;
    let accuracy = evaluate_accuracy(&array, test, &cfg).map_err(wrap)?;
    Ok(SupervisedRun { run, seed, accuracy, record, snapshot: array.snapshot() })
}

#[derive(Debug, Clone)]
pub struct SupervisedSummary {
    pub runs: Vec<SupervisedRun>,
    pub stats: BoxStats,
}

impl SupervisedSummary {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.accuracy).collect()
    }
}

/// `runs` independent chains on a fixed split; run `r` uses seed
/// `derive_seed(master_seed, r)`.
pub fn run_supervised_experiment(
    setup: &ArraySetup,
    train: &LabeledDataset,
    test: &LabeledDataset,
    runs: usize,
    master_seed: u64,
    jobs: usize,
) -> Result<SupervisedSummary, ExperimentError> {
    train.check_trainable()?;
    if train.width() != test.width() {
        return Err(DataError::WidthMismatch { expected: train.width(), got: test.width() }.into());
    }
    let results: Vec<_> = in_pool(jobs, || {
        (0..runs)
            .into_par_iter()
            .map(|r| train_and_evaluate(setup, train, test, r, derive_seed(master_seed, r as u64)))
            .collect()
    });
    summarize(results)
}

/// Synthetic two-blob task: every run draws its own dataset and is scored on
/// that same (separable) set.
pub fn run_two_gaussians_experiment(
    setup: &ArraySetup,
    samples: usize,
    shift: f64,
    runs: usize,
    master_seed: u64,
    jobs: usize,
) -> Result<SupervisedSummary, ExperimentError> {
    let results: Vec<_> = in_pool(jobs, || {
        (0..runs)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(master_seed, r as u64);
                let data = generate_two_gaussians(samples, shift, &mut stream_rng(seed, Stream::Dataset, 0))?;
                train_and_evaluate(setup, &data, &data, r, seed)
            })
            .collect()
    });
    summarize(results)
}

fn summarize(results: Vec<Result<SupervisedRun, ExperimentError>>) -> Result<SupervisedSummary, ExperimentError> {
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let stats = BoxStats::from_samples(&accs).ok_or(ExperimentError::NoRuns)?;
    Ok(SupervisedSummary { runs, stats })
}
