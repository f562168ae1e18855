//! Labeled subsequence datasets: text I/O, normal/anomaly split,
//! per-row z-normalization, column statistics and a synthetic generator.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Rows below this standard deviation are mapped to zeros by [`znormalize`].
pub const ZNORM_EPS: f64 = 1e-8;

/// Row-major real matrix, one subsequence per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::InvalidShape(format!(
                "{rows} x {cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidShape(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..][..self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..][..self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `n` subsequences of length `m` with one integer label each.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    values: Matrix,
    labels: Vec<i64>,
}

impl LabeledDataset {
    pub fn new(values: Matrix, labels: Vec<i64>) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::InvalidArgument("dataset has no rows".into()));
        }
        if values.cols() < 2 {
            return Err(Error::InvalidArgument(format!(
                "subsequences need at least 2 points, got {}",
                values.cols()
            )));
        }
        if labels.len() != values.rows() {
            return Err(Error::InvalidShape(format!(
                "{} labels for {} rows",
                labels.len(),
                values.rows()
            )));
        }
        Ok(LabeledDataset { values, labels })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    /// Number of subsequences.
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    /// Subsequence length.
    pub fn m(&self) -> usize {
        self.values.cols()
    }
}

fn parse_line(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses UCR-style text: one subsequence per line, label first.
///
/// Fields are comma-separated; whitespace-separated lines (the archive's
/// `.tsv` distribution) are accepted as well. Blank lines are skipped.
pub fn parse_dataset(text: &str, origin: &Path) -> Result<LabeledDataset> {
    let format_err = |line: usize, message: String| Error::Format {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut m = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields = parse_line(line);
        let (label_txt, rest) = fields.split_first().expect("non-empty line");
        let label: f64 = label_txt
            .parse()
            .map_err(|_| format_err(lineno, format!("label {label_txt:?} is not a number")))?;
        if label.fract() != 0.0 || !label.is_finite() {
            return Err(format_err(lineno, format!("label {label_txt:?} is not an integer")));
        }
        match m {
            None => m = Some(rest.len()),
            Some(expected) if expected != rest.len() => {
                return Err(format_err(
                    lineno,
                    format!("expected {expected} values, found {}", rest.len()),
                ));
            }
            Some(_) => {}
        }
        for f in rest {
            let v: f64 = f
                .parse()
                .map_err(|_| format_err(lineno, format!("value {f:?} is not a number")))?;
            if !v.is_finite() {
                return Err(format_err(lineno, format!("value {f:?} is not finite")));
            }
            data.push(v);
        }
        labels.push(label as i64);
    }
    let m = m.ok_or_else(|| format_err(0, "file contains no subsequences".into()))?;
    if m < 2 {
        return Err(format_err(1, format!("subsequences need at least 2 points, got {m}")));
    }
    let values = Matrix::new(labels.len(), m, data)?;
    LabeledDataset::new(values, labels)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

/// Renders a dataset in the format [`parse_dataset`] reads. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn format_dataset(values: &Matrix, labels: &[i64]) -> String {
    let mut out = String::new();
    for (row, label) in values.iter_rows().zip(labels) {
        write!(out, "{label}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_dataset(&ds.values, &ds.labels)).map_err(|e| Error::io(path, e))
}

/// Normal training rows and the mixed test set.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub x_nor: Matrix,
    pub x_test: Matrix,
    /// 0 = normal, 1 = anomaly.
    pub test_labels: Vec<u8>,
    /// Source row of every `x_nor` row.
    pub train_rows: Vec<usize>,
    /// Source row of every `x_test` row.
    pub test_rows: Vec<usize>,
}

/// Holds out `test_normal_fraction` of the normal class for testing and
/// labels every other class an anomaly.
///
/// At least one normal row lands on each side when the class has two or more
/// rows. Both halves keep source order.
pub fn split_normal_anomaly(
    ds: &LabeledDataset,
    normal_label: i64,
    test_normal_fraction: f64,
    seed: u64,
) -> Result<SplitDataset> {
    if !(test_normal_fraction > 0.0 && test_normal_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_normal_fraction must lie in (0, 1), got {test_normal_fraction}"
        )));
    }
    let mut normal: Vec<usize> = Vec::new();
    let mut anomaly: Vec<usize> = Vec::new();
    for (i, &l) in ds.labels.iter().enumerate() {
        if l == normal_label {
            normal.push(i);
        } else {
            anomaly.push(i);
        }
    }
    if normal.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "normal label {normal_label} does not occur in the dataset"
        )));
    }
    if anomaly.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "every row has the normal label {normal_label}; no anomaly class"
        )));
    }
    let mut n_test = (test_normal_fraction * normal.len() as f64).round() as usize;
    if normal.len() >= 2 {
        n_test = n_test.clamp(1, normal.len() - 1);
    } else {
        n_test = 0;
    }

    let mut shuffled = normal.clone();
    shuffled.shuffle(&mut rng::stream(seed, Stream::Split, 0));
    let mut test_normal = shuffled[..n_test].to_vec();
    let mut train = shuffled[n_test..].to_vec();
    test_normal.sort_unstable();
    train.sort_unstable();

    let mut test: Vec<usize> = test_normal.iter().chain(&anomaly).copied().collect();
    test.sort_unstable();
    let test_labels = test
        .iter()
        .map(|&i| u8::from(ds.labels[i] != normal_label))
        .collect();

    Ok(SplitDataset {
        x_nor: ds.values.select_rows(&train),
        x_test: ds.values.select_rows(&test),
        test_labels,
        train_rows: train,
        test_rows: test,
    })
}

/// Population mean and standard deviation of one row.
pub fn mean_std(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Shifts and scales every row to zero mean and unit standard deviation.
pub fn znormalize_matrix(values: &Matrix) -> Matrix {
    let mut out = values.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let (mean, std) = mean_std(row);
        if std < ZNORM_EPS {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }
    out
}

pub fn znormalize(ds: &LabeledDataset) -> LabeledDataset {
    LabeledDataset {
        values: znormalize_matrix(&ds.values),
        labels: ds.labels.clone(),
    }
}

/// Per-column mean and population standard deviation of the normal data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ColumnStats {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

pub fn column_stats(x_nor: &Matrix) -> Result<ColumnStats> {
    if x_nor.rows() == 0 || x_nor.cols() == 0 {
        return Err(Error::InvalidArgument(
            "column statistics need at least one row".into(),
        ));
    }
    let n = x_nor.rows() as f64;
    let m = x_nor.cols();
    let mut mu = vec![0.0; m];
    for row in x_nor.iter_rows() {
        for (acc, v) in mu.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mu.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; m];
    for row in x_nor.iter_rows() {
        for ((acc, v), mean) in var.iter_mut().zip(row).zip(&mu) {
            *acc += (v - mean) * (v - mean);
        }
    }
    let sigma = var.into_iter().map(|v| (v / n).sqrt()).collect();
    Ok(ColumnStats { mu, sigma })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticProfile {
    SineWithSpikes,
}

impl std::str::FromStr for SyntheticProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine_with_spikes" => Ok(SyntheticProfile::SineWithSpikes),
            other => Err(Error::InvalidArgument(format!("unknown synthetic profile {other:?}"))),
        }
    }
}

impl std::fmt::Display for SyntheticProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SyntheticProfile::SineWithSpikes => f.write_str("sine_with_spikes"),
        }
    }
}

/// Amplitude of the clean sine.
pub const SYNTH_AMPLITUDE: f64 = 1.0;
/// Burst height relative to [`SYNTH_AMPLITUDE`].
pub const SYNTH_BURST_FACTOR: f64 = 3.0;

/// Number of positions a burst covers in a row of length `m`.
pub fn burst_len(m: usize) -> usize {
    (m as f64 * 0.1).ceil() as usize
}

/// Clean template every synthetic row is built from.
pub fn sine_template(m: usize) -> Vec<f64> {
    (0..m)
        .map(|t| SYNTH_AMPLITUDE * (std::f64::consts::TAU * t as f64 / m as f64).sin())
        .collect()
}

/// Desk-scale stand-in for a real archive: rows are one sine period plus
/// Gaussian noise; anomaly rows additionally carry a contiguous burst.
///
/// Normal rows (label 0) come first, then anomalies (label 1). Row `i` draws
/// from its own stream, so the output depends only on the arguments.
pub fn make_synthetic(
    profile: SyntheticProfile,
    n_normal: usize,
    n_anomaly: usize,
    m: usize,
    noise_level: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_normal < 8 || n_anomaly < 1 || m < 16 {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs n_normal >= 8, n_anomaly >= 1, m >= 16 \
             (got {n_normal}, {n_anomaly}, {m})"
        )));
    }
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be finite and non-negative, got {noise_level}"
        )));
    }
    let SyntheticProfile::SineWithSpikes = profile;
    let template = sine_template(m);
    let blen = burst_len(m);
    let n = n_normal + n_anomaly;
    let mut data = Vec::with_capacity(n * m);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng::stream(seed, Stream::Synthetic, i as u64);
        let mut row: Vec<f64> = template
            .iter()
            .map(|&v| {
                let z: f64 = rng.sample(StandardNormal);
                v + noise_level * z
            })
            .collect();
        let anomalous = i >= n_normal;
        if anomalous {
            let offset = rng.random_range(0..=m - blen);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            for v in &mut row[offset..offset + blen] {
                *v += sign * SYNTH_BURST_FACTOR * SYNTH_AMPLITUDE;
            }
        }
        data.extend(row);
        labels.push(i64::from(anomalous));
    }
    LabeledDataset::new(Matrix::new(n, m, data)?, labels)
}
