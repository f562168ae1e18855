//! Reconstruction errors, min-max anomaly scores, AUC-ROC and score
//! histograms.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::json;

use crate::datasets::{Matrix, SplitDataset};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Rows scored per forward pass.
const SCORE_BATCH: usize = 256;

/// Formats `v` with 9 significant digits, `%.9g`-style: trailing zeros are
/// dropped and exponent notation is used outside `[1e-5, 1e9)`.
pub fn format_sig(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let sign = if negative { "-" } else { "" };

    if (-5..9).contains(&exp) {
        let (int_part, frac_part) = if exp >= 0 {
            let split = exp as usize + 1;
            (digits[..split].to_string(), digits[split..].to_string())
        } else {
            ("0".to_string(), "0".repeat((-exp - 1) as usize) + &digits)
        };
        let frac = frac_part.trim_end_matches('0');
        if frac.is_empty() {
            format!("{sign}{int_part}")
        } else {
            format!("{sign}{int_part}.{frac}")
        }
    } else {
        let frac = digits[1..].trim_end_matches('0');
        if frac.is_empty() {
            format!("{sign}{}e{exp}", &digits[..1])
        } else {
            format!("{sign}{}.{frac}e{exp}", &digits[..1])
        }
    }
}

/// `v` rounded to the value [`format_sig`] prints.
pub fn round_sig(v: f64) -> f64 {
    if v.is_finite() {
        format_sig(v).parse().expect("format_sig output parses")
    } else {
        v
    }
}

/// Per-row mean squared error between each test row and its reconstruction.
pub fn reconstruction_errors(params: &ModelParams, x_test: &Matrix) -> Result<Vec<f64>> {
    let m = params.config.m;
    if x_test.cols() != m {
        return Err(Error::InvalidShape(format!(
            "model expects rows of length {m}, test rows have length {}",
            x_test.cols()
        )));
    }
    let mut errors = Vec::with_capacity(x_test.rows());
    let idx: Vec<usize> = (0..x_test.rows()).collect();
    for chunk in idx.chunks(SCORE_BATCH) {
        let rows: Vec<f32> = chunk
            .iter()
            .flat_map(|&i| x_test.row(i).iter().map(|&v| v as f32))
            .collect();
        let rec = params.reconstruct_batch(&rows)?;
        for (j, &i) in chunk.iter().enumerate() {
            errors.push(row_mse(x_test.row(i), &rec[j * m..(j + 1) * m]));
        }
    }
    Ok(errors)
}

/// Mean squared difference of a row and its reconstruction.
pub fn row_mse(x: &[f64], rec: &[f32]) -> f64 {
    let sum: f64 = x
        .iter()
        .zip(rec)
        .map(|(a, b)| {
            let d = f64::from(*b) - a;
            d * d
        })
        .sum();
    sum / x.len() as f64
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} contains non-finite value {v}")));
    }
    Ok(())
}

/// Min-max normalization over the given errors. Constant input maps to zeros.
pub fn anomaly_scores(rec_errors: &[f64]) -> Result<Vec<f64>> {
    if rec_errors.is_empty() {
        return Err(Error::InvalidArgument("no reconstruction errors to score".into()));
    }
    check_finite(rec_errors, "reconstruction errors")?;
    let min = rec_errors.iter().copied().fold(f64::INFINITY, f64::min);
    let max = rec_errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; rec_errors.len()]);
    }
    let range = max - min;
    Ok(rec_errors.iter().map(|e| (e - min) / range).collect())
}

/// Normalizes with a range frozen from calibration data, clamping into `[0, 1]`.
pub fn anomaly_scores_calibrated(rec_errors: &[f64], min: f64, max: f64) -> Result<Vec<f64>> {
    check_finite(rec_errors, "reconstruction errors")?;
    if !(min.is_finite() && max.is_finite() && max >= min) {
        return Err(Error::InvalidArgument(format!(
            "calibration range [{min}, {max}] is not a finite interval"
        )));
    }
    let range = max - min;
    Ok(rec_errors
        .iter()
        .map(|&e| {
            if range == 0.0 {
                if e > max {
                    1.0
                } else {
                    0.0
                }
            } else {
                ((e - min) / range).clamp(0.0, 1.0)
            }
        })
        .collect())
}

fn class_counts(labels: &[u8]) -> Result<(usize, usize)> {
    let mut counts = (0, 0);
    for &l in labels {
        match l {
            0 => counts.0 += 1,
            1 => counts.1 += 1,
            other => {
                return Err(Error::InvalidArgument(format!("label {other} is not 0 or 1")));
            }
        }
    }
    Ok(counts)
}

/// Probability that a random anomaly (label 1) outscores a random normal
/// row, ties counting one half, via average ranks.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidShape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_finite(scores, "scores")?;
    let (n_neg, n_pos) = class_counts(labels)?;
    if n_neg == 0 || n_pos == 0 {
        return Err(Error::InvalidArgument(
            "AUC-ROC needs both normal and anomaly rows".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum keeps every quantity an integer.
    let mut twice_rank_sum_pos = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share the average (i + 1 + j) / 2
        let twice_avg = (i + 1 + j) as u64;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        twice_rank_sum_pos += twice_avg * pos_in_group;
        i = j;
    }
    let (n_pos, n_neg) = (n_pos as u64, n_neg as u64);
    let twice_u = twice_rank_sum_pos - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / 2.0 / (n_pos * n_neg) as f64)
}

/// Per-class counts over equal-width bins on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub bins: usize,
    pub normal: Vec<usize>,
    pub anomaly: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lower,upper,normal,anomaly\n");
        for b in 0..self.bins {
            let lo = b as f64 / self.bins as f64;
            let hi = (b + 1) as f64 / self.bins as f64;
            writeln!(
                out,
                "{},{},{},{},{}",
                b + 1,
                format_sig(lo),
                format_sig(hi),
                self.normal[b],
                self.anomaly[b]
            )
            .unwrap();
        }
        out
    }
}

/// Bins are half-open `[k/bins, (k+1)/bins)` except the last, which also
/// takes 1.0. Out-of-range scores fall into the nearest end bin.
pub fn score_histogram(scores: &[f64], labels: &[u8], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if scores.len() != labels.len() {
        return Err(Error::InvalidShape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_finite(scores, "scores")?;
    class_counts(labels)?;
    let mut h = Histogram {
        bins,
        normal: vec![0; bins],
        anomaly: vec![0; bins],
    };
    for (&s, &l) in scores.iter().zip(labels) {
        let b = ((s * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        if l == 1 {
            h.anomaly[b] += 1;
        } else {
            h.normal[b] += 1;
        }
    }
    Ok(h)
}

/// How reconstruction errors become scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalization {
    /// Min and max over the scored batch itself.
    Transductive,
    /// Min and max frozen from calibration errors.
    Calibrated { min: f64, max: f64 },
}

/// Everything produced by evaluating one model on one test set.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub dataset: String,
    pub seed: u64,
    pub variant: String,
    pub rec_errors: Vec<f64>,
    pub ano_scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub auc_roc: f64,
    pub histogram: Histogram,
}

impl ScoreReport {
    /// JSON summary; numbers carry 9 significant digits.
    pub fn to_json(&self) -> String {
        let r = |v: &[f64]| v.iter().map(|x| round_sig(*x)).collect::<Vec<_>>();
        let n_anomaly = self.labels.iter().filter(|&&l| l == 1).count();
        let value = json!({
            "dataset": self.dataset,
            "seed": self.seed,
            "variant": self.variant,
            "n_test": self.labels.len(),
            "n_anomaly": n_anomaly,
            "auc_roc": round_sig(self.auc_roc),
            "rec_error_min": round_sig(self.rec_errors.iter().copied().fold(f64::INFINITY, f64::min)),
            "rec_error_max": round_sig(self.rec_errors.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            "histogram": self.histogram,
            "labels": self.labels,
            "rec_errors": r(&self.rec_errors),
            "ano_scores": r(&self.ano_scores),
        });
        let mut s = serde_json::to_string_pretty(&value).expect("report serializes");
        s.push('\n');
        s
    }

    /// `index,label,rec_error,ano_score` per test row.
    pub fn scores_csv(&self) -> String {
        scores_csv(&self.labels, &self.rec_errors, &self.ano_scores)
    }
}

pub fn scores_csv(labels: &[u8], rec_errors: &[f64], ano_scores: &[f64]) -> String {
    let mut out = String::from("index,label,rec_error,ano_score\n");
    for (i, ((l, e), s)) in labels.iter().zip(rec_errors).zip(ano_scores).enumerate() {
        writeln!(out, "{i},{l},{},{}", format_sig(*e), format_sig(*s)).unwrap();
    }
    out
}

/// Identity of the data a report was computed on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportMeta {
    pub dataset: String,
    pub seed: u64,
}

/// Scores the test half of `split` and summarizes it.
pub fn evaluate(
    params: &ModelParams,
    split: &SplitDataset,
    bins: usize,
    meta: &ReportMeta,
) -> Result<ScoreReport> {
    evaluate_with(params, split, bins, meta, Normalization::Transductive)
}

pub fn evaluate_with(
    params: &ModelParams,
    split: &SplitDataset,
    bins: usize,
    meta: &ReportMeta,
    normalization: Normalization,
) -> Result<ScoreReport> {
    let rec_errors = reconstruction_errors(params, &split.x_test)?;
    let ano_scores = match normalization {
        Normalization::Transductive => anomaly_scores(&rec_errors)?,
        Normalization::Calibrated { min, max } => anomaly_scores_calibrated(&rec_errors, min, max)?,
    };
    let auc = auc_roc(&ano_scores, &split.test_labels)?;
    let histogram = score_histogram(&ano_scores, &split.test_labels, bins)?;
    Ok(ScoreReport {
        dataset: meta.dataset.clone(),
        seed: meta.seed,
        variant: params.config.variant.to_string(),
        rec_errors,
        ano_scores,
        labels: split.test_labels.clone(),
        auc_roc: auc,
        histogram,
    })
}
