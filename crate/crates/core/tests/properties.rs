//! Property tests over datasets, imitation, scoring and geometry.

mod common;

use proptest::prelude::*;

use ran::datasets::{
    burst_len, column_stats, format_dataset, make_synthetic, parse_dataset, sine_template,
    split_normal_anomaly, LabeledDataset, Matrix, SyntheticProfile,
};
use ran::imitation::{imitate_with_indices, CorruptionSpec, OOD_FACTOR};
use ran::model::{ArchConfig, ConvLayer, Variant};
use ran::scoring::{anomaly_scores, auc_roc, score_histogram};
use ran::tensor::{conv1d_out_len, conv1d_transpose_out_len};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
}

fn sized_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| matrix(r, c))
}

fn scored_labels(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2..=max).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(0u8..=1, n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = 0;
                l[1] = 1;
                (s, l)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auc_matches_pairwise_oracle((scores, labels) in scored_labels(60)) {
        prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), common::auc_pairwise(&scores, &labels));
    }

    #[test]
    fn auc_is_a_rank_statistic((scores, labels) in scored_labels(60), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = auc_roc(&scores, &labels).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let cube: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        prop_assert_eq!(auc_roc(&affine, &labels).unwrap(), base);
        prop_assert_eq!(auc_roc(&cube, &labels).unwrap(), base);
    }

    #[test]
    fn auc_of_negated_scores_is_complement((scores, labels) in scored_labels(60)) {
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] < w[1]));
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let total = auc_roc(&scores, &labels).unwrap() + auc_roc(&neg, &labels).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scores_are_bounded_and_order_preserving(errors in prop::collection::vec(0.0f64..50.0, 1..80)) {
        let scores = anomaly_scores(&errors).unwrap();
        let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
        let max = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max > min {
            prop_assert_eq!(scores.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            prop_assert_eq!(scores.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        } else {
            prop_assert!(scores.iter().all(|&s| s == 0.0));
        }
        for i in 0..errors.len() {
            for j in 0..errors.len() {
                if errors[i] < errors[j] {
                    prop_assert!(scores[i] <= scores[j]);
                }
                if errors[i] == errors[j] {
                    prop_assert_eq!(scores[i], scores[j]);
                }
            }
        }
    }

    #[test]
    fn scores_ignore_affine_shifts(errors in prop::collection::vec(0.0f64..50.0, 2..80), a in 0.5f64..4.0, b in -3.0f64..3.0) {
        let shifted: Vec<f64> = errors.iter().map(|e| a * e + b).collect();
        let s1 = anomaly_scores(&errors).unwrap();
        let s2 = anomaly_scores(&shifted).unwrap();
        for (x, y) in s1.iter().zip(&s2) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn histogram_conserves_class_sizes((scores, labels) in scored_labels(60), bins in 2usize..30) {
        let scores = anomaly_scores(&scores).unwrap();
        let h = score_histogram(&scores, &labels, bins).unwrap();
        let anomalies = labels.iter().filter(|&&l| l == 1).count();
        prop_assert_eq!(h.anomaly.iter().sum::<usize>(), anomalies);
        prop_assert_eq!(h.normal.iter().sum::<usize>(), labels.len() - anomalies);
    }

    #[test]
    fn split_conserves_rows(n_normal in 2usize..40, n_other in 1usize..20, frac in 0.05f64..0.95, seed: u64) {
        let n = n_normal + n_other;
        let labels: Vec<i64> = (0..n).map(|i| if i % 3 == 0 && i / 3 < n_other { 7 } else { 1 }).collect();
        let normals = labels.iter().filter(|&&l| l == 1).count();
        prop_assume!(normals >= 2 && normals < n);
        let values = Matrix::new(n, 2, (0..2 * n).map(|v| v as f64).collect()).unwrap();
        let ds = LabeledDataset::new(values, labels.clone()).unwrap();
        let split = split_normal_anomaly(&ds, 1, frac, seed).unwrap();
        prop_assert_eq!(split.x_nor.rows() + split.x_test.rows(), n);
        let mut all: Vec<usize> = split.train_rows.iter().chain(&split.test_rows).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for (k, &src) in split.test_rows.iter().enumerate() {
            prop_assert_eq!(split.x_test.row(k), ds.values().row(src));
            prop_assert_eq!(split.test_labels[k] == 1, labels[src] != 1);
        }
        for (k, &src) in split.train_rows.iter().enumerate() {
            prop_assert_eq!(labels[src], 1);
            prop_assert_eq!(split.x_nor.row(k), ds.values().row(src));
        }
        prop_assert!(!split.train_rows.is_empty());
        prop_assert!(split.test_labels.contains(&0));
        prop_assert_eq!(split_normal_anomaly(&ds, 1, frac, seed).unwrap(), split);
    }

    #[test]
    fn column_stats_ignore_row_order(x in sized_matrix(12, 6), seed: u64) {
        let mut order: Vec<usize> = (0..x.rows()).collect();
        let mut r = common::rng(seed);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
        let a = column_stats(&x).unwrap();
        let b = column_stats(&x.select_rows(&order)).unwrap();
        for (p, q) in a.mu.iter().zip(&b.mu).chain(a.sigma.iter().zip(&b.sigma)) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_text_round_trips(x in sized_matrix(8, 8).prop_filter("m >= 2", |x| x.cols() >= 2), label_seed: u64) {
        let labels: Vec<i64> = (0..x.rows()).map(|i| ((label_seed >> (i % 60)) & 3) as i64 - 1).collect();
        let text = format_dataset(&x, &labels);
        let back = parse_dataset(&text, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back.values(), &x);
        prop_assert_eq!(back.labels(), labels.as_slice());
    }

    #[test]
    fn synthetic_anomalies_stand_out(m in 16usize..128, noise in 0.0f64..0.3, seed: u64) {
        let ds = make_synthetic(SyntheticProfile::SineWithSpikes, 8, 4, m, noise, seed).unwrap();
        let template = sine_template(m);
        let need = (0.1 * m as f64).ceil() as usize;
        prop_assert!(burst_len(m) >= need);
        for i in 8..12 {
            let far = ds.values().row(i).iter().zip(&template)
                .filter(|(v, t)| (*v - *t).abs() > 2.0 * noise)
                .count();
            prop_assert!(far >= need, "row {} has {} far positions, need {}", i, far, need);
        }
    }

    #[test]
    fn imitation_contract(x in sized_matrix(30, 40), ci in 0usize..5, seed: u64) {
        let c = [0.0, 0.05, 0.1, 0.5, 1.0][ci];
        let stats = column_stats(&x).unwrap();
        let spec = CorruptionSpec::new(c, seed).unwrap();
        let out = imitate_with_indices(&x, &stats, &spec).unwrap();
        let m = x.cols();
        let expected = if c == 0.0 { 0 } else { ((c * m as f64 + 0.5).floor() as usize).max(1) };
        for i in 0..x.rows() {
            prop_assert_eq!(out.replaced[i].len(), expected);
            for r in 0..m {
                let got = out.x_imi.row(i)[r];
                if out.replaced[i].contains(&r) {
                    prop_assert!((got - (stats.mu[r] + OOD_FACTOR * stats.sigma[r])).abs() < 1e-9);
                } else {
                    prop_assert_eq!(got.to_bits(), x.row(i)[r].to_bits());
                }
            }
        }
        prop_assert_eq!(imitate_with_indices(&x, &stats, &spec).unwrap(), out);
    }

    #[test]
    fn mirrored_stacks_restore_the_padded_length(
        m in 16usize..400,
        layers in prop::collection::vec((1usize..8, 1usize..5, 1usize..4), 1..4),
    ) {
        let encoder: Vec<ConvLayer> = layers
            .iter()
            .map(|&(c, half_k, s)| ConvLayer::new(c, 2 * half_k - 1, s))
            .collect();
        let mut cfg = ArchConfig::new(m, Variant::AeFcn);
        cfg.decoder_layers = ran::model::mirror(&encoder);
        cfg.encoder_layers = encoder;
        if let Ok(g) = cfg.geometry() {
            prop_assert!(g.padded_len >= m);
            let mut len = g.padded_len;
            for l in &cfg.encoder_layers {
                len = conv1d_out_len(len, l.kernel_size, l.stride, l.padding()).unwrap();
            }
            for l in &cfg.decoder_layers {
                len = conv1d_transpose_out_len(len, l.kernel_size, l.stride, l.padding()).unwrap();
            }
            prop_assert_eq!(len, g.padded_len);
        }
    }
}

/// Column selection frequencies against the uniform expectation.
#[test]
fn imitation_picks_columns_uniformly() {
    let (n, m) = (2000, 20);
    let x = Matrix::new(n, m, vec![0.0; n * m]).unwrap();
    let stats = column_stats(&x).unwrap();
    let spec = CorruptionSpec::new(0.25, 3).unwrap();
    let out = imitate_with_indices(&x, &stats, &spec).unwrap();
    let mut counts = vec![0.0f64; m];
    for row in &out.replaced {
        for &r in row {
            counts[r] += 1.0;
        }
    }
    let expected = n as f64 * 5.0 / m as f64;
    let chi2: f64 = counts.iter().map(|o| (o - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square with 19 degrees of freedom
    assert!(chi2 < 43.82, "chi-square {chi2}");
}
