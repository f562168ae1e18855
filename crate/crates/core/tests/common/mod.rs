//! Independent oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ran::datasets::{column_stats, make_synthetic, split_normal_anomaly, znormalize, SyntheticProfile};
use ran::model::{ArchConfig, ModelParams, Variant};
use ran::scoring::{evaluate, ReportMeta, ScoreReport};
use ran::tensor::{Activation, Tape, Tensor, Var};
use ran::training::{train, LossRecord, TrainConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Direct sliding dot product. `x` is `[B, C_in, L]`, `w` is `[C_out, C_in, K]`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_oracle(
    x: &[f64],
    (b, c_in, l): (usize, usize, usize),
    w: &[f64],
    (c_out, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize) {
    let out = (l + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; b * c_out * out];
    for bi in 0..b {
        for o in 0..c_out {
            for t in 0..out {
                let mut acc = bias[o];
                for c in 0..c_in {
                    for kk in 0..k {
                        let pos = (t * stride + kk) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < l {
                            acc += w[(o * c_in + c) * k + kk] * x[(bi * c_in + c) * l + pos as usize];
                        }
                    }
                }
                y[(bi * c_out + o) * out + t] = acc;
            }
        }
    }
    (y, out)
}

/// Scatter form of the transposed convolution. `w` is `[C_in, C_out, K]`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_transpose_oracle(
    x: &[f64],
    (b, c_in, l): (usize, usize, usize),
    w: &[f64],
    (c_out, k): (usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize) {
    let out = (l - 1) * stride + k - 2 * pad;
    let mut y = vec![0.0; b * c_out * out];
    for bi in 0..b {
        for o in 0..c_out {
            for t in 0..out {
                y[(bi * c_out + o) * out + t] = bias[o];
            }
        }
        for c in 0..c_in {
            for i in 0..l {
                for o in 0..c_out {
                    for kk in 0..k {
                        let pos = (i * stride + kk) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < out {
                            y[(bi * c_out + o) * out + pos as usize] +=
                                x[(bi * c_in + c) * l + i] * w[(c * c_out + o) * k + kk];
                        }
                    }
                }
            }
        }
    }
    (y, out)
}

/// Counts every (anomaly, normal) pair: win 1, tie 1/2.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
    let mut credit = 0.0;
    let (mut pos, mut neg) = (0usize, 0usize);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            pos += 1;
        } else {
            neg += 1;
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                if scores[i] > scores[j] {
                    credit += 1.0;
                } else if scores[i] == scores[j] {
                    credit += 0.5;
                }
            }
        }
    }
    credit / (pos * neg) as f64
}

/// A differentiable function of some input tensors, recorded on a tape.
pub struct GradCase {
    pub inputs: Vec<Tensor<f64>>,
    pub build: Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
}

pub const FD_STEP: f64 = 1e-4;

/// Scalar objective: the op's output contracted with fixed random weights.
fn objective(case: &GradCase, inputs: &[Tensor<f64>], weights: &[f64], with_grad: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.set_requires_grad(with_grad);
            tape.leaf(t)
        })
        .collect();
    let out = (case.build)(&mut tape, &vars);
    let n = tape.value(out).numel();
    assert_eq!(n, weights.len());
    let flat = tape.reshape(out, vec![n]).unwrap();
    let w = tape.constant(vec![1, n], weights.to_vec()).unwrap();
    let b = tape.constant(vec![1], vec![0.0]).unwrap();
    let loss = tape.dense(flat, w, b).unwrap();
    let value = tape.value(loss).data()[0];
    if !with_grad {
        return (value, Vec::new());
    }
    tape.backward(loss).unwrap();
    let grads = vars.iter().map(|v| tape.grad(*v).unwrap().to_vec()).collect();
    (value, grads)
}

/// Largest norm-wise relative error between the tape gradient and central
/// differences, over all inputs of the case.
pub fn gradient_error(case: &GradCase, rng: &mut ChaCha8Rng) -> f64 {
    let n_out = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = case.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = (case.build)(&mut tape, &vars);
        tape.value(out).numel()
    };
    let weights = uniform(rng, n_out, -1.0, 1.0);
    let (_, analytic) = objective(case, &case.inputs, &weights, true);
    let mut worst = 0.0f64;
    for (idx, input) in case.inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let mut plus = case.inputs.clone();
            plus[idx].data_mut()[e] += FD_STEP;
            let mut minus = case.inputs.clone();
            minus[idx].data_mut()[e] -= FD_STEP;
            let fp = objective(case, &plus, &weights, false).0;
            let fm = objective(case, &minus, &weights, false).0;
            *slot = (fp - fm) / (2.0 * FD_STEP);
        }
        let a = &analytic[idx];
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(rel);
    }
    worst
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    tensor(shape, uniform(rng, n, -1.0, 1.0))
}

/// Values bounded away from zero so no finite-difference step crosses a kink.
fn kink_free(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.01..1.5);
            if rng.random_bool(0.5) { mag } else { -mag }
        })
        .collect();
    tensor(shape, data)
}

pub const GRAD_OPS: [&str; 14] = [
    "conv1d",
    "conv1d_transpose",
    "dense",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "reshape",
    "pad_right",
    "crop_right",
    "scale",
    "add",
    "mse",
    "bce",
    "composite",
];

/// One random instance of the named op.
pub fn grad_case(op: &str, rng: &mut ChaCha8Rng) -> GradCase {
    let b = rng.random_range(1..=3usize);
    match op {
        "conv1d" => {
            let (c_in, c_out, k) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=5usize));
            let stride = rng.random_range(1..=3);
            let pad = rng.random_range(0..k);
            let l = rng.random_range(k.saturating_sub(2 * pad).max(1)..=9);
            let batched = rng.random_bool(0.7);
            let x_shape = if batched { vec![b, c_in, l] } else { vec![c_in, l] };
            GradCase {
                inputs: vec![
                    random_tensor(rng, x_shape),
                    random_tensor(rng, vec![c_out, c_in, k]),
                    random_tensor(rng, vec![c_out]),
                ],
                build: Box::new(move |t, v| t.conv1d(v[0], v[1], v[2], stride, pad).unwrap()),
            }
        }
        "conv1d_transpose" => {
            let (c_in, c_out, k) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=5usize));
            let stride = rng.random_range(1..=3);
            let pad = rng.random_range(0..=(k - 1) / 2);
            let l = rng.random_range(1..=6);
            let batched = rng.random_bool(0.7);
            let x_shape = if batched { vec![b, c_in, l] } else { vec![c_in, l] };
            GradCase {
                inputs: vec![
                    random_tensor(rng, x_shape),
                    random_tensor(rng, vec![c_in, c_out, k]),
                    random_tensor(rng, vec![c_out]),
                ],
                build: Box::new(move |t, v| t.conv1d_transpose(v[0], v[1], v[2], stride, pad).unwrap()),
            }
        }
        "dense" => {
            let (f_in, f_out) = (rng.random_range(1..=6), rng.random_range(1..=5usize));
            let x_shape = if rng.random_bool(0.7) { vec![b, f_in] } else { vec![f_in] };
            GradCase {
                inputs: vec![
                    random_tensor(rng, x_shape),
                    random_tensor(rng, vec![f_out, f_in]),
                    random_tensor(rng, vec![f_out]),
                ],
                build: Box::new(|t, v| t.dense(v[0], v[1], v[2]).unwrap()),
            }
        }
        "leaky_relu" | "sigmoid" | "tanh" => {
            let kind = match op {
                "leaky_relu" => Activation::leaky_relu(rng.random_range(0.01..0.5)),
                "sigmoid" => Activation::Sigmoid,
                _ => Activation::Tanh,
            };
            let shape = vec![b, rng.random_range(1..=3), rng.random_range(1..=6)];
            GradCase {
                inputs: vec![kink_free(rng, shape)],
                build: Box::new(move |t, v| t.activation(v[0], kind).unwrap()),
            }
        }
        "reshape" => {
            let (c, l) = (rng.random_range(1..=3), rng.random_range(1..=6));
            GradCase {
                inputs: vec![random_tensor(rng, vec![b, c, l])],
                build: Box::new(move |t, v| t.reshape(v[0], vec![b * c, l]).unwrap()),
            }
        }
        "pad_right" => {
            let extra = rng.random_range(0..=3);
            let shape = vec![b, rng.random_range(1..=3), rng.random_range(1..=6)];
            GradCase {
                inputs: vec![random_tensor(rng, shape)],
                build: Box::new(move |t, v| t.pad_right(v[0], extra).unwrap()),
            }
        }
        "crop_right" => {
            let l = rng.random_range(1..=7);
            let keep = rng.random_range(1..=l);
            let shape = vec![b, rng.random_range(1..=3), l];
            GradCase {
                inputs: vec![random_tensor(rng, shape)],
                build: Box::new(move |t, v| t.crop_right(v[0], keep).unwrap()),
            }
        }
        "scale" => {
            let factor = rng.random_range(-3.0..3.0);
            let shape = vec![b, rng.random_range(1..=6)];
            GradCase {
                inputs: vec![random_tensor(rng, shape)],
                build: Box::new(move |t, v| t.scale(v[0], factor)),
            }
        }
        "add" => {
            let shape = vec![b, rng.random_range(1..=3), rng.random_range(1..=6)];
            GradCase {
                inputs: vec![random_tensor(rng, shape.clone()), random_tensor(rng, shape)],
                build: Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
            }
        }
        "mse" => {
            let shape = vec![b, rng.random_range(1..=8)];
            GradCase {
                inputs: vec![random_tensor(rng, shape.clone()), random_tensor(rng, shape)],
                build: Box::new(|t, v| t.mse(v[0], v[1]).unwrap()),
            }
        }
        "bce" => {
            let n = rng.random_range(1..=8);
            let target = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            GradCase {
                inputs: vec![tensor(vec![b, n], uniform(rng, b * n, 0.05, 0.95))],
                build: Box::new(move |t, v| t.bce(v[0], target).unwrap()),
            }
        }
        "composite" => {
            // pad, conv, activation, transposed conv, tanh, crop, scale, mse
            let l = rng.random_range(4..=8);
            let pad = rng.random_range(0..=2);
            let ch = rng.random_range(1..=3);
            GradCase {
                inputs: vec![
                    random_tensor(rng, vec![b, 1, l]),
                    random_tensor(rng, vec![ch, 1, 3]),
                    random_tensor(rng, vec![ch]),
                    random_tensor(rng, vec![ch, 1, 3]),
                    random_tensor(rng, vec![1]),
                    random_tensor(rng, vec![b, 1, l]),
                ],
                build: Box::new(move |t, v| {
                    let x = t.pad_right(v[0], pad).unwrap();
                    let h = t.conv1d(x, v[1], v[2], 1, 1).unwrap();
                    let h = t.activation(h, Activation::Sigmoid).unwrap();
                    let h = t.conv1d_transpose(h, v[3], v[4], 1, 1).unwrap();
                    let h = t.activation(h, Activation::Tanh).unwrap();
                    let h = t.crop_right(h, l).unwrap();
                    let h = t.scale(h, 4.0);
                    t.mse(h, v[5]).unwrap()
                }),
            }
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// Worst relative error of the named op over `cases` random instances.
pub fn worst_gradient_error(op: &str, cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..cases)
        .map(|_| gradient_error(&grad_case(op, &mut r), &mut r))
        .fold(0.0, f64::max)
}

/// Worst relative gap between the tape conv (or transposed conv) and its
/// loop oracle over `cases` random instances.
pub fn conv_oracle_gap(transposed: bool, cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (b, c_in, c_out) = (r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=4));
        let k: usize = r.random_range(1..=7);
        let stride = r.random_range(1..=4);
        let (pad, l) = if transposed {
            (r.random_range(0..=(k - 1) / 2), r.random_range(1..=12))
        } else {
            let p = r.random_range(0..k);
            (p, r.random_range(k.saturating_sub(2 * p).max(1)..=20))
        };
        let x = uniform(&mut r, b * c_in * l, -2.0, 2.0);
        let w_shape = if transposed { vec![c_in, c_out, k] } else { vec![c_out, c_in, k] };
        let w = uniform(&mut r, c_in * c_out * k, -2.0, 2.0);
        let bias = uniform(&mut r, c_out, -1.0, 1.0);

        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(vec![b, c_in, l], x.clone()).unwrap();
        let wv = tape.constant(w_shape, w.clone()).unwrap();
        let bv = tape.constant(vec![c_out], bias.clone()).unwrap();
        let yv = if transposed {
            tape.conv1d_transpose(xv, wv, bv, stride, pad).unwrap()
        } else {
            tape.conv1d(xv, wv, bv, stride, pad).unwrap()
        };
        let (expected, out) = if transposed {
            conv1d_transpose_oracle(&x, (b, c_in, l), &w, (c_out, k), &bias, stride, pad)
        } else {
            conv1d_oracle(&x, (b, c_in, l), &w, (c_out, k), &bias, stride, pad)
        };
        assert_eq!(tape.value(yv).shape(), &[b, c_out, out]);
        for (got, want) in tape.value(yv).data().iter().zip(&expected) {
            worst = worst.max((got - want).abs() / want.abs().max(1.0));
        }
    }
    worst
}

/// Random score/label instance with at least one member of each class and
/// frequent ties.
pub fn random_auc_instance(r: &mut ChaCha8Rng, max_rows: usize) -> (Vec<f64>, Vec<u8>) {
    let n = r.random_range(2..=max_rows);
    let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..=1)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let levels = r.random_range(1..=n.max(2) * 2);
    let scores = (0..n)
        .map(|_| r.random_range(0..levels) as f64 / levels as f64)
        .collect();
    (scores, labels)
}

/// Default benchmark settings of the synthetic end-to-end check.
pub struct Benchmark {
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub m: usize,
    pub noise: f64,
    pub epochs: usize,
}

impl Default for Benchmark {
    fn default() -> Self {
        Benchmark {
            n_normal: 200,
            n_anomaly: 40,
            m: 64,
            noise: 0.1,
            epochs: TrainConfig::default().epochs,
        }
    }
}

/// Synthesizes, splits, trains `variant` and scores, all driven by `seed`.
pub fn run_benchmark(bench: &Benchmark, variant: Variant, seed: u64) -> (ModelParams, LossRecord, ScoreReport) {
    let ds = make_synthetic(
        SyntheticProfile::SineWithSpikes,
        bench.n_normal,
        bench.n_anomaly,
        bench.m,
        bench.noise,
        seed,
    )
    .unwrap();
    let split = split_normal_anomaly(&znormalize(&ds), 0, 0.3, seed).unwrap();
    let stats = column_stats(&split.x_nor).unwrap();
    let config = TrainConfig {
        epochs: bench.epochs,
        seed,
        ..TrainConfig::default()
    };
    let arch = ArchConfig::new(bench.m, variant);
    let (params, losses) = train(&split.x_nor, &stats, &config, &arch).unwrap();
    let meta = ReportMeta {
        dataset: "synthetic".into(),
        seed,
    };
    let report = evaluate(&params, &split, 10, &meta).unwrap();
    (params, losses, report)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
