use super::conv::{self, ConvGeom};
use super::linalg::{gemm, MatRef};
use super::{Activation, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeom,
        out_channels: usize,
        cols: Vec<T>,
    },
    /// `geom` describes the forward convolution this op is the adjoint of:
    /// its `signal` is our output length and its `out` our input length.
    ConvTranspose1d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeom,
        in_channels: usize,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
        batch: usize,
        f_in: usize,
        f_out: usize,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Reshape {
        input: Var,
    },
    PadRight {
        input: Var,
        len: usize,
        extra: usize,
    },
    CropRight {
        input: Var,
        len: usize,
        keep: usize,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mse {
        a: Var,
        b: Var,
    },
    Bce {
        p: Var,
        target: T,
        clamp: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    tensor: Tensor<T>,
    op: Op<T>,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order of the graph. A tape is meant to be thrown away after
/// each optimisation step.
#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Clamp applied to probabilities before taking logarithms in [`Tape::bce`].
pub const BCE_CLAMP: f64 = 1e-7;

fn rank3(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [c, l] => Some((1, c, l)),
        [b, c, l] => Some((b, c, l)),
        _ => None,
    }
}

fn rank2(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [f] => Some((1, f)),
        [b, f] => Some((b, f)),
        _ => None,
    }
}

fn batched_shape(batched: bool, batch: usize, rest: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(rest.len() + 1);
    if batched {
        s.push(batch);
    }
    s.extend_from_slice(rest);
    s
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    fn push_result(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].tensor.requires_grad);
        let mut tensor = Tensor::new(shape, data).expect("op produced a consistent shape");
        tensor.requires_grad = requires_grad;
        self.push(tensor, op)
    }

    /// Records a leaf. Its `requires_grad` flag decides whether backward fills its gradient.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.grad = None;
        self.push(tensor, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    /// Leaf copy of a trainable tensor.
    pub fn param(&mut self, tensor: &Tensor<T>) -> Var {
        let t = Tensor {
            shape: tensor.shape.clone(),
            data: tensor.data.clone(),
            requires_grad: true,
            grad: None,
        };
        self.push(t, Op::Leaf)
    }

    /// Leaf holding a copy of `var`'s value, cut off from its history.
    pub fn detach(&mut self, var: Var) -> Var {
        let src = &self.nodes[var.0].tensor;
        let t = Tensor {
            shape: src.shape.clone(),
            data: src.data.clone(),
            requires_grad: false,
            grad: None,
        };
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].tensor
    }

    /// Gradient accumulated into a leaf by [`Tape::backward`].
    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].tensor.grad()
    }

    fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].tensor.shape
    }

    fn data(&self, var: Var) -> &[T] {
        &self.nodes[var.0].tensor.data
    }

    /// Strided, zero-padded 1D cross-correlation.
    ///
    /// `input` is `[C_in, L]` or `[B, C_in, L]`, `kernels` is `[C_out, C_in, K]`
    /// and `bias` is `[C_out]`.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let (batch, c_in, len) = rank3(&in_shape).ok_or_else(|| {
            Error::InvalidShape(format!("conv1d input must be [C, L] or [B, C, L], got {in_shape:?}"))
        })?;
        let (c_out, k_in, kernel) = match *self.shape(kernels) {
            [o, i, k] => (o, i, k),
            ref s => {
                return Err(Error::InvalidShape(format!(
                    "conv1d kernels must be [C_out, C_in, K], got {s:?}"
                )))
            }
        };
        if k_in != c_in {
            return Err(Error::InvalidShape(format!(
                "conv1d input has {c_in} channels but kernels expect {k_in}"
            )));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::InvalidShape(format!(
                "conv1d bias must be [{c_out}], got {:?}",
                self.shape(bias)
            )));
        }
        let out_len = conv::conv1d_out_len(len, kernel, stride, padding)?;
        let geom = ConvGeom {
            batch,
            channels: c_in,
            signal: len,
            kernel,
            stride,
            padding,
            out: out_len,
        };
        let cols = geom.im2col(self.data(input));
        let n = geom.col_cols();
        let mut mat = vec![T::zero(); c_out * n];
        gemm(
            T::one(),
            MatRef::rm(self.data(kernels), c_out, geom.col_rows()),
            MatRef::rm(&cols, geom.col_rows(), n),
            T::zero(),
            &mut mat,
        );
        let bias_v = self.data(bias);
        let mut out = vec![T::zero(); batch * c_out * out_len];
        for b in 0..batch {
            for o in 0..c_out {
                let src = &mat[o * n + b * out_len..][..out_len];
                let dst = &mut out[(b * c_out + o) * out_len..][..out_len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *s + bias_v[o];
                }
            }
        }
        let shape = batched_shape(in_shape.len() == 3, batch, &[c_out, out_len]);
        Ok(self.push_result(
            shape,
            out,
            Op::Conv1d {
                input,
                kernels,
                bias,
                geom,
                out_channels: c_out,
                cols,
            },
            &[input, kernels, bias],
        ))
    }

    /// Transposed convolution, the adjoint of [`Tape::conv1d`] with the same
    /// hyperparameters.
    ///
    /// `input` is `[C_in, L]` or `[B, C_in, L]`, `kernels` is `[C_in, C_out, K]`
    /// and `bias` is `[C_out]`. The output length is `(L - 1) * stride + K - 2 * padding`.
    pub fn conv1d_transpose(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let (batch, c_in, len) = rank3(&in_shape).ok_or_else(|| {
            Error::InvalidShape(format!(
                "conv1d_transpose input must be [C, L] or [B, C, L], got {in_shape:?}"
            ))
        })?;
        let (k_in, c_out, kernel) = match *self.shape(kernels) {
            [i, o, k] => (i, o, k),
            ref s => {
                return Err(Error::InvalidShape(format!(
                    "conv1d_transpose kernels must be [C_in, C_out, K], got {s:?}"
                )))
            }
        };
        if k_in != c_in {
            return Err(Error::InvalidShape(format!(
                "conv1d_transpose input has {c_in} channels but kernels expect {k_in}"
            )));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::InvalidShape(format!(
                "conv1d_transpose bias must be [{c_out}], got {:?}",
                self.shape(bias)
            )));
        }
        let out_len = conv::conv1d_transpose_out_len(len, kernel, stride, padding)?;
        let geom = ConvGeom {
            batch,
            channels: c_out,
            signal: out_len,
            kernel,
            stride,
            padding,
            out: len,
        };
        let n = batch * len;
        let x_mat = conv::to_channel_major(self.data(input), batch, c_in, len);
        let mut cols = vec![T::zero(); geom.col_rows() * n];
        gemm(
            T::one(),
            MatRef::rm(self.data(kernels), c_in, geom.col_rows()).t(),
            MatRef::rm(&x_mat, c_in, n),
            T::zero(),
            &mut cols,
        );
        let mut out = vec![T::zero(); batch * c_out * out_len];
        geom.col2im_add(&cols, &mut out);
        let bias_v = self.data(bias);
        for (row, chunk) in out.chunks_mut(out_len).enumerate() {
            let bo = bias_v[row % c_out];
            chunk.iter_mut().for_each(|v| *v += bo);
        }
        let shape = batched_shape(in_shape.len() == 3, batch, &[c_out, out_len]);
        Ok(self.push_result(
            shape,
            out,
            Op::ConvTranspose1d {
                input,
                kernels,
                bias,
                geom,
                in_channels: c_in,
            },
            &[input, kernels, bias],
        ))
    }

    /// Affine map `weight * input + bias` for `[F_in]` or `[B, F_in]` inputs.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let (batch, f_in) = rank2(&in_shape).ok_or_else(|| {
            Error::InvalidShape(format!("dense input must be [F] or [B, F], got {in_shape:?}"))
        })?;
        let (f_out, w_in) = match *self.shape(weight) {
            [o, i] => (o, i),
            ref s => {
                return Err(Error::InvalidShape(format!(
                    "dense weight must be [F_out, F_in], got {s:?}"
                )))
            }
        };
        if w_in != f_in {
            return Err(Error::InvalidShape(format!(
                "dense weight expects {w_in} inputs but input has {f_in}"
            )));
        }
        if self.shape(bias) != [f_out] {
            return Err(Error::InvalidShape(format!(
                "dense bias must be [{f_out}], got {:?}",
                self.shape(bias)
            )));
        }
        let mut out: Vec<T> = self.data(bias).repeat(batch);
        gemm(
            T::one(),
            MatRef::rm(self.data(input), batch, f_in),
            MatRef::rm(self.data(weight), f_out, f_in).t(),
            T::one(),
            &mut out,
        );
        let shape = batched_shape(in_shape.len() == 2, batch, &[f_out]);
        Ok(self.push_result(
            shape,
            out,
            Op::Dense {
                input,
                weight,
                bias,
                batch,
                f_in,
                f_out,
            },
            &[input, weight, bias],
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        kind.validate()?;
        let x = self.data(input);
        let out: Vec<T> = match kind {
            Activation::LeakyRelu { alpha } => {
                let a = T::from_f64_lossy(alpha);
                x.iter().map(|&v| if v > T::zero() { v } else { a * v }).collect()
            }
            Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            Activation::Tanh => x.iter().map(|&v| v.tanh()).collect(),
        };
        let shape = self.shape(input).to_vec();
        Ok(self.push_result(shape, out, Op::Activation { input, kind }, &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(input).numel() || shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(input)
            )));
        }
        let data = self.data(input).to_vec();
        Ok(self.push_result(shape, data, Op::Reshape { input }, &[input]))
    }

    /// Appends `extra` zeros along the last axis.
    pub fn pad_right(&mut self, input: Var, extra: usize) -> Result<Var> {
        if extra == 0 {
            return Ok(input);
        }
        let shape = self.shape(input).to_vec();
        let len = *shape.last().expect("tensors have rank >= 1");
        let mut out = Vec::with_capacity(self.value(input).numel() / len * (len + extra));
        for row in self.data(input).chunks(len) {
            out.extend_from_slice(row);
            out.extend(std::iter::repeat_n(T::zero(), extra));
        }
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = len + extra;
        Ok(self.push_result(new_shape, out, Op::PadRight { input, len, extra }, &[input]))
    }

    /// Keeps the first `keep` entries along the last axis.
    pub fn crop_right(&mut self, input: Var, keep: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let len = *shape.last().expect("tensors have rank >= 1");
        if keep == 0 || keep > len {
            return Err(Error::InvalidShape(format!(
                "cannot crop last axis of {shape:?} to {keep}"
            )));
        }
        if keep == len {
            return Ok(input);
        }
        let out: Vec<T> = self
            .data(input)
            .chunks(len)
            .flat_map(|row| row[..keep].iter().copied())
            .collect();
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = keep;
        Ok(self.push_result(new_shape, out, Op::CropRight { input, len, keep }, &[input]))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let out = self.data(input).iter().map(|&v| v * factor).collect();
        let shape = self.shape(input).to_vec();
        self.push_result(shape, out, Op::Scale { input, factor }, &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::InvalidShape(format!(
                "add of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| *x + *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_result(shape, out, Op::Add { a, b }, &[a, b]))
    }

    /// Mean of squared elementwise differences, as a `[1]` tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::InvalidShape(format!(
                "mse of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let n = T::from_usize(self.value(a).numel()).unwrap();
        let sum: T = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| (*x - *y) * (*x - *y))
            .sum();
        Ok(self.push_result(vec![1], vec![sum / n], Op::Mse { a, b }, &[a, b]))
    }

    /// Binary cross-entropy of probabilities `p` against a fixed label,
    /// averaged over all elements. Probabilities are clamped into
    /// `[BCE_CLAMP, 1 - BCE_CLAMP]` first.
    pub fn bce(&mut self, p: Var, target: T) -> Result<Var> {
        if !(target == T::zero() || target == T::one()) {
            return Err(Error::InvalidArgument(format!(
                "bce target must be 0 or 1, got {target}"
            )));
        }
        let clamp = T::from_f64_lossy(BCE_CLAMP);
        let n = T::from_usize(self.value(p).numel()).unwrap();
        let sum: T = self
            .data(p)
            .iter()
            .map(|&v| {
                let q = v.max(clamp).min(T::one() - clamp);
                -(target * q.ln() + (T::one() - target) * (T::one() - q).ln())
            })
            .sum();
        Ok(self.push_result(vec![1], vec![sum / n], Op::Bce { p, target, clamp }, &[p]))
    }

    /// Accumulates `d loss / d leaf` into every reachable `requires_grad` leaf.
    ///
    /// Leaves that require a gradient but do not influence `loss` receive zeros.
    /// Calling this again without clearing adds to the existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidUse(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let end = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..end).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..end).rev() {
            if !self.nodes[idx].tensor.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = self.nodes[idx].op {
                grads[idx] = Some(g);
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
        }

        for (idx, g) in grads.into_iter().enumerate() {
            let node = &mut self.nodes[idx];
            if !matches!(node.op, Op::Leaf) || !node.tensor.requires_grad {
                continue;
            }
            match g {
                Some(g) => node.tensor.accumulate_grad(&g)?,
                None => {
                    let n = node.tensor.numel();
                    node.tensor.grad.get_or_insert_with(|| vec![T::zero(); n]);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].tensor.requires_grad
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.tensor;
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                kernels,
                bias,
                geom,
                out_channels,
                cols,
            } => {
                let c_out = *out_channels;
                let n = geom.col_cols();
                let rows = geom.col_rows();
                let mut dmat = vec![T::zero(); c_out * n];
                for b in 0..geom.batch {
                    for o in 0..c_out {
                        dmat[o * n + b * geom.out..][..geom.out]
                            .copy_from_slice(&g[(b * c_out + o) * geom.out..][..geom.out]);
                    }
                }
                if self.wants(*kernels) {
                    let dw = grad_slot(grads, *kernels, c_out * rows);
                    gemm(
                        T::one(),
                        MatRef::rm(&dmat, c_out, n),
                        MatRef::rm(cols, rows, n).t(),
                        T::one(),
                        dw,
                    );
                }
                if self.wants(*bias) {
                    let db = grad_slot(grads, *bias, c_out);
                    for (o, d) in db.iter_mut().enumerate() {
                        *d += dmat[o * n..][..n].iter().copied().sum::<T>();
                    }
                }
                if self.wants(*input) {
                    let mut dcols = vec![T::zero(); rows * n];
                    gemm(
                        T::one(),
                        MatRef::rm(self.data(*kernels), c_out, rows).t(),
                        MatRef::rm(&dmat, c_out, n),
                        T::zero(),
                        &mut dcols,
                    );
                    let dx = grad_slot(grads, *input, geom.batch * geom.channels * geom.signal);
                    geom.col2im_add(&dcols, dx);
                }
            }
            Op::ConvTranspose1d {
                input,
                kernels,
                bias,
                geom,
                in_channels,
            } => {
                let c_in = *in_channels;
                let c_out = geom.channels;
                let n = geom.col_cols();
                let rows = geom.col_rows();
                let dcols = geom.im2col(g);
                if self.wants(*kernels) {
                    let x_mat =
                        conv::to_channel_major(self.data(*input), geom.batch, c_in, geom.out);
                    let dw = grad_slot(grads, *kernels, c_in * rows);
                    gemm(
                        T::one(),
                        MatRef::rm(&x_mat, c_in, n),
                        MatRef::rm(&dcols, rows, n).t(),
                        T::one(),
                        dw,
                    );
                }
                if self.wants(*bias) {
                    let db = grad_slot(grads, *bias, c_out);
                    for (row, chunk) in g.chunks(geom.signal).enumerate() {
                        db[row % c_out] += chunk.iter().copied().sum::<T>();
                    }
                }
                if self.wants(*input) {
                    let mut dx_mat = vec![T::zero(); c_in * n];
                    gemm(
                        T::one(),
                        MatRef::rm(self.data(*kernels), c_in, rows),
                        MatRef::rm(&dcols, rows, n),
                        T::zero(),
                        &mut dx_mat,
                    );
                    let dx = grad_slot(grads, *input, geom.batch * c_in * geom.out);
                    conv::from_channel_major_add(&dx_mat, geom.batch, c_in, geom.out, dx);
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
                batch,
                f_in,
                f_out,
            } => {
                let (batch, f_in, f_out) = (*batch, *f_in, *f_out);
                if self.wants(*weight) {
                    let dw = grad_slot(grads, *weight, f_out * f_in);
                    gemm(
                        T::one(),
                        MatRef::rm(g, batch, f_out).t(),
                        MatRef::rm(self.data(*input), batch, f_in),
                        T::one(),
                        dw,
                    );
                }
                if self.wants(*bias) {
                    let db = grad_slot(grads, *bias, f_out);
                    for row in g.chunks(f_out) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                }
                if self.wants(*input) {
                    let dx = grad_slot(grads, *input, batch * f_in);
                    gemm(
                        T::one(),
                        MatRef::rm(g, batch, f_out),
                        MatRef::rm(self.data(*weight), f_out, f_in),
                        T::one(),
                        dx,
                    );
                }
            }
            Op::Activation { input, kind } => {
                let x = self.data(*input);
                let y = &out.data;
                let dx = grad_slot(grads, *input, x.len());
                match *kind {
                    Activation::LeakyRelu { alpha } => {
                        let a = T::from_f64_lossy(alpha);
                        for ((d, &xv), &gv) in dx.iter_mut().zip(x).zip(g) {
                            *d += if xv > T::zero() { gv } else { a * gv };
                        }
                    }
                    Activation::Sigmoid => {
                        for ((d, &yv), &gv) in dx.iter_mut().zip(y).zip(g) {
                            *d += gv * yv * (T::one() - yv);
                        }
                    }
                    Activation::Tanh => {
                        for ((d, &yv), &gv) in dx.iter_mut().zip(y).zip(g) {
                            *d += gv * (T::one() - yv * yv);
                        }
                    }
                }
            }
            Op::Reshape { input } => {
                let dx = grad_slot(grads, *input, g.len());
                add_into(dx, g);
            }
            Op::PadRight { input, len, extra } => {
                let dx = grad_slot(grads, *input, g.len() / (len + extra) * len);
                for (d, s) in dx.chunks_mut(*len).zip(g.chunks(len + extra)) {
                    add_into(d, &s[..*len]);
                }
            }
            Op::CropRight { input, len, keep } => {
                let dx = grad_slot(grads, *input, g.len() / keep * len);
                for (d, s) in dx.chunks_mut(*len).zip(g.chunks(*keep)) {
                    add_into(&mut d[..*keep], s);
                }
            }
            Op::Scale { input, factor } => {
                let dx = grad_slot(grads, *input, g.len());
                for (d, v) in dx.iter_mut().zip(g) {
                    *d += *v * *factor;
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.wants(*v) {
                        add_into(grad_slot(grads, *v, g.len()), g);
                    }
                }
            }
            Op::Mse { a, b } => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                let scale = T::from_f64_lossy(2.0) * g[0] / T::from_usize(xa.len()).unwrap();
                if self.wants(*a) {
                    let da = grad_slot(grads, *a, xa.len());
                    for ((d, x), y) in da.iter_mut().zip(xa).zip(xb) {
                        *d += scale * (*x - *y);
                    }
                }
                if self.wants(*b) {
                    let db = grad_slot(grads, *b, xb.len());
                    for ((d, x), y) in db.iter_mut().zip(xa).zip(xb) {
                        *d -= scale * (*x - *y);
                    }
                }
            }
            Op::Bce { p, target, clamp } => {
                let xs = self.data(*p);
                let scale = g[0] / T::from_usize(xs.len()).unwrap();
                let (t, c) = (*target, *clamp);
                let dp = grad_slot(grads, *p, xs.len());
                for (d, &v) in dp.iter_mut().zip(xs) {
                    // the clamp is flat outside its range
                    if v >= c && v <= T::one() - c {
                        *d += scale * (-t / v + (T::one() - t) / (T::one() - v));
                    }
                }
            }
        }
    }
}

fn grad_slot<T: Real>(grads: &mut [Option<Vec<T>>], var: Var, len: usize) -> &mut [T] {
    grads[var.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_sliding_difference() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf(t(&[1, 1, 3], &[1.0, 0.0, -1.0]));
        let b = tape.leaf(t(&[1], &[0.0]));
        let y = tape.conv1d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2]);
        assert_eq!(tape.value(y).data(), &[-2.0, -2.0]);
    }

    #[test]
    fn conv1d_identity_kernel_and_zero_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 1], &[5.0]));
        let w = tape.leaf(t(&[1, 1, 1], &[1.0]));
        let b = tape.leaf(t(&[1], &[0.0]));
        let y = tape.conv1d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0]);

        let x = tape.leaf(t(&[2, 5], &[1.0, -2.0, 3.0, 4.0, 0.5, 7.0, 1.0, 1.0, 2.0, 9.0]));
        let w = tape.leaf(Tensor::zeros(vec![3, 2, 2]).unwrap());
        let b = tape.leaf(Tensor::zeros(vec![3]).unwrap());
        let y = tape.conv1d(x, w, b, 2, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv1d_shape_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 4], &[0.0; 8]));
        let w = tape.leaf(t(&[1, 1, 3], &[0.0; 3]));
        let b = tape.leaf(t(&[1], &[0.0]));
        assert!(matches!(tape.conv1d(x, w, b, 1, 0), Err(Error::InvalidShape(_))));

        let x = tape.leaf(t(&[1, 2], &[0.0; 2]));
        let w = tape.leaf(t(&[1, 1, 3], &[0.0; 3]));
        assert!(matches!(tape.conv1d(x, w, b, 1, 0), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn conv1d_transpose_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 2], &[1.0, 1.0]));
        let w = tape.leaf(t(&[1, 1, 2], &[1.0, 1.0]));
        let b = tape.leaf(t(&[1], &[0.0]));
        let y = tape.conv1d_transpose(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 1.0]);

        let x = tape.leaf(t(&[1, 1], &[1.0]));
        let w = tape.leaf(t(&[1, 1, 3], &[1.0, 0.0, 0.0]));
        let y = tape.conv1d_transpose(x, w, b, 2, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0, 0.0]);

        // zero input leaves only the bias
        let x = tape.leaf(t(&[2, 3], &[0.0; 6]));
        let w = tape.leaf(t(&[2, 2, 3], &[0.3; 12]));
        let b = tape.leaf(t(&[2], &[1.5, -0.5]));
        let y = tape.conv1d_transpose(x, w, b, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 5]);
        assert_eq!(&tape.value(y).data()[..5], &[1.5; 5]);
        assert_eq!(&tape.value(y).data()[5..], &[-0.5; 5]);
    }

    #[test]
    fn dense_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[2.0, 3.0]));
        let w = tape.leaf(t(&[1, 2], &[1.0, 1.0]));
        let b = tape.leaf(t(&[1], &[1.0]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[6.0]);

        let eye = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zb = tape.leaf(t(&[2], &[0.0, 0.0]));
        let y = tape.dense(x, eye, zb).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 3.0]);

        let zw = tape.leaf(t(&[2, 2], &[0.0; 4]));
        let bb = tape.leaf(t(&[2], &[-1.0, 4.0]));
        let y = tape.dense(x, zw, bb).unwrap();
        assert_eq!(tape.value(y).data(), &[-1.0, 4.0]);

        let bad = tape.leaf(t(&[1, 3], &[0.0; 3]));
        assert!(matches!(tape.dense(x, bad, b), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn activation_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1], &[0.0]));
        let s = tape.activation(x, Activation::Sigmoid).unwrap();
        let th = tape.activation(x, Activation::Tanh).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
        assert_eq!(tape.value(th).data(), &[0.0]);
        let x = tape.leaf(t(&[1], &[-2.0]));
        let l = tape.activation(x, Activation::leaky_relu(0.2)).unwrap();
        assert!((tape.value(l).data()[0] + 0.4).abs() < 1e-12);
        assert!(tape.activation(x, Activation::leaky_relu(0.0)).is_err());

        let big = tape.leaf(t(&[2], &[-800.0, 800.0]));
        let s = tape.activation(big, Activation::Sigmoid).unwrap();
        assert!(tape.value(s).is_finite());
    }

    #[test]
    fn mse_and_bce_values() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[2], &[0.0, 0.0]));
        let b = tape.leaf(t(&[2], &[2.0, 0.0]));
        let l = tape.mse(a, b).unwrap();
        assert_eq!(tape.value(l).data(), &[2.0]);
        let l = tape.mse(a, a).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
        let a = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let b = tape.leaf(t(&[3], &[1.0, 2.0, 4.0]));
        let l = tape.mse(a, b).unwrap();
        assert!((tape.value(l).data()[0] - 1.0 / 3.0).abs() < 1e-15);

        let p = tape.leaf(t(&[1], &[0.5]));
        let l = tape.bce(p, 1.0).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
        let p = tape.leaf(t(&[1], &[1.0 - BCE_CLAMP]));
        let l = tape.bce(p, 1.0).unwrap();
        assert!(tape.value(l).data()[0] <= 2.0 * BCE_CLAMP);
        let p = tape.leaf(t(&[1], &[0.0]));
        let l = tape.bce(p, 1.0).unwrap();
        assert!(tape.value(l).data()[0].is_finite());
    }

    #[test]
    fn backward_on_square() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(t(&[1], &[3.0]).with_grad());
        let zero = tape.constant(vec![1], vec![0.0]).unwrap();
        let l = tape.mse(w, zero).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[6.0]);
        // accumulates without reset
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[12.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(t(&[2], &[3.0, 1.0]).with_grad());
        let unused = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]).with_grad());
        let zero = tape.constant(vec![2], vec![0.0, 0.0]).unwrap();
        let l = tape.mse(w, zero).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(t(&[2], &[3.0, 1.0]).with_grad());
        assert!(matches!(tape.backward(w), Err(Error::InvalidUse(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(t(&[2], &[3.0, 1.0]).with_grad());
        let y = tape.scale(w, 2.0);
        let d = tape.detach(y);
        let zero = tape.constant(vec![2], vec![0.0, 0.0]).unwrap();
        let l = tape.mse(d, zero).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn pad_and_crop_roundtrip() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 1, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let p = tape.pad_right(x, 2).unwrap();
        assert_eq!(tape.value(p).shape(), &[2, 1, 5]);
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 0.0, 0.0, 4.0, 5.0, 6.0, 0.0, 0.0]);
        let c = tape.crop_right(p, 3).unwrap();
        assert_eq!(tape.value(c).data(), tape.value(x).data());
    }
}
