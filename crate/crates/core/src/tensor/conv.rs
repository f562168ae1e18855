use super::Real;
use crate::error::{Error, Result};

/// Output length of a strided, zero-padded 1D convolution.
pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidGeometry(format!(
            "kernel ({kernel}) and stride ({stride}) must be positive"
        )));
    }
    let padded = len + 2 * padding;
    if kernel > padded {
        return Err(Error::InvalidGeometry(format!(
            "kernel {kernel} longer than padded input {padded} (length {len}, padding {padding})"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output length of the transposed convolution with the same hyperparameters.
pub fn conv1d_transpose_out_len(
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if kernel == 0 || stride == 0 || len == 0 {
        return Err(Error::InvalidGeometry(format!(
            "length ({len}), kernel ({kernel}) and stride ({stride}) must be positive"
        )));
    }
    let full = (len - 1) * stride + kernel;
    if full <= 2 * padding {
        return Err(Error::InvalidGeometry(format!(
            "padding {padding} leaves no output (length {len}, kernel {kernel}, stride {stride})"
        )));
    }
    Ok(full - 2 * padding)
}

/// Geometry of a forward convolution over a batch: `signal` is the input
/// length and `out` the number of window positions.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub channels: usize,
    pub signal: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.batch * self.out
    }

    /// Input position read by window `t` at tap `k`, if not in the zero padding.
    #[inline]
    fn source(&self, t: usize, k: usize) -> Option<usize> {
        let pos = t * self.stride + k;
        if pos < self.padding || pos - self.padding >= self.signal {
            None
        } else {
            Some(pos - self.padding)
        }
    }

    /// Unfolds `x[batch][channel][signal]` into a `(channels*kernel) x (batch*out)` matrix.
    pub fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.batch * self.channels * self.signal);
        let cols = self.col_cols();
        let mut out = vec![T::zero(); self.col_rows() * cols];
        for c in 0..self.channels {
            for k in 0..self.kernel {
                let row = &mut out[(c * self.kernel + k) * cols..][..cols];
                for b in 0..self.batch {
                    let src = &x[(b * self.channels + c) * self.signal..][..self.signal];
                    let dst = &mut row[b * self.out..][..self.out];
                    for (t, d) in dst.iter_mut().enumerate() {
                        if let Some(p) = self.source(t, k) {
                            *d = src[p];
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`ConvGeom::im2col`]: folds columns back, summing overlaps into `x`.
    pub fn col2im_add<T: Real>(&self, cols_mat: &[T], x: &mut [T]) {
        debug_assert_eq!(x.len(), self.batch * self.channels * self.signal);
        let cols = self.col_cols();
        for c in 0..self.channels {
            for k in 0..self.kernel {
                let row = &cols_mat[(c * self.kernel + k) * cols..][..cols];
                for b in 0..self.batch {
                    let dst = &mut x[(b * self.channels + c) * self.signal..][..self.signal];
                    let src = &row[b * self.out..][..self.out];
                    for (t, s) in src.iter().enumerate() {
                        if let Some(p) = self.source(t, k) {
                            dst[p] += *s;
                        }
                    }
                }
            }
        }
    }
}

/// `[batch][channels][len]` to `[channels][batch*len]`.
pub(crate) fn to_channel_major<T: Real>(x: &[T], batch: usize, channels: usize, len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[c * batch * len + b * len..][..len]
                .copy_from_slice(&x[(b * channels + c) * len..][..len]);
        }
    }
    out
}

/// Inverse of [`to_channel_major`], adding into `out`.
pub(crate) fn from_channel_major_add<T: Real>(
    m: &[T],
    batch: usize,
    channels: usize,
    len: usize,
    out: &mut [T],
) {
    for b in 0..batch {
        for c in 0..channels {
            let src = &m[c * batch * len + b * len..][..len];
            let dst = &mut out[(b * channels + c) * len..][..len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }
}
