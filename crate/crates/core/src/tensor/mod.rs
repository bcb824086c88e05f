//! Dense and bit-packed NCHW tensors plus the channel-replication primitives.
//!
//! Every tensor is rank 4 in `(n, c, h, w)` order. Weights use the same
//! layout with `(c_out, c_in, kh, kw)`. Flattened activations produced by a
//! `Flatten` node are represented as `(n, features, 1, 1)`.
//!
//! Binarization maps `x >= 0` to `+1` and `x < 0` to `-1`. In particular
//! **sign(0) = +1** everywhere in this crate: in [`sign_binarize`], in the
//! dense sign used by training, and in the XNOR convolution.

mod bits;
pub mod blob;

pub use bits::{sign_binarize, BitTensor};

use std::fmt;

use crate::error::{Error, Result};

/// Rank-4 tensor extents in NCHW order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one sample, i.e. `c * h * w`.
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_c(self, c: usize) -> Self {
        Dims { c, ..self }
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl std::str::FromStr for Dims {
    type Err = Error;

    /// Parses `N,C,H,W`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidConfig(format!("bad dims '{s}': {e}")))?;
        match parts.as_slice() {
            [n, c, h, w] => Ok(Dims::new(*n, *c, *h, *w)),
            _ => Err(Error::InvalidConfig(format!(
                "expected four comma-separated dims N,C,H,W, got '{s}'"
            ))),
        }
    }
}

/// Real-valued NCHW tensor. Values are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Dims,
    data: Vec<f32>,
}

impl DenseTensor {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.numel() {
            return Err(Error::InvalidTensor(format!(
                "dims {dims} need {} values, got {}",
                dims.numel(),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(DenseTensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        DenseTensor {
            dims,
            data: vec![0.0; dims.numel()],
        }
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        assert!(value.is_finite());
        DenseTensor {
            dims,
            data: vec![value; dims.numel()],
        }
    }

    /// Builds a tensor from an index function; panics if it yields a non-finite value.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.numel());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for h in 0..dims.h {
                    for w in 0..dims.w {
                        let v = f(n, c, h, w);
                        assert!(v.is_finite(), "from_fn produced {v}");
                        data.push(v);
                    }
                }
            }
        }
        DenseTensor { dims, data }
    }

    /// Internal constructor for kernels that only produce finite values from finite inputs.
    pub(crate) fn from_raw(dims: Dims, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), dims.numel());
        DenseTensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.dims.index(n, c, h, w)]
    }

    pub fn sample(&self, n: usize) -> &[f32] {
        let len = self.dims.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Same buffer, new dims header. Element counts must agree.
    pub fn reshape(self, dims: Dims) -> Result<Self> {
        if dims.numel() != self.dims.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {} into {}",
                self.dims, dims
            )));
        }
        Ok(DenseTensor {
            dims,
            data: self.data,
        })
    }

    /// Elementwise sign with sign(0) = +1, kept in the dense domain.
    pub fn signum(&self) -> DenseTensor {
        DenseTensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| sign(v)).collect(),
        }
    }

    /// Channel slice `[start, start + len)` of every sample.
    pub fn channel_block(&self, start: usize, len: usize) -> Result<DenseTensor> {
        if start + len > self.dims.c {
            return Err(Error::shape(format!(
                "channel block {start}..{} out of range for {}",
                start + len,
                self.dims
            )));
        }
        let plane = self.dims.plane();
        let mut data = Vec::with_capacity(self.dims.n * len * plane);
        for n in 0..self.dims.n {
            let base = self.dims.index(n, start, 0, 0);
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(DenseTensor::from_raw(self.dims.with_c(len), data))
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> Option<f32> {
        if self.dims != other.dims {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max),
        )
    }
}

#[inline]
pub fn sign(v: f32) -> f32 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Convolution hyperparameters.
///
/// `c_in`/`c_out` always describe the un-replicated layer. With `beta > 1`
/// the executed kernel is `(c_out / beta, c_in * beta, kh, kw)`, the layer
/// consumes `c_in * beta` channels and, after replication, emits
/// `c_out * beta` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub beta: usize,
    pub binary: bool,
}

impl ConvSpec {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            c_in,
            c_out,
            kh: k,
            kw: k,
            stride,
            padding,
            beta: 1,
            binary: false,
        }
    }

    pub fn binary(mut self) -> Self {
        self.binary = true;
        self
    }

    pub fn with_beta(mut self, beta: usize) -> Self {
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.kh == 0 || self.kw == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv extents must be positive: {self:?}"
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig(
                "conv stride must be at least 1".into(),
            ));
        }
        if self.beta == 0 {
            return Err(Error::InvalidConfig("beta must be at least 1".into()));
        }
        if !self.c_out.is_multiple_of(self.beta) {
            return Err(Error::NonDivisibleChannels {
                channels: self.c_out,
                beta: self.beta,
                node: None,
            });
        }
        Ok(())
    }

    /// Original kernel dims `(c_out, c_in, kh, kw)`.
    pub fn kernel_dims(&self) -> Dims {
        Dims::new(self.c_out, self.c_in, self.kh, self.kw)
    }

    /// Executed kernel dims `(c_out / beta, c_in * beta, kh, kw)`.
    pub fn reshaped_kernel_dims(&self) -> Dims {
        Dims::new(
            self.c_out / self.beta,
            self.c_in * self.beta,
            self.kh,
            self.kw,
        )
    }

    /// The plain (beta = 1) convolution that is actually executed.
    pub fn executed(&self) -> ConvSpec {
        ConvSpec {
            c_in: self.c_in * self.beta,
            c_out: self.c_out / self.beta,
            beta: 1,
            ..*self
        }
    }

    pub fn input_channels(&self) -> usize {
        self.c_in * self.beta
    }

    /// Channels produced by the convolution itself, before replication.
    pub fn conv_output_channels(&self) -> usize {
        self.c_out / self.beta
    }

    /// Channels after the beta^2 replication.
    pub fn output_channels(&self) -> usize {
        self.c_out * self.beta
    }

    /// Number of copies the output is replicated into.
    pub fn replication(&self) -> usize {
        self.beta * self.beta
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kh || pw < self.kw {
            return Err(Error::shape(format!(
                "kernel {}x{} larger than padded input {ph}x{pw}",
                self.kh, self.kw
            )));
        }
        Ok((
            (ph - self.kh) / self.stride + 1,
            (pw - self.kw) / self.stride + 1,
        ))
    }

    /// Weight count, identical with and without replication.
    pub fn params(&self) -> u64 {
        (self.c_out * self.c_in * self.kh * self.kw) as u64
    }

    /// Multiply-accumulates per output pixel of the executed convolution.
    pub fn macs_per_pixel(&self) -> u64 {
        let e = self.executed();
        (e.c_out * e.c_in * e.kh * e.kw) as u64
    }
}

/// Concatenates `times` copies of the channel axis: output channel `j`
/// holds input channel `j mod c`.
pub fn repeat_channels(x: &DenseTensor, times: usize) -> Result<DenseTensor> {
    if times == 0 {
        return Err(Error::InvalidConfig(
            "repeat times must be at least 1".into(),
        ));
    }
    let d = x.dims();
    let len = d.sample_len();
    let mut data = Vec::with_capacity(d.numel() * times);
    for n in 0..d.n {
        let s = &x.data()[n * len..(n + 1) * len];
        for _ in 0..times {
            data.extend_from_slice(s);
        }
    }
    Ok(DenseTensor::from_raw(d.with_c(d.c * times), data))
}

/// Reinterprets a `(c_out, c_in, kh, kw)` kernel as
/// `(c_out / beta, c_in * beta, kh, kw)` over the same row-major buffer.
pub fn reshape_kernel(w: &DenseTensor, spec: &ConvSpec) -> Result<DenseTensor> {
    spec.validate()?;
    if w.dims() != spec.kernel_dims() {
        return Err(Error::shape(format!(
            "kernel dims {} do not match spec {}",
            w.dims(),
            spec.kernel_dims()
        )));
    }
    w.clone().reshape(spec.reshaped_kernel_dims())
}
