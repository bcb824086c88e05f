//! Convolution execution: a dense reference path, the XNOR/popcount fast
//! path, replicated convolution and the quantization-level count.
//!
//! Zero padding in the binary domain contributes nothing: padded window
//! positions are masked out of both the popcount and the window size, so
//! `2 * popcount(xnor & mask) - popcount(mask)` equals the dense dot product
//! of the ±1 tensors with real zero padding. There is no per-channel
//! scaling factor; scaling is left to the batch-norm node that follows.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{repeat_channels, reshape_kernel, BitTensor, ConvSpec, DenseTensor, Dims};

fn check_operands(x: Dims, w: Dims, spec: &ConvSpec) -> Result<Dims> {
    spec.validate()?;
    if spec.beta != 1 {
        return Err(Error::InvalidConfig(
            "plain convolution called with beta > 1; use rep_conv".into(),
        ));
    }
    if w != spec.kernel_dims() {
        return Err(Error::shape(format!(
            "kernel dims {w} do not match spec {}",
            spec.kernel_dims()
        )));
    }
    if x.c != spec.c_in {
        return Err(Error::shape(format!(
            "input has {} channels, spec expects {}",
            x.c, spec.c_in
        )));
    }
    let (oh, ow) = spec.out_hw(x.h, x.w)?;
    Ok(Dims::new(x.n, spec.c_out, oh, ow))
}

/// Cross-correlation with zero padding over real values.
pub fn conv2d_dense(x: &DenseTensor, w: &DenseTensor, spec: &ConvSpec) -> Result<DenseTensor> {
    let od = check_operands(x.dims(), w.dims(), spec)?;
    let xd = x.dims();
    let (xs, ws) = (x.data(), w.data());
    let k_len = spec.c_in * spec.kh * spec.kw;
    let mut out = vec![0.0f32; od.numel()];
    out.par_chunks_mut(od.plane())
        .enumerate()
        .for_each(|(plane_idx, plane)| {
            let (n, o) = (plane_idx / od.c, plane_idx % od.c);
            let wrow = &ws[o * k_len..(o + 1) * k_len];
            for oy in 0..od.h {
                for ox in 0..od.w {
                    let mut acc = 0.0f32;
                    for i in 0..spec.c_in {
                        for ky in 0..spec.kh {
                            let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                            if iy < 0 || iy >= xd.h as isize {
                                continue;
                            }
                            for kx in 0..spec.kw {
                                let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                if ix < 0 || ix >= xd.w as isize {
                                    continue;
                                }
                                acc += xs[xd.index(n, i, iy as usize, ix as usize)]
                                    * wrow[(i * spec.kh + ky) * spec.kw + kx];
                            }
                        }
                    }
                    plane[oy * od.w + ox] = acc;
                }
            }
        });
    Ok(DenseTensor::from_raw(od, out))
}

/// XNOR/popcount convolution of packed ±1 operands. Output values are integers.
pub fn conv2d_xnor(x: &BitTensor, w: &BitTensor, spec: &ConvSpec) -> Result<DenseTensor> {
    let od = check_operands(x.dims(), w.dims(), spec)?;
    let xd = x.dims();
    let k_len = spec.c_in * spec.kh * spec.kw;
    let k_words = k_len.div_ceil(64);
    debug_assert_eq!(k_words, w.words_per_sample());
    let pixels = od.h * od.w;

    // One window per (sample, output pixel); each produces c_out outputs.
    let per_pixel: Vec<Vec<f32>> = (0..od.n * pixels)
        .into_par_iter()
        .map(|job| {
            let (n, p) = (job / pixels, job % pixels);
            let (oy, ox) = (p / od.w, p % od.w);
            let mut win = vec![0u64; k_words];
            let mut mask = vec![0u64; k_words];
            let mut bit = 0usize;
            for i in 0..spec.c_in {
                for ky in 0..spec.kh {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    for kx in 0..spec.kw {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if iy >= 0 && iy < xd.h as isize && ix >= 0 && ix < xd.w as isize {
                            let src = (i * xd.h + iy as usize) * xd.w + ix as usize;
                            mask[bit / 64] |= 1u64 << (bit % 64);
                            if x.bit(n, src) {
                                win[bit / 64] |= 1u64 << (bit % 64);
                            }
                        }
                        bit += 1;
                    }
                }
            }
            let valid: u32 = mask.iter().map(|m| m.count_ones()).sum();
            (0..spec.c_out)
                .map(|o| {
                    let wrow = w.row(o);
                    let matches: u32 = win
                        .iter()
                        .zip(wrow)
                        .zip(&mask)
                        .map(|((a, b), m)| (!(a ^ b) & m).count_ones())
                        .sum();
                    (2 * matches as i64 - valid as i64) as f32
                })
                .collect()
        })
        .collect();

    let mut out = vec![0.0f32; od.numel()];
    for (job, vals) in per_pixel.into_iter().enumerate() {
        let (n, p) = (job / pixels, job % pixels);
        for (o, v) in vals.into_iter().enumerate() {
            out[(n * od.c + o) * pixels + p] = v;
        }
    }
    Ok(DenseTensor::from_raw(od, out))
}

/// Output of a replicated convolution together with the spec that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvResult {
    pub output: DenseTensor,
    pub spec: ConvSpec,
}

impl ConvResult {
    /// Window size `c_in * beta * kh * kw` of the executed convolution.
    pub fn window(&self) -> usize {
        self.spec.input_channels() * self.spec.kh * self.spec.kw
    }

    /// For binary results without padding: every value lies in `[-N, N]`
    /// and has the parity of `N`.
    pub fn levels_consistent(&self) -> bool {
        let n = self.window() as i64;
        self.output.data().iter().all(|&v| {
            let iv = v as i64;
            iv as f32 == v && iv.abs() <= n && (iv - n).rem_euclid(2) == 0
        })
    }
}

fn executed_kernel(w_dims: Dims, spec: &ConvSpec) -> Result<bool> {
    if w_dims == spec.reshaped_kernel_dims() {
        Ok(false)
    } else if w_dims == spec.kernel_dims() {
        Ok(true)
    } else {
        Err(Error::shape(format!(
            "kernel dims {w_dims} match neither {} nor reshaped {}",
            spec.kernel_dims(),
            spec.reshaped_kernel_dims()
        )))
    }
}

/// Replicated convolution on real values: reshape the kernel to
/// `(c_out/beta, c_in*beta, kh, kw)`, convolve the `c_in*beta`-channel input
/// and repeat the result `beta^2` times along channels.
///
/// `w` may be given in original or already reshaped dims.
pub fn rep_conv(x: &DenseTensor, w: &DenseTensor, spec: &ConvSpec) -> Result<ConvResult> {
    spec.validate()?;
    let kernel = if executed_kernel(w.dims(), spec)? {
        reshape_kernel(w, spec)?
    } else {
        w.clone()
    };
    let y = conv2d_dense(x, &kernel, &spec.executed())?;
    Ok(ConvResult {
        output: repeat_channels(&y, spec.replication())?,
        spec: *spec,
    })
}

/// Binary replicated convolution via XNOR/popcount.
pub fn rep_conv_xnor(x: &BitTensor, w: &BitTensor, spec: &ConvSpec) -> Result<ConvResult> {
    spec.validate()?;
    let kernel = if executed_kernel(w.dims(), spec)? {
        w.reshape_kernel(spec)?
    } else {
        w.clone()
    };
    let y = conv2d_xnor(x, &kernel, &spec.executed())?;
    Ok(ConvResult {
        output: repeat_channels(&y, spec.replication())?,
        spec: *spec,
    })
}

/// Distinct values a binary convolution output can take: the window size of
/// the executed convolution plus one. With replication the executed
/// convolution sees `c_in * beta` input channels.
pub fn quantization_levels(spec: &ConvSpec) -> usize {
    spec.input_channels() * spec.kh * spec.kw + 1
}
