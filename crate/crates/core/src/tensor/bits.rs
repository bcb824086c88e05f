use super::{DenseTensor, Dims};
use crate::error::{Error, Result};

/// Sign-binarized NCHW tensor packed into 64-bit words.
///
/// Each sample's flattened `(c, h, w)` elements (channel-major, i.e. the
/// same order as the dense buffer) are packed LSB-first into
/// `words_per_sample` words. Bit 1 encodes `+1`, bit 0 encodes `-1`. The
/// trailing `pad_bits` bits of every sample are always zero and are masked
/// out of every popcount.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitTensor {
    dims: Dims,
    words_per_sample: usize,
    words: Vec<u64>,
}

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// Mask of the valid bits in the last word of a row holding `bits` bits.
#[inline]
pub(crate) fn tail_mask(bits: usize) -> u64 {
    match bits % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// Reads `len <= 64` bits starting at bit offset `off`.
#[inline]
fn read_bits(src: &[u64], off: usize, len: usize) -> u64 {
    debug_assert!(len <= 64 && len > 0);
    let word = off / 64;
    let shift = off % 64;
    let mut v = src[word] >> shift;
    if shift != 0 && shift + len > 64 {
        v |= src[word + 1] << (64 - shift);
    }
    if len == 64 {
        v
    } else {
        v & ((1u64 << len) - 1)
    }
}

/// Appends bit ranges into a word buffer without unpacking.
struct BitWriter<'a> {
    out: &'a mut Vec<u64>,
    len: usize,
}

impl<'a> BitWriter<'a> {
    fn new(out: &'a mut Vec<u64>) -> Self {
        BitWriter { out, len: 0 }
    }

    fn push(&mut self, value: u64, n: usize) {
        if n == 0 {
            return;
        }
        let shift = self.len % 64;
        if shift == 0 {
            self.out.push(value);
        } else {
            *self.out.last_mut().unwrap() |= value << shift;
            if shift + n > 64 {
                self.out.push(value >> (64 - shift));
            }
        }
        self.len += n;
    }

    fn copy(&mut self, src: &[u64], off: usize, len: usize) {
        let mut done = 0;
        while done < len {
            let n = (len - done).min(64);
            self.push(read_bits(src, off + done, n), n);
            done += n;
        }
    }

    /// Zero-fills to the next word boundary.
    fn align(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            self.len += 64 - r;
        }
    }
}

impl BitTensor {
    /// Wraps pre-packed words, checking the word count and that padding bits are zero.
    pub fn from_words(dims: Dims, words: Vec<u64>) -> Result<Self> {
        let wps = words_for(dims.sample_len());
        if words.len() != wps * dims.n {
            return Err(Error::InvalidTensor(format!(
                "dims {dims} need {} packed words, got {}",
                wps * dims.n,
                words.len()
            )));
        }
        let mask = tail_mask(dims.sample_len());
        if wps > 0 {
            for n in 0..dims.n {
                if words[n * wps + wps - 1] & !mask != 0 {
                    return Err(Error::InvalidTensor(format!(
                        "padding bits set in sample {n}"
                    )));
                }
            }
        }
        Ok(BitTensor {
            dims,
            words_per_sample: wps,
            words,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn words_per_sample(&self) -> usize {
        self.words_per_sample
    }

    /// Trailing zero bits at the end of each packed sample.
    pub fn pad_bits(&self) -> usize {
        self.words_per_sample * 64 - self.dims.sample_len()
    }

    /// Packed words of sample `n`.
    pub fn row(&self, n: usize) -> &[u64] {
        &self.words[n * self.words_per_sample..(n + 1) * self.words_per_sample]
    }

    /// Bit at flat position `idx` of sample `n`.
    #[inline]
    pub fn bit(&self, n: usize, idx: usize) -> bool {
        let w = self.words[n * self.words_per_sample + idx / 64];
        (w >> (idx % 64)) & 1 == 1
    }

    #[inline]
    pub fn value(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        let idx = (c * self.dims.h + h) * self.dims.w + w;
        if self.bit(n, idx) {
            1.0
        } else {
            -1.0
        }
    }

    /// Expands to a dense ±1 tensor.
    pub fn unpack(&self) -> DenseTensor {
        let len = self.dims.sample_len();
        let mut data = Vec::with_capacity(self.dims.numel());
        for n in 0..self.dims.n {
            for i in 0..len {
                data.push(if self.bit(n, i) { 1.0 } else { -1.0 });
            }
        }
        DenseTensor::from_raw(self.dims, data)
    }

    /// Bit-domain twin of [`super::repeat_channels`]: concatenates each
    /// sample's channel block `times` times, copying whole words where the
    /// alignment allows.
    pub fn repeat_channels(&self, times: usize) -> Result<BitTensor> {
        if times == 0 {
            return Err(Error::InvalidConfig(
                "repeat times must be at least 1".into(),
            ));
        }
        let out_dims = self.dims.with_c(self.dims.c * times);
        let len = self.dims.sample_len();
        let mut words = Vec::with_capacity(words_for(len * times) * self.dims.n);
        let mut wr = BitWriter::new(&mut words);
        for n in 0..self.dims.n {
            let row = self.row(n);
            for _ in 0..times {
                wr.copy(row, 0, len);
            }
            wr.align();
        }
        BitTensor::from_words(out_dims, words)
    }

    /// Reinterprets a packed `(c_out, c_in, kh, kw)` kernel as
    /// `(c_out / beta, c_in * beta, kh, kw)`. Rows are re-packed so each new
    /// row stays word aligned.
    pub fn reshape_kernel(&self, spec: &super::ConvSpec) -> Result<BitTensor> {
        spec.validate()?;
        if self.dims != spec.kernel_dims() {
            return Err(Error::shape(format!(
                "kernel dims {} do not match spec {}",
                self.dims,
                spec.kernel_dims()
            )));
        }
        if spec.beta == 1 {
            return Ok(self.clone());
        }
        let out_dims = spec.reshaped_kernel_dims();
        let len = self.dims.sample_len();
        let mut words = Vec::with_capacity(words_for(out_dims.sample_len()) * out_dims.n);
        let mut wr = BitWriter::new(&mut words);
        for o in 0..out_dims.n {
            for b in 0..spec.beta {
                wr.copy(self.row(o * spec.beta + b), 0, len);
            }
            wr.align();
        }
        BitTensor::from_words(out_dims, words)
    }
}

/// Packs `x` with bit = 1 iff the value is `>= 0`.
pub fn sign_binarize(x: &DenseTensor) -> BitTensor {
    let dims = x.dims();
    let len = dims.sample_len();
    let wps = words_for(len);
    let mut words = vec![0u64; wps * dims.n];
    for n in 0..dims.n {
        let sample = x.sample(n);
        let row = &mut words[n * wps..(n + 1) * wps];
        for (i, &v) in sample.iter().enumerate() {
            if v >= 0.0 {
                row[i / 64] |= 1u64 << (i % 64);
            }
        }
    }
    BitTensor {
        dims,
        words_per_sample: wps,
        words,
    }
}
