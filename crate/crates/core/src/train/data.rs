//! Labelled image datasets for the trainer.
//!
//! Two file formats are read:
//!
//! * `RBDS`: magic `RBDS`, then u32 LE `count, channels, height, width,
//!   classes`, then per sample one u8 label followed by
//!   `channels*height*width` f32 LE pixels in CHW order.
//! * CIFAR-10 binary batches: records of one label byte and 3072 RGB
//!   bytes (32x32, channel-major). Pixels are scaled to `[0, 1]`.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Dims};

const MAGIC: &[u8; 4] = b"RBDS";
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample: Dims,
    classes: usize,
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    /// `sample` gives the per-sample dims; its `n` is ignored.
    pub fn new(sample: Dims, classes: usize, pixels: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        let sample = Dims::new(1, sample.c, sample.h, sample.w);
        if classes == 0 {
            return Err(Error::Dataset("dataset needs at least one class".into()));
        }
        if pixels.len() != labels.len() * sample.numel() {
            return Err(Error::Dataset(format!(
                "{} pixels do not make {} samples of {sample}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::Dataset(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite pixel value".into()));
        }
        Ok(Dataset {
            sample,
            classes,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Dims of one sample, with `n = 1`.
    pub fn sample_dims(&self) -> Dims {
        self.sample
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Stacks the given samples into one batch.
    pub fn batch(&self, indices: &[usize]) -> (DenseTensor, Vec<usize>) {
        let len = self.sample.numel();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.pixels[i * len..(i + 1) * len]);
        }
        let d = Dims::new(indices.len(), self.sample.c, self.sample.h, self.sample.w);
        (
            DenseTensor::new(d, data).expect("validated pixels"),
            indices.iter().map(|i| self.labels[*i]).collect(),
        )
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for v in [
            self.len(),
            self.sample.c,
            self.sample.h,
            self.sample.w,
            self.classes,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let len = self.sample.numel();
        for (i, l) in self.labels.iter().enumerate() {
            out.push(*l as u8);
            for v in &self.pixels[i * len..(i + 1) * len] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(MAGIC) {
            return decode_rbds(bytes);
        }
        if !bytes.is_empty() && bytes.len().is_multiple_of(CIFAR_RECORD) {
            return decode_cifar(bytes);
        }
        Err(Error::Dataset(
            "unrecognized dataset: expected RBDS magic or CIFAR-10 binary records".into(),
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.classes > 256 {
            return Err(Error::Dataset("RBDS labels are single bytes".into()));
        }
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)
            .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}

fn decode_rbds(bytes: &[u8]) -> Result<Dataset> {
    let field = |i: usize| -> Result<usize> {
        let b = bytes
            .get(4 + 4 * i..8 + 4 * i)
            .ok_or_else(|| Error::Dataset("truncated RBDS header".into()))?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    };
    let (count, c, h, w, classes) = (field(0)?, field(1)?, field(2)?, field(3)?, field(4)?);
    let len = c * h * w;
    let body = &bytes[24..];
    let record = 1 + 4 * len;
    if body.len() != count * record {
        return Err(Error::Dataset(format!(
            "RBDS body has {} bytes, header promises {count} records of {record}",
            body.len()
        )));
    }
    let mut pixels = Vec::with_capacity(count * len);
    let mut labels = Vec::with_capacity(count);
    for r in body.chunks_exact(record) {
        labels.push(r[0] as usize);
        pixels.extend(
            r[1..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
        );
    }
    Dataset::new(Dims::new(1, c, h, w), classes, pixels, labels)
}

fn decode_cifar(bytes: &[u8]) -> Result<Dataset> {
    let mut pixels = Vec::with_capacity(bytes.len());
    let mut labels = Vec::new();
    for r in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(r[0] as usize);
        pixels.extend(r[1..].iter().map(|b| *b as f32 / 255.0));
    }
    Dataset::new(Dims::new(1, 3, 32, 32), 10, pixels, labels)
}

/// Gaussian-bump images, one bump position per class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobsConfig {
    pub samples: usize,
    pub classes: usize,
    pub channels: usize,
    pub hw: usize,
    /// Std of the additive pixel noise.
    pub noise: f32,
    /// Max offset of a bump from its class centre, in pixels.
    pub jitter: f32,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            samples: 256,
            classes: 2,
            channels: 3,
            hw: 8,
            noise: 0.2,
            jitter: 1.0,
        }
    }
}

/// Class `k` puts a bump of width 1.5 px at angle `2 pi k / classes` on a
/// circle of radius `hw / 4` around the image centre. Labels cycle through
/// the classes.
pub fn synthetic_blobs<R: Rng>(cfg: &BlobsConfig, rng: &mut R) -> Result<Dataset> {
    if cfg.classes < 2 || cfg.hw < 2 || cfg.channels == 0 {
        return Err(Error::Dataset(format!("degenerate blobs config {cfg:?}")));
    }
    let noise =
        Normal::new(0.0, cfg.noise).map_err(|e| Error::Dataset(format!("bad noise level: {e}")))?;
    let (hw, mid) = (cfg.hw, (cfg.hw as f32 - 1.0) / 2.0);
    let radius = hw as f32 / 4.0;
    let mut pixels = Vec::with_capacity(cfg.samples * cfg.channels * hw * hw);
    let mut labels = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let k = i % cfg.classes;
        let angle = std::f32::consts::TAU * k as f32 / cfg.classes as f32;
        let mut jit = || {
            if cfg.jitter > 0.0 {
                rng.random_range(-cfg.jitter..cfg.jitter)
            } else {
                0.0
            }
        };
        let cy = mid + radius * angle.sin() + jit();
        let cx = mid + radius * angle.cos() + jit();
        for _ in 0..cfg.channels {
            for y in 0..hw {
                for x in 0..hw {
                    let r2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                    pixels.push((-r2 / (2.0 * 1.5 * 1.5)).exp() + noise.sample(rng));
                }
            }
        }
        labels.push(k);
    }
    Dataset::new(
        Dims::new(1, cfg.channels, hw, hw),
        cfg.classes,
        pixels,
        labels,
    )
}
