//! Trainable parameters and batch-norm statistics, keyed `node_id.param`.
//!
//! Checkpoint layout:
//!
//! ```text
//! RBW1
//! <node_id.param>\t<offset>\t<length>
//! ...
//! <empty line>
//! <concatenated dense blobs>
//! ```
//!
//! Offsets and lengths are in bytes, relative to the first byte after the
//! empty line. Every blob is in the dense tensor blob format.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Op};
use crate::tensor::blob::{decode_dense, encode_dense};
use crate::tensor::{DenseTensor, Dims};

const MAGIC: &str = "RBW1";

fn per_channel(c: usize) -> Dims {
    Dims::new(c, 1, 1, 1)
}

/// Parameter names each op carries, with their dims.
pub(crate) fn param_layout(op: &Op) -> Vec<(&'static str, Dims)> {
    match op {
        Op::Conv(s) | Op::Bconv(s) | Op::RepConv(s) | Op::RepBconv(s) => {
            vec![("weight", s.kernel_dims())]
        }
        Op::BatchNorm { channels, .. } => vec![
            ("gamma", per_channel(*channels)),
            ("beta", per_channel(*channels)),
            ("running_mean", per_channel(*channels)),
            ("running_var", per_channel(*channels)),
        ],
        Op::PReluShifted { channels } => vec![
            ("shift_in", per_channel(*channels)),
            ("slope", per_channel(*channels)),
            ("shift_out", per_channel(*channels)),
        ],
        Op::Fc {
            in_features,
            out_features,
        } => vec![
            ("weight", Dims::new(*out_features, *in_features, 1, 1)),
            ("bias", per_channel(*out_features)),
        ],
        _ => Vec::new(),
    }
}

fn key(node: &str, param: &str) -> String {
    format!("{node}.{param}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    params: IndexMap<String, DenseTensor>,
}

impl Weights {
    /// Fresh parameters for `g`.
    ///
    /// Convolution weights are normal with std `sqrt(2 / fan_in)` of the
    /// executed kernel, the classifier is uniform in `±1/sqrt(in)`, batch
    /// norm starts at `gamma = 1 + U(-bn_noise, bn_noise)`, `beta = 0` and
    /// unit running variance, and `PReLUShifted` at zero shifts and slope
    /// 0.25.
    pub fn init<R: Rng>(g: &Graph, rng: &mut R, bn_noise: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&bn_noise) {
            return Err(Error::InvalidConfig(format!(
                "bn init noise must be in [0, 1), got {bn_noise}"
            )));
        }
        let mut params = IndexMap::new();
        for node in g.nodes() {
            for (name, dims) in param_layout(&node.op) {
                let n = dims.numel();
                let data: Vec<f32> = match (&node.op, name) {
                    (op, "weight") if op.is_conv() => {
                        let e = op.conv_spec().unwrap().executed();
                        let std = (2.0 / (e.c_in * e.kh * e.kw) as f32).sqrt();
                        let dist = Normal::new(0.0, std).unwrap();
                        (0..n).map(|_| dist.sample(rng)).collect()
                    }
                    (Op::Fc { in_features, .. }, "weight") => {
                        let b = 1.0 / (*in_features as f32).sqrt();
                        (0..n).map(|_| rng.random_range(-b..b)).collect()
                    }
                    (_, "gamma") if bn_noise > 0.0 => (0..n)
                        .map(|_| 1.0 + rng.random_range(-bn_noise..bn_noise))
                        .collect(),
                    (_, "gamma") | (_, "running_var") => vec![1.0; n],
                    (_, "slope") => vec![0.25; n],
                    _ => vec![0.0; n],
                };
                params.insert(key(&node.id, name), DenseTensor::from_raw(dims, data));
            }
        }
        Ok(Weights { params })
    }

    pub fn get(&self, node: &str, param: &str) -> Option<&DenseTensor> {
        self.params.get(&key(node, param))
    }

    /// Replaces an existing parameter with a tensor of the same dims.
    pub fn set(&mut self, node: &str, param: &str, value: DenseTensor) -> Result<()> {
        let k = key(node, param);
        match self.params.get_mut(&k) {
            None => Err(Error::InvalidConfig(format!("unknown parameter '{k}'"))),
            Some(t) if t.dims() != value.dims() => Err(Error::InvalidConfig(format!(
                "parameter '{k}' has dims {}, got {}",
                t.dims(),
                value.dims()
            ))),
            Some(t) => {
                *t = value;
                Ok(())
            }
        }
    }

    pub(crate) fn data(&self, node: &str, param: &str) -> &[f32] {
        self.params[&key(node, param)].data()
    }

    pub(crate) fn data_mut(&mut self, name: &str) -> &mut [f32] {
        self.params
            .get_mut(name)
            .expect("parameter checked against graph")
            .data_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseTensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Every parameter `g` needs is present with the expected dims.
    pub fn check(&self, g: &Graph) -> Result<()> {
        for node in g.nodes() {
            for (name, dims) in param_layout(&node.op) {
                let k = key(&node.id, name);
                match self.params.get(&k) {
                    None => return Err(Error::InvalidConfig(format!("missing parameter '{k}'"))),
                    Some(t) if t.dims() != dims => {
                        return Err(Error::InvalidConfig(format!(
                            "parameter '{k}' has dims {}, expected {dims}",
                            t.dims()
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let blobs: Vec<Vec<u8>> = self.params.values().map(encode_dense).collect();
        let mut out = format!("{MAGIC}\n");
        let mut offset = 0;
        for (k, b) in self.params.keys().zip(&blobs) {
            out.push_str(&format!("{k}\t{offset}\t{}\n", b.len()));
            offset += b.len();
        }
        out.push('\n');
        let mut bytes = out.into_bytes();
        for b in blobs {
            bytes.extend_from_slice(&b);
        }
        bytes
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::InvalidConfig(format!("checkpoint: {m}"));
        let end = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| bad("manifest is not terminated by an empty line".into()))?;
        let manifest =
            std::str::from_utf8(&bytes[..end]).map_err(|_| bad("manifest is not utf-8".into()))?;
        let payload = &bytes[end + 2..];
        let mut lines = manifest.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad(format!("missing '{MAGIC}' header")));
        }
        let mut params = IndexMap::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let [name, offset, len] = f[..] else {
                return Err(bad(format!("manifest line {} is malformed", i + 2)));
            };
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| bad(format!("bad number '{s}' on manifest line {}", i + 2)))
            };
            let (offset, len) = (num(offset)?, num(len)?);
            let blob = payload
                .get(offset..offset + len)
                .ok_or_else(|| bad(format!("blob for '{name}' is out of range")))?;
            params.insert(name.to_string(), decode_dense(blob)?);
        }
        Ok(Weights { params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}
