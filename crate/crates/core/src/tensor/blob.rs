//! Flat little-endian tensor blobs.
//!
//! ```text
//! offset 0   u32 n
//! offset 4   u32 c
//! offset 8   u32 h
//! offset 12  u32 w
//! offset 16  payload
//! ```
//!
//! The payload is `n*c*h*w` f32 values for a dense blob, or
//! `n * ceil(c*h*w / 64)` u64 words for a bit blob (packing as in
//! [`BitTensor`]). The header does not record which of the two it is; the
//! reader decides.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{BitTensor, DenseTensor, Dims};
use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 16;

fn write_header<W: Write>(w: &mut W, dims: Dims) -> Result<()> {
    for d in dims.as_array() {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidTensor(format!("dim {d} does not fit in u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<Dims> {
    let mut buf = [0u8; HEADER_LEN];
    r.read_exact(&mut buf)
        .map_err(|e| Error::InvalidTensor(format!("truncated blob header: {e}")))?;
    let d = |i: usize| u32::from_le_bytes(buf[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    Ok(Dims::new(d(0), d(1), d(2), d(3)))
}

pub fn write_dense<W: Write>(w: &mut W, t: &DenseTensor) -> Result<()> {
    write_header(w, t.dims())?;
    let mut bytes = Vec::with_capacity(t.data().len() * 4);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_dense<R: Read>(r: &mut R) -> Result<DenseTensor> {
    let dims = read_header(r)?;
    let mut bytes = vec![0u8; dims.numel() * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::InvalidTensor(format!("truncated dense payload: {e}")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseTensor::new(dims, data)
}

pub fn write_bits<W: Write>(w: &mut W, t: &BitTensor) -> Result<()> {
    write_header(w, t.dims())?;
    let mut bytes = Vec::with_capacity(t.words().len() * 8);
    for v in t.words() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_bits<R: Read>(r: &mut R) -> Result<BitTensor> {
    let dims = read_header(r)?;
    let count = dims.n * dims.sample_len().div_ceil(64);
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::InvalidTensor(format!("truncated bit payload: {e}")))?;
    let words = bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    BitTensor::from_words(dims, words)
}

pub fn encode_dense(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + t.data().len() * 4);
    write_dense(&mut out, t).expect("dims fit in u32");
    out
}

pub fn decode_dense(bytes: &[u8]) -> Result<DenseTensor> {
    let mut r = bytes;
    let t = read_dense(&mut r)?;
    if !r.is_empty() {
        return Err(Error::InvalidTensor(format!(
            "{} trailing bytes after dense blob",
            r.len()
        )));
    }
    Ok(t)
}

pub fn save_dense(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    let bytes = encode_dense(t);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_dense(path: impl AsRef<Path>) -> Result<DenseTensor> {
    decode_dense(&fs::read(path)?)
}

pub fn save_bits(path: impl AsRef<Path>, t: &BitTensor) -> Result<()> {
    let mut out = Vec::new();
    write_bits(&mut out, t)?;
    fs::write(path, out)?;
    Ok(())
}

pub fn load_bits(path: impl AsRef<Path>) -> Result<BitTensor> {
    let bytes = fs::read(path)?;
    let mut r = bytes.as_slice();
    let t = read_bits(&mut r)?;
    if !r.is_empty() {
        return Err(Error::InvalidTensor("trailing bytes after bit blob".into()));
    }
    Ok(t)
}
