//! Tape-based forward and backward passes over a graph in f32.
//!
//! Binary convolutions run on the dense path with `sign` applied to both
//! operands, so gradients can flow through them. The straight-through
//! estimator passes the gradient of `sign` where `|x| <= 1` and blocks it
//! elsewhere, which is the derivative of `hardtanh`. Latent binary weights
//! get the same window.
//!
//! All reductions run in a fixed order, so results do not depend on the
//! number of worker threads.

use std::collections::HashMap;

use rayon::prelude::*;

use super::weights::Weights;
use crate::conv::conv2d_dense;
use crate::error::{Error, Result};
use crate::graph::{Graph, Op, Pool};
use crate::tensor::{repeat_channels, sign, ConvSpec, DenseTensor, Dims};

pub(crate) const BN_EPS: f32 = 1e-5;

/// `clamp(x, -1, 1)`, the surrogate whose derivative the estimator uses.
pub fn hardtanh(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Straight-through gradient of `sign` at `x`.
pub fn ste_grad(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        1.0
    } else {
        0.0
    }
}

fn ste_mask(x: f32) -> f32 {
    if x.abs() <= 1.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Mode {
    Train,
    Eval,
}

enum Cache {
    None,
    /// Binarized input and weights of a binary convolution.
    Binary {
        x: DenseTensor,
        w: Vec<f32>,
    },
    Bn {
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
    },
    MaxPool(Vec<usize>),
}

/// Batch statistics observed by one batch norm in a training pass.
#[derive(Debug, Clone)]
pub(crate) struct BnStats {
    pub node: String,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

pub(crate) struct Tape {
    mode: Mode,
    acts: Vec<DenseTensor>,
    caches: Vec<Cache>,
    pub bn_stats: Vec<BnStats>,
}

pub(crate) struct Net<'g> {
    g: &'g Graph,
    order: Vec<&'g str>,
    pos: HashMap<&'g str, usize>,
    output: usize,
}

/// Parameter gradients keyed like [`Weights`].
pub(crate) type Grads = Vec<(String, Vec<f32>)>;

impl<'g> Net<'g> {
    pub fn new(g: &'g Graph) -> Result<Self> {
        g.validate()?;
        let order = g.topo_order()?;
        let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let out_id = *g
            .output_ids()
            .first()
            .ok_or_else(|| Error::InvalidConfig("graph has no output".into()))?;
        let output = pos[out_id];
        Ok(Net {
            g,
            order,
            pos,
            output,
        })
    }

    pub fn output<'t>(&self, tape: &'t Tape) -> &'t DenseTensor {
        &tape.acts[self.output]
    }

    pub fn activation<'t>(&self, tape: &'t Tape, id: &str) -> Option<&'t DenseTensor> {
        self.pos.get(id).map(|p| &tape.acts[*p])
    }

    pub fn activations_map(&self, tape: Tape) -> indexmap::IndexMap<String, DenseTensor> {
        self.order
            .iter()
            .map(|id| id.to_string())
            .zip(tape.acts)
            .collect()
    }

    pub fn forward(&self, w: &Weights, x: DenseTensor, mode: Mode) -> Result<Tape> {
        let mut tape = Tape {
            mode,
            acts: Vec::with_capacity(self.order.len()),
            caches: Vec::with_capacity(self.order.len()),
            bn_stats: Vec::new(),
        };
        let mut x = Some(x);
        for id in &self.order {
            let node = self.g.node(id).unwrap();
            let ins: Vec<&DenseTensor> = node
                .inputs
                .iter()
                .map(|i| &tape.acts[self.pos[i.as_str()]])
                .collect();
            let (out, cache) = match &node.op {
                Op::Input { c, h, w } => {
                    let x = x.take().expect("single input node");
                    let d = x.dims();
                    if (d.c, d.h, d.w) != (*c, *h, *w) {
                        return Err(Error::shape_at(
                            id,
                            format!("batch {d} does not match declared input ({c}, {h}, {w})"),
                        ));
                    }
                    (x, Cache::None)
                }
                Op::Conv(s) | Op::RepConv(s) => {
                    let e = s.executed();
                    let k = DenseTensor::from_raw(e.kernel_dims(), w.data(id, "weight").to_vec());
                    (
                        conv2d_dense(ins[0], &k, &e).map_err(|e| e.at(id))?,
                        Cache::None,
                    )
                }
                Op::Bconv(s) | Op::RepBconv(s) => {
                    let e = s.executed();
                    let wb: Vec<f32> = w.data(id, "weight").iter().map(|v| sign(*v)).collect();
                    let xb = ins[0].signum();
                    let k = DenseTensor::from_raw(e.kernel_dims(), wb.clone());
                    let y = conv2d_dense(&xb, &k, &e).map_err(|e| e.at(id))?;
                    (y, Cache::Binary { x: xb, w: wb })
                }
                Op::BatchNorm { .. } => {
                    let (y, cache, stats) = bn_forward(w, id, ins[0], mode);
                    if let Some((mean, var)) = stats {
                        tape.bn_stats.push(BnStats {
                            node: id.to_string(),
                            mean,
                            var,
                        });
                    }
                    (y, cache)
                }
                Op::Sign => (ins[0].signum(), Cache::None),
                Op::Relu => (map(ins[0], |v| v.max(0.0)), Cache::None),
                Op::PReluShifted { .. } => {
                    let (si, a, so) = (
                        w.data(id, "shift_in"),
                        w.data(id, "slope"),
                        w.data(id, "shift_out"),
                    );
                    let d = ins[0].dims();
                    let mut y = ins[0].data().to_vec();
                    for (i, v) in y.iter_mut().enumerate() {
                        let c = (i / d.plane()) % d.c;
                        let z = *v - si[c];
                        *v = if z > 0.0 { z } else { a[c] * z } + so[c];
                    }
                    (DenseTensor::from_raw(d, y), Cache::None)
                }
                Op::Add => {
                    let mut y = ins[0].data().to_vec();
                    for other in &ins[1..] {
                        for (a, b) in y.iter_mut().zip(other.data()) {
                            *a += b;
                        }
                    }
                    (DenseTensor::from_raw(ins[0].dims(), y), Cache::None)
                }
                Op::AvgPool(p) => (avg_pool(ins[0], *p), Cache::None),
                Op::MaxPool(p) => {
                    let (y, arg) = max_pool(ins[0], *p);
                    (y, Cache::MaxPool(arg))
                }
                Op::Repeat { times } => (repeat_channels(ins[0], *times)?, Cache::None),
                Op::Flatten => {
                    let d = ins[0].dims();
                    (
                        ins[0]
                            .clone()
                            .reshape(Dims::new(d.n, d.sample_len(), 1, 1))?,
                        Cache::None,
                    )
                }
                Op::Fc {
                    in_features,
                    out_features,
                } => (
                    fc_forward(ins[0], w, id, *in_features, *out_features),
                    Cache::None,
                ),
            };
            tape.acts.push(out);
            tape.caches.push(cache);
        }
        Ok(tape)
    }

    /// Back-propagates `d_output` (gradient of the loss with respect to the
    /// graph output) through a training tape.
    pub fn backward(&self, w: &Weights, tape: &Tape, d_output: DenseTensor) -> Result<Grads> {
        if tape.mode != Mode::Train {
            return Err(Error::InvalidConfig(
                "backward needs a training-mode tape".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.order.len()];
        grads[self.output] = Some(d_output.into_data());
        let mut params: Grads = Vec::new();

        for p in (0..self.order.len()).rev() {
            let Some(dy) = grads[p].take() else { continue };
            let id = self.order[p];
            let node = self.g.node(id).unwrap();
            let x_of = |k: usize| &tape.acts[self.pos[node.inputs[k].as_str()]];
            let out_dims = tape.acts[p].dims();
            let mut dxs: Vec<Vec<f32>> = Vec::new();
            match &node.op {
                Op::Input { .. } => {}
                Op::Conv(s) | Op::RepConv(s) => {
                    let e = s.executed();
                    let x = x_of(0);
                    let k = w.data(id, "weight");
                    dxs.push(conv_input_grad(&dy, out_dims, k, &e, x.dims()));
                    params.push((
                        format!("{id}.weight"),
                        conv_weight_grad(&dy, out_dims, x, &e),
                    ));
                }
                Op::Bconv(s) | Op::RepBconv(s) => {
                    let e = s.executed();
                    let Cache::Binary { x: xb, w: wb } = &tape.caches[p] else {
                        unreachable!()
                    };
                    let mut dx = conv_input_grad(&dy, out_dims, wb, &e, xb.dims());
                    for (g, v) in dx.iter_mut().zip(x_of(0).data()) {
                        *g *= ste_mask(*v);
                    }
                    dxs.push(dx);
                    let mut dw = conv_weight_grad(&dy, out_dims, xb, &e);
                    for (g, v) in dw.iter_mut().zip(w.data(id, "weight")) {
                        *g *= ste_mask(*v);
                    }
                    params.push((format!("{id}.weight"), dw));
                }
                Op::BatchNorm { .. } => {
                    let Cache::Bn { xhat, inv_std } = &tape.caches[p] else {
                        unreachable!()
                    };
                    let (dx, dgamma, dbeta) =
                        bn_backward(&dy, out_dims, xhat, inv_std, w.data(id, "gamma"));
                    dxs.push(dx);
                    params.push((format!("{id}.gamma"), dgamma));
                    params.push((format!("{id}.beta"), dbeta));
                }
                Op::Sign => dxs.push(
                    dy.iter()
                        .zip(x_of(0).data())
                        .map(|(g, v)| g * ste_mask(*v))
                        .collect(),
                ),
                Op::Relu => dxs.push(
                    dy.iter()
                        .zip(x_of(0).data())
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect(),
                ),
                Op::PReluShifted { channels } => {
                    let (si, a) = (w.data(id, "shift_in"), w.data(id, "slope"));
                    let mut dx = vec![0.0; dy.len()];
                    let mut dsi = vec![0.0f32; *channels];
                    let mut da = vec![0.0f32; *channels];
                    let mut dso = vec![0.0f32; *channels];
                    for (i, (g, v)) in dy.iter().zip(x_of(0).data()).enumerate() {
                        let c = (i / out_dims.plane()) % out_dims.c;
                        let z = v - si[c];
                        let dz = if z > 0.0 { *g } else { g * a[c] };
                        if z <= 0.0 {
                            da[c] += g * z;
                        }
                        dx[i] = dz;
                        dsi[c] -= dz;
                        dso[c] += g;
                    }
                    dxs.push(dx);
                    params.push((format!("{id}.shift_in"), dsi));
                    params.push((format!("{id}.slope"), da));
                    params.push((format!("{id}.shift_out"), dso));
                }
                Op::Add => {
                    for _ in 1..node.inputs.len() {
                        dxs.push(dy.clone());
                    }
                    dxs.push(dy);
                }
                Op::AvgPool(pool) => dxs.push(avg_pool_grad(&dy, out_dims, x_of(0).dims(), *pool)),
                Op::MaxPool(_) => {
                    let Cache::MaxPool(arg) = &tape.caches[p] else {
                        unreachable!()
                    };
                    let mut dx = vec![0.0; x_of(0).dims().numel()];
                    for (g, i) in dy.iter().zip(arg) {
                        dx[*i] += g;
                    }
                    dxs.push(dx);
                }
                Op::Repeat { times } => {
                    let xd = x_of(0).dims();
                    let len = xd.sample_len();
                    let mut dx = vec![0.0; xd.numel()];
                    for n in 0..xd.n {
                        for t in 0..*times {
                            let src = &dy[(n * times + t) * len..(n * times + t + 1) * len];
                            for (a, b) in dx[n * len..(n + 1) * len].iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                    dxs.push(dx);
                }
                Op::Flatten => dxs.push(dy),
                Op::Fc {
                    in_features,
                    out_features,
                } => {
                    let x = x_of(0);
                    let (dx, dw, db) =
                        fc_backward(&dy, x, w.data(id, "weight"), *in_features, *out_features);
                    dxs.push(dx);
                    params.push((format!("{id}.weight"), dw));
                    params.push((format!("{id}.bias"), db));
                }
            }
            for (input, dx) in node.inputs.iter().zip(dxs) {
                let q = self.pos[input.as_str()];
                match &mut grads[q] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&dx) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(dx),
                }
            }
        }
        Ok(params)
    }
}

fn map(x: &DenseTensor, f: impl Fn(f32) -> f32) -> DenseTensor {
    DenseTensor::from_raw(x.dims(), x.data().iter().map(|v| f(*v)).collect())
}

/// Per-channel batch mean and variance.
type BatchStats = (Vec<f32>, Vec<f32>);

fn bn_forward(
    w: &Weights,
    id: &str,
    x: &DenseTensor,
    mode: Mode,
) -> (DenseTensor, Cache, Option<BatchStats>) {
    let d = x.dims();
    let (gamma, beta) = (w.data(id, "gamma"), w.data(id, "beta"));
    let plane = d.plane();
    let m = (d.n * plane) as f64;
    let (mean, var): (Vec<f32>, Vec<f32>) = match mode {
        Mode::Train => (0..d.c)
            .map(|c| {
                let mut s = 0.0f64;
                for n in 0..d.n {
                    let b = d.index(n, c, 0, 0);
                    s += x.data()[b..b + plane]
                        .iter()
                        .map(|v| *v as f64)
                        .sum::<f64>();
                }
                let mean = s / m;
                let mut q = 0.0f64;
                for n in 0..d.n {
                    let b = d.index(n, c, 0, 0);
                    q += x.data()[b..b + plane]
                        .iter()
                        .map(|v| (*v as f64 - mean).powi(2))
                        .sum::<f64>();
                }
                (mean as f32, (q / m) as f32)
            })
            .unzip(),
        Mode::Eval => (
            w.data(id, "running_mean").to_vec(),
            w.data(id, "running_var").to_vec(),
        ),
    };
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = x.data().to_vec();
    let mut y = vec![0.0; xhat.len()];
    for (i, (h, o)) in xhat.iter_mut().zip(y.iter_mut()).enumerate() {
        let c = (i / plane) % d.c;
        *h = (*h - mean[c]) * inv_std[c];
        *o = gamma[c] * *h + beta[c];
    }
    let stats = (mode == Mode::Train).then_some((mean, var));
    (
        DenseTensor::from_raw(d, y),
        Cache::Bn { xhat, inv_std },
        stats,
    )
}

fn bn_backward(
    dy: &[f32],
    d: Dims,
    xhat: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let plane = d.plane();
    let m = (d.n * plane) as f64;
    let mut dgamma = vec![0.0f32; d.c];
    let mut dbeta = vec![0.0f32; d.c];
    let mut dx = vec![0.0f32; dy.len()];
    for c in 0..d.c {
        let (mut sg, mut sgx) = (0.0f64, 0.0f64);
        for n in 0..d.n {
            let b = d.index(n, c, 0, 0);
            for i in b..b + plane {
                sg += dy[i] as f64;
                sgx += (dy[i] * xhat[i]) as f64;
            }
        }
        dgamma[c] = sgx as f32;
        dbeta[c] = sg as f32;
        let k = gamma[c] as f64 * inv_std[c] as f64 / m;
        for n in 0..d.n {
            let b = d.index(n, c, 0, 0);
            for i in b..b + plane {
                dx[i] = (k * (m * dy[i] as f64 - sg - xhat[i] as f64 * sgx)) as f32;
            }
        }
    }
    (dx, dgamma, dbeta)
}

fn conv_input_grad(dy: &[f32], od: Dims, w: &[f32], s: &ConvSpec, xd: Dims) -> Vec<f32> {
    let mut dx = vec![0.0f32; xd.numel()];
    let k_len = s.c_in * s.kh * s.kw;
    dx.par_chunks_mut(xd.sample_len())
        .enumerate()
        .for_each(|(n, dxs)| {
            for o in 0..od.c {
                let wrow = &w[o * k_len..(o + 1) * k_len];
                for oy in 0..od.h {
                    for ox in 0..od.w {
                        let g = dy[od.index(n, o, oy, ox)];
                        if g == 0.0 {
                            continue;
                        }
                        for i in 0..s.c_in {
                            for ky in 0..s.kh {
                                let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                                if iy < 0 || iy >= xd.h as isize {
                                    continue;
                                }
                                for kx in 0..s.kw {
                                    let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                                    if ix < 0 || ix >= xd.w as isize {
                                        continue;
                                    }
                                    dxs[(i * xd.h + iy as usize) * xd.w + ix as usize] +=
                                        g * wrow[(i * s.kh + ky) * s.kw + kx];
                                }
                            }
                        }
                    }
                }
            }
        });
    dx
}

fn conv_weight_grad(dy: &[f32], od: Dims, x: &DenseTensor, s: &ConvSpec) -> Vec<f32> {
    let xd = x.dims();
    let xs = x.data();
    let k_len = s.c_in * s.kh * s.kw;
    let mut dw = vec![0.0f32; s.c_out * k_len];
    dw.par_chunks_mut(k_len).enumerate().for_each(|(o, row)| {
        for n in 0..od.n {
            for oy in 0..od.h {
                for ox in 0..od.w {
                    let g = dy[od.index(n, o, oy, ox)];
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..s.c_in {
                        for ky in 0..s.kh {
                            let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                            if iy < 0 || iy >= xd.h as isize {
                                continue;
                            }
                            for kx in 0..s.kw {
                                let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                                if ix < 0 || ix >= xd.w as isize {
                                    continue;
                                }
                                row[(i * s.kh + ky) * s.kw + kx] +=
                                    g * xs[xd.index(n, i, iy as usize, ix as usize)];
                            }
                        }
                    }
                }
            }
        }
    });
    dw
}

fn pool_out(d: Dims, p: Pool) -> Dims {
    match p {
        Pool::Global => Dims::new(d.n, d.c, 1, 1),
        Pool::Window { kernel, stride } => Dims::new(
            d.n,
            d.c,
            (d.h - kernel) / stride + 1,
            (d.w - kernel) / stride + 1,
        ),
    }
}

/// Window taps of output pixel `(oy, ox)`, clipped to the input.
fn taps(d: Dims, p: Pool, oy: usize, ox: usize) -> impl Iterator<Item = (usize, usize)> {
    let (ys, xs) = match p {
        Pool::Global => (0..d.h, 0..d.w),
        Pool::Window { kernel, stride } => (
            oy * stride..oy * stride + kernel,
            ox * stride..ox * stride + kernel,
        ),
    };
    ys.flat_map(move |y| xs.clone().map(move |x| (y, x)))
}

fn avg_pool(x: &DenseTensor, p: Pool) -> DenseTensor {
    let d = x.dims();
    let od = pool_out(d, p);
    let mut y = vec![0.0f32; od.numel()];
    for n in 0..d.n {
        for c in 0..d.c {
            for oy in 0..od.h {
                for ox in 0..od.w {
                    let (mut s, mut k) = (0.0f32, 0usize);
                    for (iy, ix) in taps(d, p, oy, ox) {
                        s += x.data()[d.index(n, c, iy, ix)];
                        k += 1;
                    }
                    y[od.index(n, c, oy, ox)] = s / k as f32;
                }
            }
        }
    }
    DenseTensor::from_raw(od, y)
}

fn avg_pool_grad(dy: &[f32], od: Dims, xd: Dims, p: Pool) -> Vec<f32> {
    let mut dx = vec![0.0f32; xd.numel()];
    for n in 0..xd.n {
        for c in 0..xd.c {
            for oy in 0..od.h {
                for ox in 0..od.w {
                    let g = dy[od.index(n, c, oy, ox)];
                    let k = taps(xd, p, oy, ox).count() as f32;
                    for (iy, ix) in taps(xd, p, oy, ox) {
                        dx[xd.index(n, c, iy, ix)] += g / k;
                    }
                }
            }
        }
    }
    dx
}

fn max_pool(x: &DenseTensor, p: Pool) -> (DenseTensor, Vec<usize>) {
    let d = x.dims();
    let od = pool_out(d, p);
    let mut y = vec![0.0f32; od.numel()];
    let mut arg = vec![0usize; od.numel()];
    for n in 0..d.n {
        for c in 0..d.c {
            for oy in 0..od.h {
                for ox in 0..od.w {
                    let mut best = (f32::NEG_INFINITY, 0usize);
                    for (iy, ix) in taps(d, p, oy, ox) {
                        let i = d.index(n, c, iy, ix);
                        if x.data()[i] > best.0 {
                            best = (x.data()[i], i);
                        }
                    }
                    let o = od.index(n, c, oy, ox);
                    (y[o], arg[o]) = best;
                }
            }
        }
    }
    (DenseTensor::from_raw(od, y), arg)
}

fn fc_forward(x: &DenseTensor, w: &Weights, id: &str, fin: usize, fout: usize) -> DenseTensor {
    let d = x.dims();
    let (wt, b) = (w.data(id, "weight"), w.data(id, "bias"));
    let mut y = vec![0.0f32; d.n * fout];
    for n in 0..d.n {
        let xs = &x.sample(n)[..fin];
        for o in 0..fout {
            let row = &wt[o * fin..(o + 1) * fin];
            y[n * fout + o] = b[o] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<f32>();
        }
    }
    DenseTensor::from_raw(Dims::new(d.n, fout, 1, 1), y)
}

fn fc_backward(
    dy: &[f32],
    x: &DenseTensor,
    wt: &[f32],
    fin: usize,
    fout: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let d = x.dims();
    let len = d.sample_len();
    let mut dx = vec![0.0f32; d.numel()];
    let mut dw = vec![0.0f32; fout * fin];
    let mut db = vec![0.0f32; fout];
    for n in 0..d.n {
        let xs = &x.sample(n)[..fin];
        for o in 0..fout {
            let g = dy[n * fout + o];
            db[o] += g;
            for i in 0..fin {
                dw[o * fin + i] += g * xs[i];
                dx[n * len + i] += g * wt[o * fin + i];
            }
        }
    }
    (dx, dw, db)
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits.
pub(crate) fn softmax_xent(logits: &DenseTensor, labels: &[usize]) -> (f32, DenseTensor) {
    let d = logits.dims();
    let k = d.sample_len();
    let mut grad = vec![0.0f32; d.numel()];
    let mut loss = 0.0f64;
    for (n, &label) in labels.iter().enumerate() {
        let z = logits.sample(n);
        let m = z.iter().fold(f32::NEG_INFINITY, |a, b| a.max(*b)) as f64;
        let sum: f64 = z.iter().map(|v| (*v as f64 - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - z[label] as f64;
        for j in 0..k {
            let p = (z[j] as f64 - lse).exp();
            let t = if j == label { 1.0 } else { 0.0 };
            grad[n * k + j] = ((p - t) / labels.len() as f64) as f32;
        }
    }
    (
        (loss / labels.len() as f64) as f32,
        DenseTensor::from_raw(d, grad),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_toy, ToyConfig};
    use crate::reptran::{reptran, RepTranConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ste_matches_hardtanh_difference_quotient() {
        let h = 1e-7;
        for i in -300..=300 {
            let x = i as f64 / 100.0 + 0.003;
            let fd = (hardtanh(x + h) - hardtanh(x - h)) / (2.0 * h);
            assert!((fd - ste_grad(x)).abs() < 1e-6, "x={x}");
        }
    }

    fn batch(rng: &mut ChaCha8Rng, d: Dims) -> DenseTensor {
        DenseTensor::from_raw(
            d,
            (0..d.numel())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    fn loss(net: &Net, w: &Weights, x: &DenseTensor, labels: &[usize]) -> f64 {
        let t = net.forward(w, x.clone(), Mode::Train).unwrap();
        softmax_xent(net.output(&t), labels).0 as f64
    }

    // float toy net: conv, batch norm, relu, repeat, residual, pool, fc
    #[test]
    fn float_gradients_match_finite_differences() {
        let g0 = build_toy(ToyConfig {
            binary: false,
            channels: 4,
            hw: 4,
            ..Default::default()
        });
        let g = reptran(&g0, &RepTranConfig::new(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Weights::init(&g, &mut rng, 0.2).unwrap();
        let x = batch(&mut rng, Dims::new(3, 3, 4, 4));
        let labels = [0, 1, 1];
        let net = Net::new(&g).unwrap();
        let tape = net.forward(&w, x.clone(), Mode::Train).unwrap();
        let (_, dl) = softmax_xent(net.output(&tape), &labels);
        let grads = net.backward(&w, &tape, dl).unwrap();
        let eps = 1e-3f32;
        let mut checked = 0;
        for (name, g) in &grads {
            for idx in [0, g.len() / 2, g.len() - 1] {
                let mut wp = w.clone();
                wp.data_mut(name)[idx] += eps;
                let mut wm = w.clone();
                wm.data_mut(name)[idx] -= eps;
                let fd = (loss(&net, &wp, &x, &labels) - loss(&net, &wm, &x, &labels))
                    / (2.0 * eps as f64);
                let an = g[idx] as f64;
                assert!(
                    (fd - an).abs() <= 2e-3 + 5e-2 * an.abs().max(fd.abs()),
                    "{name}[{idx}]: analytic {an}, numeric {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn sign_backward_is_window() {
        let mut g = Graph::new("s");
        g.add("input", Op::Input { c: 1, h: 1, w: 4 }, &[]).unwrap();
        g.add("sign", Op::Sign, &["input"]).unwrap();
        g.add("flat", Op::Flatten, &["sign"]).unwrap();
        g.add(
            "fc",
            Op::Fc {
                in_features: 4,
                out_features: 1,
            },
            &["flat"],
        )
        .unwrap();
        let w = Weights::init(&g, &mut ChaCha8Rng::seed_from_u64(0), 0.0).unwrap();
        let net = Net::new(&g).unwrap();
        let x = DenseTensor::new(Dims::new(1, 1, 1, 4), vec![-2.0, -0.5, 1.0, 1.5]).unwrap();
        let tape = net.forward(&w, x, Mode::Train).unwrap();
        let grads = net
            .backward(&w, &tape, DenseTensor::filled(Dims::new(1, 1, 1, 1), 1.0))
            .unwrap();
        let dw = &grads.iter().find(|(n, _)| n == "fc.weight").unwrap().1;
        assert_eq!(dw, &vec![-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn eval_equals_train_with_single_batch_statistics() {
        let g = build_toy(ToyConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut w = Weights::init(&g, &mut rng, 0.1).unwrap();
        let x = batch(&mut rng, Dims::new(4, 3, 8, 8));
        let net = Net::new(&g).unwrap();
        let train = net.forward(&w, x.clone(), Mode::Train).unwrap();
        // momentum 1: running statistics become the batch statistics
        for s in &train.bn_stats {
            w.data_mut(&format!("{}.running_mean", s.node))
                .copy_from_slice(&s.mean);
            w.data_mut(&format!("{}.running_var", s.node))
                .copy_from_slice(&s.var);
        }
        let eval = net.forward(&w, x, Mode::Eval).unwrap();
        let a = net.output(&train);
        let b = net.output(&eval);
        assert!(
            a.max_abs_diff(b).unwrap()
                <= 1e-5 * a.data().iter().fold(1.0f32, |m, v| m.max(v.abs()))
        );
    }
}
