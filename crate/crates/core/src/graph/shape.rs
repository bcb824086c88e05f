use indexmap::IndexMap;

use super::{Graph, Op, Pool};
use crate::error::{Error, Result};
use crate::tensor::Dims;

/// Inferred output dims per node id, in topological order.
pub type ShapeMap = IndexMap<String, Dims>;

/// Annotates every node with its output dims for the given input. The first
/// inconsistent node is named in the error.
pub fn infer_shapes(g: &Graph, input: Dims) -> Result<ShapeMap> {
    let order = g.topo_order()?;
    let mut shapes = ShapeMap::with_capacity(order.len());
    for id in order {
        let node = g.node(id).unwrap();
        let ins: Vec<Dims> = node.inputs.iter().map(|i| shapes[i.as_str()]).collect();
        let out = node_shape(&node.op, &ins, input).map_err(|e| e.at(id))?;
        shapes.insert(id.to_string(), out);
    }
    Ok(shapes)
}

fn one(ins: &[Dims]) -> Result<Dims> {
    match ins {
        [d] => Ok(*d),
        _ => Err(Error::shape(format!(
            "expected one input, got {}",
            ins.len()
        ))),
    }
}

fn expect_channels(d: Dims, c: usize) -> Result<()> {
    if d.c != c {
        return Err(Error::shape(format!(
            "input {d} has {} channels, expected {c}",
            d.c
        )));
    }
    Ok(())
}

pub(crate) fn node_shape(op: &Op, ins: &[Dims], input: Dims) -> Result<Dims> {
    match op {
        Op::Input { c, .. } => {
            expect_channels(input, *c)?;
            Ok(input)
        }
        Op::Conv(s) | Op::Bconv(s) | Op::RepConv(s) | Op::RepBconv(s) => {
            let d = one(ins)?;
            expect_channels(d, s.input_channels())?;
            let (h, w) = s.out_hw(d.h, d.w)?;
            Ok(Dims::new(d.n, s.conv_output_channels(), h, w))
        }
        Op::BatchNorm { channels, .. } | Op::PReluShifted { channels } => {
            let d = one(ins)?;
            expect_channels(d, *channels)?;
            Ok(d)
        }
        Op::Sign | Op::Relu => one(ins),
        Op::Add => {
            let first = *ins
                .first()
                .ok_or_else(|| Error::shape("Add without inputs"))?;
            if let Some(bad) = ins.iter().find(|d| **d != first) {
                return Err(Error::shape(format!("Add inputs differ: {first} vs {bad}")));
            }
            Ok(first)
        }
        Op::AvgPool(p) | Op::MaxPool(p) => {
            let d = one(ins)?;
            match p {
                Pool::Global => Ok(Dims::new(d.n, d.c, 1, 1)),
                Pool::Window { kernel, stride } => {
                    if d.h < *kernel || d.w < *kernel {
                        return Err(Error::shape(format!(
                            "pool window {kernel} larger than input {d}"
                        )));
                    }
                    Ok(Dims::new(
                        d.n,
                        d.c,
                        (d.h - kernel) / stride + 1,
                        (d.w - kernel) / stride + 1,
                    ))
                }
            }
        }
        Op::Repeat { times } => {
            let d = one(ins)?;
            Ok(d.with_c(d.c * times))
        }
        Op::Flatten => {
            let d = one(ins)?;
            Ok(Dims::new(d.n, d.sample_len(), 1, 1))
        }
        Op::Fc {
            in_features,
            out_features,
        } => {
            let d = one(ins)?;
            if d.h != 1 || d.w != 1 {
                return Err(Error::shape(format!("FC expects flattened input, got {d}")));
            }
            if d.c < *in_features || d.c % in_features != 0 {
                return Err(Error::shape(format!(
                    "FC takes {in_features} features, input has {} (must be a multiple)",
                    d.c
                )));
            }
            Ok(Dims::new(d.n, *out_features, 1, 1))
        }
    }
}
