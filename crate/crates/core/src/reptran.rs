//! Graph rewrite that turns a baseline BNN into its replicated-channel form.
//!
//! Rules, applied in one pass over a validated graph with global `beta`:
//!
//! * **First layer**: the first convolution is left untouched. Its output
//!   is repeated `beta` times along channels right before it enters the
//!   following batch norm.
//! * **Backbone**: every `Bconv` becomes a `RepBconv` and every other
//!   full-precision `Conv` (downsampling bypass convolutions in a BNN)
//!   becomes a `RepConv`, each followed by a `Repeat(beta^2)`. Batch norm
//!   and `PReLUShifted` channel counts grow by `beta`; `Sign`, `ReLU`,
//!   `Add`, pooling, `Flatten` and existing `Repeat` nodes only see wider
//!   tensors.
//! * **Last layer**: the classifier consumes all `c * beta` features, the
//!   first `c`, or the first `c / beta`, depending on
//!   [`LastLayerPolicy`].
//!
//! Inserted repeat nodes are named `<conv id>_rep`. Batch norms that read
//! an inserted repeat get `share = beta^2`: one normalization result is
//! reused by every replicated group. The first-layer batch norm is
//! accounted the same way as the backbone ones. With
//! [`BnPosition::BeforeRepeat`] the batch norm directly after a
//! convolution moves in front of the repeat and keeps the un-replicated
//! channel count.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, Graph, Node, Op, ShapeMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LastLayerPolicy {
    /// All `c * beta` features; the classifier grows by `beta`.
    #[default]
    TakeAll,
    /// The first `c` features (one replicated block); unchanged cost.
    TakeOneOverBeta,
    /// The first `c / beta` features; cheaper than the baseline.
    TakeOneOverBetaSquared,
}

impl FromStr for LastLayerPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "take-all" => Ok(Self::TakeAll),
            "take-1-over-beta" => Ok(Self::TakeOneOverBeta),
            "take-1-over-beta2" => Ok(Self::TakeOneOverBetaSquared),
            _ => Err(Error::InvalidConfig(format!(
                "unknown last-layer policy '{s}'"
            ))),
        }
    }
}

impl fmt::Display for LastLayerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TakeAll => "take-all",
            Self::TakeOneOverBeta => "take-1-over-beta",
            Self::TakeOneOverBetaSquared => "take-1-over-beta2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BnPosition {
    #[default]
    AfterRepeat,
    BeforeRepeat,
}

impl FromStr for BnPosition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "after" => Ok(Self::AfterRepeat),
            "before" => Ok(Self::BeforeRepeat),
            _ => Err(Error::InvalidConfig(format!("unknown bn position '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepTranConfig {
    pub beta: usize,
    pub last_layer: LastLayerPolicy,
    pub bn_position: BnPosition,
}

impl Default for RepTranConfig {
    fn default() -> Self {
        RepTranConfig {
            beta: 2,
            last_layer: LastLayerPolicy::TakeAll,
            bn_position: BnPosition::AfterRepeat,
        }
    }
}

impl RepTranConfig {
    pub fn new(beta: usize) -> Self {
        RepTranConfig {
            beta,
            ..Default::default()
        }
    }

    pub fn with_last_layer(mut self, p: LastLayerPolicy) -> Self {
        self.last_layer = p;
        self
    }

    pub fn with_bn_position(mut self, p: BnPosition) -> Self {
        self.bn_position = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta < 2 {
            return Err(Error::InvalidConfig(format!(
                "beta must be at least 2, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

pub(crate) fn repeat_id(conv: &str) -> String {
    format!("{conv}_rep")
}

/// Applies the rewrite. `beta` must be at least 2.
pub fn reptran(g: &Graph, cfg: &RepTranConfig) -> Result<Graph> {
    cfg.validate()?;
    apply_rules(g, cfg)
}

/// The rewrite without the `beta >= 2` check. With `beta = 1` the result
/// differs from the input only by `Rep*` kinds and `Repeat(times=1)` nodes.
pub fn apply_rules(g: &Graph, cfg: &RepTranConfig) -> Result<Graph> {
    if cfg.beta == 0 {
        return Err(Error::InvalidConfig("beta must be at least 1".into()));
    }
    if g.transformed {
        return Err(Error::InvalidConfig(
            "graph has already been rewritten; the rewrite applies once".into(),
        ));
    }
    g.validate()?;
    if let Some(n) = g.nodes().find(|n| n.op.is_rep_conv()) {
        return Err(Error::UnsupportedNode {
            node: n.id.clone(),
            kind: n.op.kind().into(),
        });
    }
    let beta = cfg.beta;
    let shapes = infer_shapes(g, g.default_input_dims().unwrap())?;
    let order = g.topo_order()?;
    let stem = order
        .iter()
        .copied()
        .find(|id| g.node(id).unwrap().op.is_conv());

    // Where each conv's repeat goes: (node the repeat reads, times, moved bn).
    struct Insert {
        after: String,
        times: usize,
        bn_before: Option<String>,
    }
    let mut inserts: HashMap<String, Insert> = HashMap::new();
    for id in &order {
        let node = g.node(id).unwrap();
        if !node.op.is_conv() {
            continue;
        }
        let times = if Some(*id) == stem { beta } else { beta * beta };
        let consumers = g.consumers(id);
        let single_bn = match consumers.as_slice() {
            [c] if matches!(g.node(c).unwrap().op, Op::BatchNorm { .. }) => Some(c.to_string()),
            _ => None,
        };
        let bn_before = match cfg.bn_position {
            BnPosition::BeforeRepeat => single_bn,
            BnPosition::AfterRepeat => None,
        };
        inserts.insert(
            id.to_string(),
            Insert {
                after: bn_before.clone().unwrap_or_else(|| id.to_string()),
                times,
                bn_before,
            },
        );
    }

    // node read by downstream consumers -> repeat id
    let mut redirect: HashMap<String, String> = HashMap::new();
    // bn id -> channel count it keeps when placed before the repeat
    let mut moved_bn: HashMap<String, usize> = HashMap::new();
    let mut bn_after_repeat: HashSet<String> = HashSet::new();
    for (conv, ins) in &inserts {
        redirect.insert(ins.after.clone(), repeat_id(conv));
        if let Some(bn) = &ins.bn_before {
            let pre = if Some(conv.as_str()) == stem {
                shapes[conv.as_str()].c
            } else {
                shapes[conv.as_str()].c / beta
            };
            moved_bn.insert(bn.clone(), pre);
        }
    }
    for ins in inserts.values() {
        if ins.bn_before.is_none() {
            for c in g.consumers(&ins.after) {
                if matches!(g.node(c).unwrap().op, Op::BatchNorm { .. }) {
                    bn_after_repeat.insert(c.to_string());
                }
            }
        }
    }

    let mut out = Graph::new(g.name.clone());
    out.beta = beta;
    out.transformed = true;
    out.outputs = g
        .outputs
        .iter()
        .map(|o| redirect.get(o).cloned().unwrap_or_else(|| o.clone()))
        .collect();

    for node in g.nodes() {
        let id = node.id.as_str();
        let op = rewrite_op(node, Some(id) == stem, cfg, &moved_bn, &bn_after_repeat)?;
        let inputs = node
            .inputs
            .iter()
            .map(|i| {
                // the moved batch norm keeps reading its convolution
                if moved_bn.contains_key(id) {
                    i.clone()
                } else {
                    redirect.get(i).cloned().unwrap_or_else(|| i.clone())
                }
            })
            .collect();
        out.insert_node(Node {
            id: node.id.clone(),
            op,
            inputs,
        });
        for (conv, ins) in &inserts {
            if ins.after == id {
                out.insert_node(Node {
                    id: repeat_id(conv),
                    op: Op::Repeat { times: ins.times },
                    inputs: vec![ins.after.clone()],
                });
            }
        }
    }
    out.validate()?;
    Ok(out)
}

fn rewrite_op(
    node: &Node,
    is_stem: bool,
    cfg: &RepTranConfig,
    moved_bn: &HashMap<String, usize>,
    bn_after_repeat: &HashSet<String>,
) -> Result<Op> {
    let beta = cfg.beta;
    let id = node.id.as_str();
    let op = match node.op {
        Op::Conv(s) if is_stem => Op::Conv(s),
        Op::Bconv(s) if is_stem => Op::Bconv(s),
        Op::Conv(s) => {
            let r = s.with_beta(beta);
            r.validate().map_err(|e| e.at(id))?;
            Op::RepConv(r)
        }
        Op::Bconv(s) => {
            let r = s.with_beta(beta);
            r.validate().map_err(|e| e.at(id))?;
            Op::RepBconv(r)
        }
        Op::BatchNorm { channels, .. } => {
            if let Some(pre) = moved_bn.get(id) {
                Op::BatchNorm {
                    channels: *pre,
                    share: 1,
                }
            } else {
                Op::BatchNorm {
                    channels: channels * beta,
                    share: if bn_after_repeat.contains(id) {
                        beta * beta
                    } else {
                        1
                    },
                }
            }
        }
        Op::PReluShifted { channels } => Op::PReluShifted {
            channels: channels * beta,
        },
        Op::Fc {
            in_features,
            out_features,
        } => {
            let in_features = match cfg.last_layer {
                LastLayerPolicy::TakeAll => in_features * beta,
                LastLayerPolicy::TakeOneOverBeta => in_features,
                LastLayerPolicy::TakeOneOverBetaSquared => {
                    if in_features % beta != 0 {
                        return Err(Error::NonDivisibleChannels {
                            channels: in_features,
                            beta,
                            node: Some(id.into()),
                        });
                    }
                    in_features / beta
                }
            };
            Op::Fc {
                in_features,
                out_features,
            }
        }
        Op::RepConv(_) | Op::RepBconv(_) => {
            return Err(Error::UnsupportedNode {
                node: id.into(),
                kind: node.op.kind().into(),
            })
        }
        other => other,
    };
    Ok(op)
}

/// Summary of a successful [`verify_transform`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub beta: usize,
    pub convs_checked: usize,
    pub activations_checked: usize,
    pub conv_params: u64,
    pub conv_macs: u64,
    pub conv_bops: u64,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "beta\t{}", self.beta)?;
        writeln!(f, "convs_checked\t{}", self.convs_checked)?;
        writeln!(f, "activations_checked\t{}", self.activations_checked)?;
        writeln!(f, "conv_params\t{}", self.conv_params)?;
        writeln!(f, "conv_macs\t{}", self.conv_macs)?;
        writeln!(f, "conv_bops\t{}", self.conv_bops)?;
        write!(f, "status\tok")
    }
}

fn conv_work(op: &Op, shapes: &ShapeMap, id: &str) -> u64 {
    let s = op.conv_spec().unwrap();
    let d = shapes[id];
    s.macs_per_pixel() * (d.n * d.h * d.w) as u64
}

/// Node in `g1` that carries the activation of `g0` node `id`.
fn effective<'a>(g1: &'a Graph, id: &'a str) -> Option<&'a str> {
    let rep = repeat_id(id);
    if let Some(n) = g1.node(&rep) {
        if n.inputs.first().map(String::as_str) == Some(id) {
            return Some(&n.id);
        }
    }
    let node = g1.node(id)?;
    if matches!(node.op, Op::BatchNorm { .. }) {
        if let [c] = g1.consumers(id).as_slice() {
            let cn = g1.node(c).unwrap();
            if matches!(cn.op, Op::Repeat { .. }) && c.ends_with("_rep") {
                return Some(&cn.id);
            }
        }
    }
    Some(&node.id)
}

/// Checks that `g1` is a faithful rewrite of `g0`: convolution weights and
/// work unchanged node by node, every activation `beta` times wider, and
/// identical network outputs.
pub fn verify_transform(g0: &Graph, g1: &Graph, cfg: &RepTranConfig) -> Result<VerifyReport> {
    let fail = |m: String| Err(Error::VerificationFailed(m));
    if !g1.transformed || g1.beta != cfg.beta {
        return fail(format!(
            "rewritten graph must be marked with beta={} (found transformed={}, beta={})",
            cfg.beta, g1.transformed, g1.beta
        ));
    }
    let input = g0
        .default_input_dims()
        .ok_or_else(|| Error::VerificationFailed("baseline has no Input node".into()))?;
    let s0 = infer_shapes(g0, input)?;
    let s1 = infer_shapes(g1, input)
        .map_err(|e| Error::VerificationFailed(format!("rewritten graph is inconsistent: {e}")))?;
    let beta = cfg.beta;

    let mut report = VerifyReport {
        beta,
        convs_checked: 0,
        activations_checked: 0,
        conv_params: 0,
        conv_macs: 0,
        conv_bops: 0,
    };

    for n0 in g0.nodes().filter(|n| n.op.is_conv()) {
        let Some(n1) = g1.node(&n0.id) else {
            return fail(format!("conv '{}' missing after rewrite", n0.id));
        };
        if !n1.op.is_conv() || n1.op.is_binary_conv() != n0.op.is_binary_conv() {
            return fail(format!(
                "conv '{}' changed kind {} -> {}",
                n0.id,
                n0.op.kind(),
                n1.op.kind()
            ));
        }
        let (p0, p1) = (
            n0.op.conv_spec().unwrap().params(),
            n1.op.conv_spec().unwrap().params(),
        );
        if p0 != p1 {
            return fail(format!("conv '{}' params {p0} -> {p1}", n0.id));
        }
        let (w0, w1) = (
            conv_work(&n0.op, &s0, &n0.id),
            conv_work(&n1.op, &s1, &n1.id),
        );
        if w0 != w1 {
            return fail(format!("conv '{}' operations {w0} -> {w1}", n0.id));
        }
        report.convs_checked += 1;
        report.conv_params += p0;
        if n0.op.is_binary_conv() {
            report.conv_bops += w0;
        } else {
            report.conv_macs += w0;
        }
    }

    for n0 in g0.nodes() {
        if matches!(n0.op, Op::Input { .. } | Op::Fc { .. }) {
            continue;
        }
        // with the batch norm before the repeat, the raw conv output stays
        // narrow; its replicated form is checked at the batch norm
        if g1
            .node(&repeat_id(&n0.id))
            .is_some_and(|r| r.inputs.first() != Some(&n0.id))
        {
            continue;
        }
        let Some(eff) = effective(g1, &n0.id) else {
            return fail(format!("node '{}' missing after rewrite", n0.id));
        };
        let (d0, d1) = (s0[n0.id.as_str()], s1[eff]);
        if d1.c != d0.c * beta || (d0.n, d0.h, d0.w) != (d1.n, d1.h, d1.w) {
            return fail(format!(
                "activation of '{}' is {d1} after rewrite, expected channels x{beta} of {d0}",
                n0.id
            ));
        }
        report.activations_checked += 1;
    }

    let outs0 = g0.output_ids();
    let outs1 = g1.output_ids();
    if outs0.len() != outs1.len() {
        return fail("number of network outputs changed".into());
    }
    for (a, b) in outs0.iter().zip(&outs1) {
        if s0[*a] != s1[*b] {
            return fail(format!("output '{a}' {} -> {}", s0[*a], s1[*b]));
        }
    }
    Ok(report)
}
