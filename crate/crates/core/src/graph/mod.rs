//! Network intermediate representation.
//!
//! A [`Graph`] is a DAG of typed layer [`Node`]s keyed by id, in insertion
//! order. Replicated convolutions (`RepConv`, `RepBconv`) are represented
//! as the reshaped convolution alone; the `beta^2` replication that follows
//! them is an explicit `Repeat` node, so batch-norm placement relative to
//! the replication is visible in the graph.

mod build;
mod shape;
mod text;

pub use build::{build_reactnet_a, build_resnet20, build_toy, ToyConfig};
pub use shape::{infer_shapes, ShapeMap};
pub use text::{emit_model, parse_model};

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Dims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pool {
    Window { kernel: usize, stride: usize },
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    /// Declared input extents; the batch size comes from the caller.
    Input {
        c: usize,
        h: usize,
        w: usize,
    },
    Conv(ConvSpec),
    Bconv(ConvSpec),
    RepConv(ConvSpec),
    RepBconv(ConvSpec),
    /// `share` is the number of replicated channel groups that reuse one
    /// normalization result (1 for an ordinary batch norm).
    BatchNorm {
        channels: usize,
        share: usize,
    },
    Sign,
    Relu,
    /// `x -> prelu(x - shift_in; slope) + shift_out`, all per channel.
    PReluShifted {
        channels: usize,
    },
    Add,
    AvgPool(Pool),
    MaxPool(Pool),
    Repeat {
        times: usize,
    },
    /// Consumes the first `in_features` features of its input.
    Fc {
        in_features: usize,
        out_features: usize,
    },
    Flatten,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "Input",
            Op::Conv(_) => "Conv",
            Op::Bconv(_) => "Bconv",
            Op::RepConv(_) => "RepConv",
            Op::RepBconv(_) => "RepBconv",
            Op::BatchNorm { .. } => "BatchNorm",
            Op::Sign => "Sign",
            Op::Relu => "ReLU",
            Op::PReluShifted { .. } => "PReLUShifted",
            Op::Add => "Add",
            Op::AvgPool(_) => "AvgPool",
            Op::MaxPool(_) => "MaxPool",
            Op::Repeat { .. } => "Repeat",
            Op::Fc { .. } => "FC",
            Op::Flatten => "Flatten",
        }
    }

    pub fn conv_spec(&self) -> Option<&ConvSpec> {
        match self {
            Op::Conv(s) | Op::Bconv(s) | Op::RepConv(s) | Op::RepBconv(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_conv(&self) -> bool {
        self.conv_spec().is_some()
    }

    pub fn is_binary_conv(&self) -> bool {
        matches!(self, Op::Bconv(_) | Op::RepBconv(_))
    }

    pub fn is_rep_conv(&self) -> bool {
        matches!(self, Op::RepConv(_) | Op::RepBconv(_))
    }

    fn arity(&self) -> Arity {
        match self {
            Op::Input { .. } => Arity::Exactly(0),
            Op::Add => Arity::AtLeast(2),
            _ => Arity::Exactly(1),
        }
    }
}

enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub op: Op,
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub name: String,
    /// Global replication factor; 1 for an untransformed network.
    pub beta: usize,
    /// Set by the replication rewrite; such graphs are refused as its input.
    pub transformed: bool,
    nodes: IndexMap<String, Node>,
    pub outputs: Vec<String>,
}

pub(crate) fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

impl Graph {
    pub fn new(name: impl Into<String>) -> Self {
        Graph {
            name: name.into(),
            beta: 1,
            transformed: false,
            nodes: IndexMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Appends a node. Inputs may reference nodes added later; validation
    /// resolves them.
    pub fn add(&mut self, id: impl Into<String>, op: Op, inputs: &[&str]) -> Result<String> {
        let id = id.into();
        if !valid_id(&id) {
            return Err(Error::Validation(vec![format!("invalid node id '{id}'")]));
        }
        if self.nodes.contains_key(&id) {
            return Err(Error::Validation(vec![format!("duplicate node id '{id}'")]));
        }
        self.nodes.insert(
            id.clone(),
            Node {
                id: id.clone(),
                op,
                inputs: inputs.iter().map(|s| s.to_string()).collect(),
            },
        );
        Ok(id)
    }

    pub(crate) fn insert_node(&mut self, node: Node) {
        self.nodes.insert(node.id.clone(), node);
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    #[cfg(test)]
    pub(crate) fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes.get_mut(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Ids of nodes that read `id`, in insertion order.
    pub fn consumers(&self, id: &str) -> Vec<&str> {
        self.nodes
            .values()
            .filter(|n| n.inputs.iter().any(|i| i == id))
            .map(|n| n.id.as_str())
            .collect()
    }

    pub fn input_node(&self) -> Option<&Node> {
        self.nodes
            .values()
            .find(|n| matches!(n.op, Op::Input { .. }))
    }

    /// Input dims declared by the `Input` node, with batch size 1.
    pub fn default_input_dims(&self) -> Option<Dims> {
        match self.input_node()?.op {
            Op::Input { c, h, w } => Some(Dims::new(1, c, h, w)),
            _ => None,
        }
    }

    /// Declared outputs, or every node without consumers when none are declared.
    pub fn output_ids(&self) -> Vec<&str> {
        if !self.outputs.is_empty() {
            return self.outputs.iter().map(String::as_str).collect();
        }
        let used: HashSet<&str> = self
            .nodes
            .values()
            .flat_map(|n| n.inputs.iter().map(String::as_str))
            .collect();
        self.nodes
            .keys()
            .map(String::as_str)
            .filter(|id| !used.contains(id))
            .collect()
    }

    /// Kahn's algorithm, ties broken by insertion order.
    pub fn topo_order(&self) -> Result<Vec<&str>> {
        let mut indegree: HashMap<&str, usize> = HashMap::new();
        let mut users: HashMap<&str, Vec<&str>> = HashMap::new();
        for n in self.nodes.values() {
            indegree.insert(&n.id, 0);
        }
        for n in self.nodes.values() {
            for i in &n.inputs {
                if !self.nodes.contains_key(i) {
                    return Err(Error::Validation(vec![format!(
                        "node '{}' reads unknown node '{i}'",
                        n.id
                    )]));
                }
                *indegree.get_mut(n.id.as_str()).unwrap() += 1;
                users.entry(i.as_str()).or_default().push(&n.id);
            }
        }
        let mut ready: VecDeque<&str> = self
            .nodes
            .keys()
            .map(String::as_str)
            .filter(|id| indegree[id] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_front() {
            order.push(id);
            if let Some(us) = users.get(id) {
                for u in us {
                    let d = indegree.get_mut(u).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.push_back(u);
                    }
                }
            }
        }
        if order.len() != self.nodes.len() {
            let stuck = self
                .nodes
                .keys()
                .find(|id| indegree[id.as_str()] > 0)
                .unwrap();
            return Err(Error::CycleDetected(stuck.clone()));
        }
        Ok(order)
    }

    /// Structural checks that need no shapes.
    fn structural_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let inputs = self
            .nodes
            .values()
            .filter(|n| matches!(n.op, Op::Input { .. }))
            .count();
        if inputs != 1 {
            problems.push(format!("expected exactly one Input node, found {inputs}"));
        }
        if self.beta == 0 {
            problems.push("beta must be at least 1".into());
        }
        for n in self.nodes.values() {
            let k = n.inputs.len();
            match n.op.arity() {
                Arity::Exactly(e) if k != e => problems.push(format!(
                    "node '{}' ({}) takes {e} input(s), has {k}",
                    n.id,
                    n.op.kind()
                )),
                Arity::AtLeast(e) if k < e => problems.push(format!(
                    "node '{}' ({}) takes at least {e} inputs, has {k}",
                    n.id,
                    n.op.kind()
                )),
                _ => {}
            }
            for i in &n.inputs {
                if !self.nodes.contains_key(i) {
                    problems.push(format!("node '{}' reads unknown node '{i}'", n.id));
                }
            }
            match &n.op {
                Op::Conv(s) | Op::Bconv(s) | Op::RepConv(s) | Op::RepBconv(s) => {
                    if let Err(e) = s.validate() {
                        problems.push(format!("node '{}': {e}", n.id));
                    }
                    if s.binary != n.op.is_binary_conv() {
                        problems.push(format!(
                            "node '{}': binary flag disagrees with kind {}",
                            n.id,
                            n.op.kind()
                        ));
                    }
                    if !n.op.is_rep_conv() && s.beta != 1 {
                        problems.push(format!(
                            "node '{}': plain {} cannot carry beta={}",
                            n.id,
                            n.op.kind(),
                            s.beta
                        ));
                    }
                }
                Op::Repeat { times: 0 } => {
                    problems.push(format!("node '{}': Repeat times must be >= 1", n.id))
                }
                Op::BatchNorm { channels, share } if *channels == 0 || *share == 0 => problems
                    .push(format!(
                        "node '{}': BatchNorm needs c >= 1, share >= 1",
                        n.id
                    )),
                Op::Fc {
                    in_features,
                    out_features,
                } if *in_features == 0 || *out_features == 0 => {
                    problems.push(format!("node '{}': FC features must be positive", n.id))
                }
                Op::AvgPool(Pool::Window { kernel, stride })
                | Op::MaxPool(Pool::Window { kernel, stride })
                    if *kernel == 0 || *stride == 0 =>
                {
                    problems.push(format!("node '{}': pool kernel/stride must be >= 1", n.id))
                }
                _ => {}
            }
        }
        for o in &self.outputs {
            if !self.nodes.contains_key(o) {
                problems.push(format!("declared output '{o}' does not exist"));
            }
        }
        problems
    }

    /// Checks structure, acyclicity and end-to-end shape inference at the
    /// declared input dims.
    pub fn validate(&self) -> Result<()> {
        let problems = self.structural_problems();
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        self.topo_order()?;
        let dims = self.default_input_dims().expect("one Input node");
        infer_shapes(self, dims)?;
        Ok(())
    }

    /// Nodes lying on the bypass branch of some `Add`.
    ///
    /// For each `Add`, every input is traced back through nodes with a
    /// single input and a single consumer until the fork point. The branch
    /// containing a binary convolution is the main path; without one, the
    /// longest branch is. All other branches are bypasses.
    pub fn bypass_nodes(&self) -> HashSet<String> {
        let mut out = HashSet::new();
        for add in self.nodes.values().filter(|n| n.op == Op::Add) {
            let branches: Vec<Vec<&str>> = add.inputs.iter().map(|i| self.branch_back(i)).collect();
            let main = branches
                .iter()
                .position(|b| b.iter().any(|id| self.nodes[*id].op.is_binary_conv()))
                .unwrap_or_else(|| {
                    // longest branch; first one on ties
                    let mut best = 0;
                    for (i, b) in branches.iter().enumerate() {
                        if b.len() > branches[best].len() {
                            best = i;
                        }
                    }
                    best
                });
            for (i, b) in branches.into_iter().enumerate() {
                if i != main {
                    out.extend(b.into_iter().map(str::to_string));
                }
            }
        }
        out
    }

    fn branch_back<'a>(&'a self, start: &'a str) -> Vec<&'a str> {
        let mut branch = Vec::new();
        let mut cur = start;
        loop {
            let node = &self.nodes[cur];
            if self.consumers(cur).len() != 1 || node.inputs.len() != 1 {
                break;
            }
            branch.push(cur);
            cur = &node.inputs[0];
        }
        branch
    }

    /// Bypass nodes on branches that downsample: the branch contains a conv
    /// or pool with stride > 1, or a channel-changing 1x1 conv.
    pub fn downsampling_bypass_nodes(&self) -> HashSet<String> {
        let bypass = self.bypass_nodes();
        let mut out = HashSet::new();
        for add in self.nodes.values().filter(|n| n.op == Op::Add) {
            for i in &add.inputs {
                let branch = self.branch_back(i);
                if branch.is_empty() || !branch.iter().all(|id| bypass.contains(*id)) {
                    continue;
                }
                let downsamples = branch.iter().any(|id| match &self.nodes[*id].op {
                    Op::AvgPool(Pool::Window { stride, .. })
                    | Op::MaxPool(Pool::Window { stride, .. }) => *stride > 1,
                    op => op.conv_spec().is_some_and(|s| {
                        s.stride > 1 || (s.kh == 1 && s.kw == 1 && s.c_in != s.c_out)
                    }),
                });
                if downsamples {
                    out.extend(branch.into_iter().map(str::to_string));
                }
            }
        }
        out
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&emit_model(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Graph {
        let mut g = Graph::new("t");
        g.add("in", Op::Input { c: 3, h: 8, w: 8 }, &[]).unwrap();
        g.add("conv", Op::Conv(ConvSpec::new(3, 4, 3, 1, 1)), &["in"])
            .unwrap();
        g.add(
            "bn",
            Op::BatchNorm {
                channels: 4,
                share: 1,
            },
            &["conv"],
        )
        .unwrap();
        g
    }

    #[test]
    fn topo_and_validate() {
        let g = chain();
        assert_eq!(g.topo_order().unwrap(), vec!["in", "conv", "bn"]);
        g.validate().unwrap();
        assert_eq!(g.output_ids(), vec!["bn"]);
    }

    #[test]
    fn cycle_detected() {
        let mut g = chain();
        g.node_mut("conv").unwrap().inputs = vec!["bn".into()];
        g.add("x", Op::Relu, &["in"]).unwrap();
        assert!(matches!(g.topo_order(), Err(Error::CycleDetected(_))));
    }

    #[test]
    fn structural_problems_listed() {
        let mut g = Graph::new("bad");
        g.add("a", Op::Relu, &["missing"]).unwrap();
        g.add("b", Op::Repeat { times: 0 }, &["a"]).unwrap();
        match g.validate() {
            Err(Error::Validation(p)) => {
                assert!(p.len() >= 3, "{p:?}");
            }
            other => panic!("{other:?}"),
        }
        assert!(g.add("a", Op::Relu, &[]).is_err());
        assert!(g.add("bad id", Op::Relu, &[]).is_err());
    }

    #[test]
    fn plain_conv_with_beta_is_invalid() {
        let mut g = Graph::new("t");
        g.add("in", Op::Input { c: 4, h: 4, w: 4 }, &[]).unwrap();
        g.add(
            "c",
            Op::Conv(ConvSpec::new(4, 4, 1, 1, 0).with_beta(2)),
            &["in"],
        )
        .unwrap();
        assert!(matches!(g.validate(), Err(Error::Validation(_))));
    }
}
