//! Analytic FLOPs / BOPs / parameter counting.
//!
//! One multiply-accumulate is one FLOP, a binary convolution window costs
//! one BOP per XNOR-popcount term, and the aggregate is
//! `OPs = FLOPs + BOPs / 64`, kept as an exact rational.
//!
//! The headline totals cover the four categories of the usual cost table:
//! full-precision convolutions, the classifier, batch norm and binary
//! convolutions. Everything else is tracked per node but only enters the
//! extended total:
//!
//! * full-precision convolutions on the bypass branch of a residual add
//!   (the downsampling shortcuts of ResNet) are [`Category::Shortcut`];
//! * `Sign`, `ReLU`, `Add` (1 FLOP per element), `PReLUShifted` (3 per
//!   element) and pooling (1 per window tap) are [`Category::Elementwise`];
//! * `Repeat` costs nothing and reports its output size as activation
//!   memory.
//!
//! A batch norm costs 2 FLOPs per element. When `share > 1` groups of its
//! channels are exact copies, so the statistics are computed once per group
//! (`elements / share`) and only the per-element affine is paid in full.

use std::fmt::{self, Write as _};

use num_rational::Ratio;

use crate::error::Result;
use crate::graph::{infer_shapes, Graph, Op, Pool};
use crate::tensor::Dims;

/// FLOPs charged per multiply-accumulate.
pub const FLOPS_PER_MAC: u64 = 1;
/// BOPs that make up one OP.
pub const BOPS_PER_OP: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Conv,
    Bconv,
    Fc,
    BatchNorm,
    Shortcut,
    Elementwise,
    /// Input, Flatten, Repeat.
    Free,
}

impl Category {
    /// Counted in the headline OPs totals.
    pub fn is_headline(self) -> bool {
        matches!(
            self,
            Category::Conv | Category::Bconv | Category::Fc | Category::BatchNorm
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeCost {
    pub id: String,
    pub kind: &'static str,
    pub category: Category,
    pub flops: Ratio<u64>,
    pub bops: u64,
    pub params: u64,
    /// Output elements materialized by a `Repeat`.
    pub memory: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Totals {
    pub conv_flops: u64,
    pub fc_flops: u64,
    pub bn_flops: Ratio<u64>,
    pub bops: u64,
    pub shortcut_flops: u64,
    pub elementwise_flops: u64,
    pub params: u64,
    pub repeat_memory: u64,
}

impl Totals {
    /// Headline FLOPs: conv, classifier and batch norm.
    pub fn flops(&self) -> Ratio<u64> {
        self.bn_flops + self.conv_flops + self.fc_flops
    }

    pub fn ops_without_bn(&self) -> Ratio<u64> {
        Ratio::new(self.bops, BOPS_PER_OP) + self.conv_flops + self.fc_flops
    }

    pub fn ops_with_bn(&self) -> Ratio<u64> {
        self.ops_without_bn() + self.bn_flops
    }

    /// Headline OPs plus shortcut convolutions and elementwise work.
    pub fn extended_ops(&self) -> Ratio<u64> {
        self.ops_with_bn() + self.shortcut_flops + self.elementwise_flops
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub graph: String,
    pub input: Dims,
    pub per_node: Vec<NodeCost>,
    pub totals: Totals,
}

/// `1/(2 beta) + beta/2`: batch-norm cost after replication relative to
/// the baseline.
pub fn bn_cost_factor(beta: u64) -> Ratio<u64> {
    assert!(beta >= 1, "beta must be positive");
    Ratio::new(1 + beta * beta, 2 * beta)
}

fn elements(d: Dims) -> u64 {
    d.numel() as u64
}

/// Counts every node of `g` for an input of `input` dims.
pub fn count(g: &Graph, input: Dims) -> Result<CostReport> {
    let shapes = infer_shapes(g, input)?;
    let bypass = g.bypass_nodes();
    let mut per_node = Vec::with_capacity(shapes.len());
    let mut t = Totals::default();

    for (id, out) in &shapes {
        let node = g.node(id).unwrap();
        let in0 = node.inputs.first().map(|i| shapes[i.as_str()]);
        let mut c = NodeCost {
            id: id.clone(),
            kind: node.op.kind(),
            category: Category::Free,
            flops: Ratio::from_integer(0),
            bops: 0,
            params: 0,
            memory: 0,
        };
        match &node.op {
            Op::Conv(s) | Op::RepConv(s) | Op::Bconv(s) | Op::RepBconv(s) => {
                let macs = s.macs_per_pixel() * (out.n * out.h * out.w) as u64;
                c.params = s.params();
                if node.op.is_binary_conv() {
                    c.category = Category::Bconv;
                    c.bops = macs;
                    t.bops += macs;
                } else {
                    let f = macs * FLOPS_PER_MAC;
                    c.flops = Ratio::from_integer(f);
                    if bypass.contains(id) {
                        c.category = Category::Shortcut;
                        t.shortcut_flops += f;
                    } else {
                        c.category = Category::Conv;
                        t.conv_flops += f;
                    }
                }
            }
            Op::Fc {
                in_features,
                out_features,
            } => {
                let f = (in_features * out_features * out.n) as u64 * FLOPS_PER_MAC;
                c.category = Category::Fc;
                c.flops = Ratio::from_integer(f);
                c.params = (in_features * out_features + out_features) as u64;
                t.fc_flops += f;
            }
            Op::BatchNorm { channels, share } => {
                let e = elements(*out);
                c.category = Category::BatchNorm;
                c.flops = Ratio::new(e, *share as u64) + e;
                c.params = 2 * *channels as u64;
                t.bn_flops += c.flops;
            }
            Op::Sign | Op::Relu => {
                c.category = Category::Elementwise;
                c.flops = Ratio::from_integer(elements(*out));
            }
            Op::Add => {
                c.category = Category::Elementwise;
                c.flops = Ratio::from_integer(elements(*out) * (node.inputs.len() as u64 - 1));
            }
            Op::PReluShifted { channels } => {
                c.category = Category::Elementwise;
                c.flops = Ratio::from_integer(3 * elements(*out));
                c.params = 3 * *channels as u64;
            }
            Op::AvgPool(p) | Op::MaxPool(p) => {
                c.category = Category::Elementwise;
                let taps = match p {
                    Pool::Global => elements(in0.unwrap()),
                    Pool::Window { kernel, .. } => elements(*out) * (kernel * kernel) as u64,
                };
                c.flops = Ratio::from_integer(taps);
            }
            Op::Repeat { .. } => c.memory = elements(*out),
            Op::Input { .. } | Op::Flatten => {}
        }
        if c.category == Category::Elementwise {
            t.elementwise_flops += c.flops.to_integer();
        }
        t.params += c.params;
        t.repeat_memory += c.memory;
        per_node.push(c);
    }

    Ok(CostReport {
        graph: g.name.clone(),
        input,
        per_node,
        totals: t,
    })
}

fn signed(r: Ratio<u64>) -> Ratio<i128> {
    Ratio::new(*r.numer() as i128, *r.denom() as i128)
}

/// `after - before`, per category and in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostDelta {
    pub conv_flops: i128,
    pub fc_flops: i128,
    pub bn_flops: Ratio<i128>,
    pub bops: i128,
    pub shortcut_flops: i128,
    pub elementwise_flops: i128,
    pub params: i128,
    pub ops_without_bn: Ratio<i128>,
    pub ops_with_bn: Ratio<i128>,
}

pub fn diff(before: &CostReport, after: &CostReport) -> CostDelta {
    let (a, b) = (&before.totals, &after.totals);
    let d = |x: u64, y: u64| y as i128 - x as i128;
    CostDelta {
        conv_flops: d(a.conv_flops, b.conv_flops),
        fc_flops: d(a.fc_flops, b.fc_flops),
        bn_flops: signed(b.bn_flops) - signed(a.bn_flops),
        bops: d(a.bops, b.bops),
        shortcut_flops: d(a.shortcut_flops, b.shortcut_flops),
        elementwise_flops: d(a.elementwise_flops, b.elementwise_flops),
        params: d(a.params, b.params),
        ops_without_bn: signed(b.ops_without_bn()) - signed(a.ops_without_bn()),
        ops_with_bn: signed(b.ops_with_bn()) - signed(a.ops_with_bn()),
    }
}

/// Renders `v` as `0.ddd e k` with a mantissa in `[0.1, 1)`, e.g. `0.102e7`.
pub fn sci(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mut exp = v.abs().log10().floor() as i32 + 1;
    let mut m = (v / 10f64.powi(exp) * 1000.0).round() / 1000.0;
    if m.abs() >= 1.0 {
        exp += 1;
        m = (v / 10f64.powi(exp) * 1000.0).round() / 1000.0;
    }
    format!("{m:.3}e{exp}")
}

/// Renders `v` against a fixed exponent, e.g. `0.035e8` for `3545344` at 8.
pub fn sci_at(v: f64, exp: i32) -> String {
    format!("{:.3}e{exp}", v / 10f64.powi(exp))
}

fn as_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn as_f64_signed(r: Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl CostReport {
    /// Fixed-width per-node table followed by the category summary.
    pub fn render_table(&self, with_bn: bool) -> String {
        let mut s = String::new();
        let idw = self
            .per_node
            .iter()
            .map(|n| n.id.len())
            .max()
            .unwrap_or(2)
            .max(4);
        let _ = writeln!(s, "graph {} at input {}", self.graph, self.input);
        let _ = writeln!(
            s,
            "{:<idw$}  {:<12}  {:<11}  {:>14}  {:>14}  {:>10}",
            "node", "kind", "category", "flops", "bops", "params"
        );
        for n in &self.per_node {
            let _ = writeln!(
                s,
                "{:<idw$}  {:<12}  {:<11}  {:>14}  {:>14}  {:>10}",
                n.id,
                n.kind,
                format!("{:?}", n.category),
                n.flops.to_string(),
                n.bops,
                n.params
            );
        }
        s.push('\n');
        s.push_str(&self.render_summary(with_bn));
        s
    }

    /// The category summary: exact value and scientific rendering per row.
    pub fn render_summary(&self, with_bn: bool) -> String {
        let t = &self.totals;
        let mut rows: Vec<(&str, Ratio<u64>)> = vec![
            ("FC", Ratio::from_integer(t.fc_flops)),
            ("Conv", Ratio::from_integer(t.conv_flops)),
            ("BN", t.bn_flops),
            ("Bconv(BOPs)", Ratio::from_integer(t.bops)),
            ("OPs-without-BN", t.ops_without_bn()),
        ];
        if with_bn {
            rows.push(("OPs-with-BN", t.ops_with_bn()));
        }
        rows.push(("Shortcut", Ratio::from_integer(t.shortcut_flops)));
        rows.push(("Elementwise", Ratio::from_integer(t.elementwise_flops)));
        rows.push(("OPs-extended", t.extended_ops()));
        rows.push(("Params", Ratio::from_integer(t.params)));
        rows.push(("Repeat-memory", Ratio::from_integer(t.repeat_memory)));
        let mut s = String::new();
        for (name, v) in rows {
            let _ = writeln!(s, "{name:<15} {:>16}  {:>9}", v.to_string(), sci(as_f64(v)));
        }
        s
    }

    /// `node_id\tkind\tflops\tbops\tparams` rows and a `#`-prefixed
    /// totals footer.
    pub fn render_tsv(&self, with_bn: bool) -> String {
        let mut s = String::from("node_id\tkind\tflops\tbops\tparams\n");
        for n in &self.per_node {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                n.id, n.kind, n.flops, n.bops, n.params
            );
        }
        let t = &self.totals;
        let _ = writeln!(s, "#total_flops\t{}", t.flops());
        let _ = writeln!(s, "#total_bops\t{}", t.bops);
        let _ = writeln!(s, "#total_params\t{}", t.params);
        let _ = writeln!(s, "#fc_flops\t{}", t.fc_flops);
        let _ = writeln!(s, "#conv_flops\t{}", t.conv_flops);
        let _ = writeln!(s, "#bn_flops\t{}", t.bn_flops);
        let _ = writeln!(s, "#shortcut_flops\t{}", t.shortcut_flops);
        let _ = writeln!(s, "#elementwise_flops\t{}", t.elementwise_flops);
        let _ = writeln!(s, "#repeat_memory\t{}", t.repeat_memory);
        let _ = writeln!(s, "#ops_without_bn\t{}", t.ops_without_bn());
        if with_bn {
            let _ = writeln!(s, "#ops_with_bn\t{}", t.ops_with_bn());
        }
        s
    }
}

impl fmt::Display for CostDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, Ratio<i128>); 7] = [
            ("FC", Ratio::from_integer(self.fc_flops)),
            ("Conv", Ratio::from_integer(self.conv_flops)),
            ("BN", self.bn_flops),
            ("Bconv(BOPs)", Ratio::from_integer(self.bops)),
            ("OPs-without-BN", self.ops_without_bn),
            ("OPs-with-BN", self.ops_with_bn),
            ("Params", Ratio::from_integer(self.params)),
        ];
        for (name, v) in rows {
            writeln!(
                f,
                "delta {name:<15} {:>16}  {:>9}",
                v.to_string(),
                sci(as_f64_signed(v))
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_reactnet_a, build_resnet20, build_toy, ToyConfig};
    use crate::reptran::{reptran, LastLayerPolicy, RepTranConfig};

    fn int(r: Ratio<u64>) -> u64 {
        assert!(r.is_integer(), "{r} is not an integer");
        r.to_integer()
    }

    #[test]
    fn factor_values() {
        assert_eq!(bn_cost_factor(1), Ratio::from_integer(1));
        assert_eq!(bn_cost_factor(2), Ratio::new(5, 4));
        assert_eq!(bn_cost_factor(4), Ratio::new(17, 8));
    }

    #[test]
    fn input_only_graph_is_free() {
        let mut g = Graph::new("empty");
        g.add("input", Op::Input { c: 3, h: 4, w: 4 }, &[]).unwrap();
        let r = count(&g, Dims::new(1, 3, 4, 4)).unwrap();
        assert_eq!(r.totals, Totals::default());
    }

    // stem 3*16*9*32*32, block convs 9*16*16*9*1024 + 3*32*32*9*256
    // + 3*64*64*9*64 (first conv of stages 2 and 3 use the strided input
    // size, already the output size), FC 64*10
    #[test]
    fn resnet20_totals() {
        let r = count(&build_resnet20(true), Dims::new(1, 3, 32, 32)).unwrap();
        let t = r.totals;
        assert_eq!(t.conv_flops, 442_368);
        let bops: u64 = 6 * 16 * 16 * 9 * 1024
            + (32 * 16 + 5 * 32 * 32) * 9 * 256
            + (64 * 32 + 5 * 64 * 64) * 9 * 64;
        assert_eq!(t.bops, bops);
        assert_eq!(t.fc_flops, 640);
        assert_eq!(int(t.ops_without_bn()), 1_069_696);
        assert_eq!(t.shortcut_flops, 16 * 32 * 256 + 32 * 64 * 64);
    }

    #[test]
    fn resnet20_policies() {
        let g = build_resnet20(true);
        let d = Dims::new(1, 3, 32, 32);
        let raw = count(&g, d).unwrap();
        for (p, want) in [
            (LastLayerPolicy::TakeAll, 1_070_336u64),
            (LastLayerPolicy::TakeOneOverBeta, 1_069_696),
            (LastLayerPolicy::TakeOneOverBetaSquared, 1_069_376),
        ] {
            let g1 = reptran(&g, &RepTranConfig::new(2).with_last_layer(p)).unwrap();
            let r = count(&g1, d).unwrap();
            assert_eq!(int(r.totals.ops_without_bn()), want, "{p}");
            let delta = diff(&raw, &r);
            assert_eq!(
                delta.ops_without_bn,
                Ratio::from_integer(want as i128 - 1_069_696)
            );
        }
    }

    #[test]
    fn reactnet_exact_counts() {
        let g = build_reactnet_a();
        let d = Dims::new(1, 3, 224, 224);
        let t = count(&g, d).unwrap().totals;
        assert_eq!(t.conv_flops, 3 * 32 * 9 * 112 * 112);
        assert_eq!(t.fc_flops, 1_024_000);
        assert_eq!(int(t.bn_flops), 10_085_376);
        assert_eq!(t.bops, 4_816_896_000);
        assert_eq!(int(t.ops_without_bn()), 87_126_016);
        let g1 = reptran(&g, &RepTranConfig::new(2)).unwrap();
        let t1 = count(&g1, d).unwrap().totals;
        assert_eq!(t1.fc_flops, 2_048_000);
        assert_eq!(int(t1.bn_flops), 12_606_720);
        assert_eq!(int(t1.ops_with_bn()), 100_756_736);
    }

    #[test]
    fn bn_scales_by_factor_on_builders() {
        let graphs = [
            build_resnet20(true),
            build_resnet20(false),
            build_reactnet_a(),
            build_toy(ToyConfig::default()),
        ];
        for g in &graphs {
            let d = g.default_input_dims().unwrap();
            let before = count(g, d).unwrap().totals.bn_flops;
            for beta in [2u64, 4, 8] {
                let g1 = reptran(g, &RepTranConfig::new(beta as usize)).unwrap();
                let after = count(&g1, d).unwrap().totals.bn_flops;
                assert_eq!(
                    after,
                    before * bn_cost_factor(beta),
                    "{} beta {beta}",
                    g.name
                );
            }
        }
    }

    #[test]
    fn sci_rendering() {
        assert_eq!(sci(1_024_000.0), "0.102e7");
        assert_eq!(sci(87_126_016.0), "0.871e8");
        assert_eq!(sci(4_816_896_000.0), "0.482e10");
        assert_eq!(sci(999_999.0), "0.100e7");
        assert_eq!(sci(-320.0), "-0.320e3");
        assert_eq!(sci_at(3_545_344.0, 8), "0.035e8");
    }

    #[test]
    fn tsv_rows_sum_to_totals() {
        let r = count(&build_toy(ToyConfig::default()), Dims::new(2, 3, 8, 8)).unwrap();
        let tsv = r.render_tsv(true);
        let mut bops = 0u64;
        for line in tsv.lines().skip(1).filter(|l| !l.starts_with('#')) {
            bops += line.split('\t').nth(3).unwrap().parse::<u64>().unwrap();
        }
        assert_eq!(bops, r.totals.bops);
        assert!(tsv.contains("#ops_with_bn\t"));
    }
}
