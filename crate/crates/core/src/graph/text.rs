//! Line-oriented model text format.
//!
//! ```text
//! file     = { line "\n" }
//! line     = blank | comment | header | node
//! comment  = ws "#" { any }
//! header   = key "=" value                     ; key in name | beta | transformed | outputs
//! node     = ws id ws ":" ws kind ws "(" ws [ attrs ] ws ")" ws [ "<-" ws id { ws "," ws id } ] ws
//! attrs    = attr { ws "," ws attr }
//! attr     = key ws "=" ws uint
//! id       = 1*( ALPHA | DIGIT | "_" | "." | "-" )
//! ws       = { " " | "\t" }
//! ```
//!
//! Attributes per kind (`?` marks optional, default in brackets):
//!
//! | kind | attributes |
//! |------|------------|
//! | `Input` | `c`, `h`, `w` |
//! | `Conv`, `Bconv` | `cin`, `cout`, `kh`, `kw`, `s?` [1], `p?` [0] |
//! | `RepConv`, `RepBconv` | as above plus `beta` |
//! | `BatchNorm` | `c`, `share?` [1] |
//! | `PReLUShifted` | `c` |
//! | `AvgPool`, `MaxPool` | `k`, `s?` [k], or `global=1` alone |
//! | `Repeat` | `times` |
//! | `FC` | `in`, `out` |
//! | `Sign`, `ReLU`, `Add`, `Flatten` | none |
//!
//! `name` takes the rest of the line; `beta` an integer; `transformed` is
//! `0` or `1`; `outputs` a comma-separated id list. Anything after the
//! closing input list is rejected. The parsed graph is validated before it
//! is returned.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{valid_id, Graph, Node, Op, Pool};
use crate::error::{Error, Result};
use crate::tensor::ConvSpec;

/// Renders a graph in the text format. Nodes appear in insertion order.
pub fn emit_model(g: &Graph) -> String {
    let mut out = String::new();
    writeln!(out, "name={}", g.name).unwrap();
    writeln!(out, "beta={}", g.beta).unwrap();
    if g.transformed {
        writeln!(out, "transformed=1").unwrap();
    }
    if !g.outputs.is_empty() {
        writeln!(out, "outputs={}", g.outputs.join(",")).unwrap();
    }
    for n in g.nodes() {
        write!(out, "{}: {}({})", n.id, n.op.kind(), attrs_of(&n.op)).unwrap();
        if !n.inputs.is_empty() {
            write!(out, " <- {}", n.inputs.join(", ")).unwrap();
        }
        out.push('\n');
    }
    out
}

fn conv_attrs(s: &ConvSpec, with_beta: bool) -> String {
    let mut a = format!(
        "cin={}, cout={}, kh={}, kw={}, s={}, p={}",
        s.c_in, s.c_out, s.kh, s.kw, s.stride, s.padding
    );
    if with_beta {
        write!(a, ", beta={}", s.beta).unwrap();
    }
    a
}

fn pool_attrs(p: &Pool) -> String {
    match p {
        Pool::Global => "global=1".into(),
        Pool::Window { kernel, stride } => format!("k={kernel}, s={stride}"),
    }
}

fn attrs_of(op: &Op) -> String {
    match op {
        Op::Input { c, h, w } => format!("c={c}, h={h}, w={w}"),
        Op::Conv(s) | Op::Bconv(s) => conv_attrs(s, false),
        Op::RepConv(s) | Op::RepBconv(s) => conv_attrs(s, true),
        Op::BatchNorm { channels, share } => format!("c={channels}, share={share}"),
        Op::PReluShifted { channels } => format!("c={channels}"),
        Op::AvgPool(p) | Op::MaxPool(p) => pool_attrs(p),
        Op::Repeat { times } => format!("times={times}"),
        Op::Fc {
            in_features,
            out_features,
        } => format!("in={in_features}, out={out_features}"),
        Op::Sign | Op::Relu | Op::Add | Op::Flatten => String::new(),
    }
}

struct Cursor<'a> {
    line: usize,
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            column: self.pos + 1,
            message: msg.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn ws(&mut self) {
        while self.rest().starts_with([' ', '\t']) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, token: &str) -> bool {
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<()> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{token}'")))
        }
    }

    fn ident(&mut self) -> Result<&'a str> {
        let start = self.pos;
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')))
            .unwrap_or(self.rest().len());
        if len == 0 {
            return Err(self.err("expected identifier"));
        }
        self.pos += len;
        Ok(&self.text[start..start + len])
    }

    fn uint(&mut self) -> Result<usize> {
        let len = self
            .rest()
            .find(|c: char| !c.is_ascii_digit())
            .unwrap_or(self.rest().len());
        if len == 0 {
            return Err(self.err("expected unsigned integer"));
        }
        let s = &self.rest()[..len];
        let v = s
            .parse()
            .map_err(|_| self.err(format!("integer '{s}' out of range")))?;
        self.pos += len;
        Ok(v)
    }
}

/// Attribute bag that records which keys were consumed.
struct Attrs<'a> {
    values: BTreeMap<&'a str, (usize, usize)>,
    line: usize,
    open_col: usize,
}

impl<'a> Attrs<'a> {
    fn err(&self, msg: String) -> Error {
        Error::Parse {
            line: self.line,
            column: self.open_col,
            message: msg,
        }
    }

    fn req(&mut self, kind: &str, key: &str) -> Result<usize> {
        self.values
            .remove(key)
            .map(|(v, _)| v)
            .ok_or_else(|| self.err(format!("{kind} requires attribute '{key}'")))
    }

    fn opt(&mut self, key: &str, default: usize) -> usize {
        self.values.remove(key).map(|(v, _)| v).unwrap_or(default)
    }

    fn finish(self, kind: &str) -> Result<()> {
        if let Some((k, (_, col))) = self.values.iter().next() {
            return Err(Error::Parse {
                line: self.line,
                column: *col,
                message: format!("unknown attribute '{k}' for {kind}"),
            });
        }
        Ok(())
    }
}

fn conv_from(kind: &str, a: &mut Attrs, binary: bool, rep: bool) -> Result<ConvSpec> {
    let spec = ConvSpec {
        c_in: a.req(kind, "cin")?,
        c_out: a.req(kind, "cout")?,
        kh: a.req(kind, "kh")?,
        kw: a.req(kind, "kw")?,
        stride: a.opt("s", 1),
        padding: a.opt("p", 0),
        beta: if rep { a.req(kind, "beta")? } else { 1 },
        binary,
    };
    Ok(spec)
}

fn pool_from(kind: &str, a: &mut Attrs) -> Result<Pool> {
    if a.values.contains_key("global") {
        let g = a.req(kind, "global")?;
        if g != 1 {
            return Err(a.err("global must be 1 when present".into()));
        }
        return Ok(Pool::Global);
    }
    let kernel = a.req(kind, "k")?;
    Ok(Pool::Window {
        kernel,
        stride: a.opt("s", kernel),
    })
}

fn op_from(kind: &str, a: &mut Attrs) -> Result<Op> {
    let op = match kind {
        "Input" => Op::Input {
            c: a.req(kind, "c")?,
            h: a.req(kind, "h")?,
            w: a.req(kind, "w")?,
        },
        "Conv" => Op::Conv(conv_from(kind, a, false, false)?),
        "Bconv" => Op::Bconv(conv_from(kind, a, true, false)?),
        "RepConv" => Op::RepConv(conv_from(kind, a, false, true)?),
        "RepBconv" => Op::RepBconv(conv_from(kind, a, true, true)?),
        "BatchNorm" => Op::BatchNorm {
            channels: a.req(kind, "c")?,
            share: a.opt("share", 1),
        },
        "PReLUShifted" => Op::PReluShifted {
            channels: a.req(kind, "c")?,
        },
        "AvgPool" => Op::AvgPool(pool_from(kind, a)?),
        "MaxPool" => Op::MaxPool(pool_from(kind, a)?),
        "Repeat" => Op::Repeat {
            times: a.req(kind, "times")?,
        },
        "FC" => Op::Fc {
            in_features: a.req(kind, "in")?,
            out_features: a.req(kind, "out")?,
        },
        "Sign" => Op::Sign,
        "ReLU" => Op::Relu,
        "Add" => Op::Add,
        "Flatten" => Op::Flatten,
        other => return Err(a.err(format!("unknown node kind '{other}'"))),
    };
    Ok(op)
}

fn parse_node(cur: &mut Cursor) -> Result<Node> {
    cur.ws();
    let id = cur.ident()?.to_string();
    cur.ws();
    cur.expect(":")?;
    cur.ws();
    let kind_col = cur.pos + 1;
    let kind = cur.ident()?;
    cur.ws();
    let open_col = cur.pos + 1;
    cur.expect("(")?;
    let mut attrs = Attrs {
        values: BTreeMap::new(),
        line: cur.line,
        open_col,
    };
    cur.ws();
    if !cur.eat(")") {
        loop {
            cur.ws();
            let col = cur.pos + 1;
            let key = cur.ident()?;
            cur.ws();
            cur.expect("=")?;
            cur.ws();
            let v = cur.uint()?;
            if attrs.values.insert(key, (v, col)).is_some() {
                return Err(Error::Parse {
                    line: cur.line,
                    column: col,
                    message: format!("duplicate attribute '{key}'"),
                });
            }
            cur.ws();
            if cur.eat(")") {
                break;
            }
            cur.expect(",")?;
        }
    }
    attrs.open_col = kind_col;
    let op = op_from(kind, &mut attrs)?;
    attrs.finish(kind)?;

    cur.ws();
    let mut inputs = Vec::new();
    if cur.eat("<-") {
        loop {
            cur.ws();
            inputs.push(cur.ident()?.to_string());
            cur.ws();
            if !cur.eat(",") {
                break;
            }
        }
    }
    cur.ws();
    if !cur.rest().is_empty() {
        return Err(cur.err(format!("trailing characters '{}'", cur.rest())));
    }
    Ok(Node { id, op, inputs })
}

fn parse_header(g: &mut Graph, cur: &mut Cursor) -> Result<()> {
    cur.ws();
    let key = cur.ident()?;
    cur.expect("=")?;
    match key {
        "name" => g.name = cur.rest().trim().to_string(),
        "beta" => {
            g.beta = cur.uint()?;
        }
        "transformed" => {
            g.transformed = match cur.uint()? {
                0 => false,
                1 => true,
                _ => return Err(cur.err("transformed must be 0 or 1")),
            };
        }
        "outputs" => {
            g.outputs.clear();
            loop {
                cur.ws();
                g.outputs.push(cur.ident()?.to_string());
                cur.ws();
                if !cur.eat(",") {
                    break;
                }
            }
        }
        other => {
            cur.pos -= other.len() + 1;
            return Err(cur.err(format!("unknown header '{other}'")));
        }
    }
    if key != "name" {
        cur.ws();
        if !cur.rest().is_empty() {
            return Err(cur.err(format!("trailing characters '{}'", cur.rest())));
        }
    }
    Ok(())
}

fn is_header(line: &str) -> bool {
    let t = line.trim_start();
    let id_len = t
        .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')))
        .unwrap_or(t.len());
    id_len > 0 && t[id_len..].starts_with('=')
}

/// Parses and validates a model.
pub fn parse_model(text: &str) -> Result<Graph> {
    let mut g = Graph::new("");
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut cur = Cursor {
            line: i + 1,
            text: line,
            pos: 0,
        };
        if is_header(line) {
            parse_header(&mut g, &mut cur)?;
            continue;
        }
        let node = parse_node(&mut cur)?;
        debug_assert!(valid_id(&node.id));
        if g.contains(&node.id) {
            return Err(Error::Parse {
                line: i + 1,
                column: line.len() - line.trim_start().len() + 1,
                message: format!("duplicate node id '{}'", node.id),
            });
        }
        g.insert_node(node);
    }
    g.validate()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_resnet20;

    const THREE: &str = "\
# hand-written fixture
name=tiny
beta=1
input: Input(c=3, h=8, w=8)
conv: Conv(cin=3, cout=4, kh=3, kw=3, s=1, p=1) <- input
bn: BatchNorm(c=4) <- conv
";

    #[test]
    fn three_node_fixture() {
        let g = parse_model(THREE).unwrap();
        let mut want = Graph::new("tiny");
        want.add("input", Op::Input { c: 3, h: 8, w: 8 }, &[])
            .unwrap();
        want.add("conv", Op::Conv(ConvSpec::new(3, 4, 3, 1, 1)), &["input"])
            .unwrap();
        want.add(
            "bn",
            Op::BatchNorm {
                channels: 4,
                share: 1,
            },
            &["conv"],
        )
        .unwrap();
        assert_eq!(g, want);
    }

    #[test]
    fn resnet_roundtrip() {
        let g = build_resnet20(true);
        let text = emit_model(&g);
        let back = parse_model(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(emit_model(&back), text);
    }

    fn parse_err(text: &str) -> (usize, usize, String) {
        match parse_model(text) {
            Err(Error::Parse {
                line,
                column,
                message,
            }) => (line, column, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kind() {
        let (line, col, msg) = parse_err("input: Input(c=1, h=1, w=1)\nx: Softmax() <- input\n");
        assert_eq!(line, 2);
        assert_eq!(col, 4);
        assert!(msg.contains("Softmax"));
    }

    #[test]
    fn other_parse_errors() {
        let base = "input: Input(c=1, h=4, w=4)\n";
        let (_, _, m) = parse_err(&format!("{base}r: ReLU() <- input junk\n"));
        assert!(m.contains("trailing"), "{m}");
        let (_, _, m) = parse_err(&format!("{base}r: Repeat(times=2, foo=1) <- input\n"));
        assert!(m.contains("foo"), "{m}");
        let (_, _, m) = parse_err(&format!("{base}r: Repeat() <- input\n"));
        assert!(m.contains("times"), "{m}");
        let (_, _, m) = parse_err(&format!("{base}r: Repeat(times=x) <- input\n"));
        assert!(m.contains("integer"), "{m}");
        let (_, _, m) = parse_err(&format!("{base}input: ReLU() <- input\n"));
        assert!(m.contains("duplicate"), "{m}");
        let (_, _, m) = parse_err(&format!("colour=red\n{base}"));
        assert!(m.contains("header"), "{m}");
        let (l, c, _) = parse_err("input Input(c=1, h=1, w=1)\n");
        assert_eq!((l, c), (1, 7));
    }

    #[test]
    fn validation_after_parse() {
        let text = "input: Input(c=3, h=8, w=8)\nbn: BatchNorm(c=4) <- input\n";
        assert!(matches!(
            parse_model(text),
            Err(Error::ShapeMismatch { .. })
        ));
        let text = "input: Input(c=3, h=8, w=8)\nr: ReLU() <- nowhere\n";
        assert!(matches!(parse_model(text), Err(Error::Validation(_))));
    }

    #[test]
    fn defaults_and_global_pool() {
        let text = "\
input: Input(c=2, h=4, w=4)
p: AvgPool(k=2) <- input
g: MaxPool(global=1) <- p
";
        let g = parse_model(text).unwrap();
        assert_eq!(
            g.node("p").unwrap().op,
            Op::AvgPool(Pool::Window {
                kernel: 2,
                stride: 2
            })
        );
        assert_eq!(g.node("g").unwrap().op, Op::MaxPool(Pool::Global));
    }
}
