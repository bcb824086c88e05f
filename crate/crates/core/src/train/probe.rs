//! Inspection of the replicated channel blocks of a trained network.
//!
//! For a replicated binary convolution the activation is followed at three
//! points: right after the `beta^2` repeat, after the batch norm that
//! consumes it, and after the residual add that consumes the batch norm.
//! Each activation is split into `beta^2` equal channel blocks. The repeat
//! output blocks are identical by construction; batch norm with per-channel
//! affine parameters can make them diverge, and the residual path carries
//! the divergence forward.

use std::fmt;
use std::fs;
use std::path::Path;

use super::engine::{Mode, Net, Tape};
use super::weights::Weights;
use crate::error::{Error, Result};
use crate::graph::{Graph, Op};
use crate::reptran::repeat_id;
use crate::tensor::blob::save_dense;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDiversity {
    pub layer: String,
    pub post_repeat: f64,
    pub post_bn: f64,
    /// `None` when no residual add follows the batch norm.
    pub post_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub beta: usize,
    pub layers: Vec<LayerDiversity>,
}

impl fmt::Display for DiversityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layer\tpost_repeat\tpost_bn\tpost_residual")?;
        for l in &self.layers {
            let r = l
                .post_residual
                .map_or("-".to_string(), |v| format!("{v:.6}"));
            writeln!(
                f,
                "{}\t{:.6}\t{:.6}\t{r}",
                l.layer, l.post_repeat, l.post_bn
            )?;
        }
        Ok(())
    }
}

/// Node ids of the three probe points of replicated conv `layer`.
struct Points {
    repeat: String,
    bn: String,
    residual: Option<String>,
}

fn points(g: &Graph, layer: &str) -> Result<Points> {
    let node = g
        .node(layer)
        .filter(|n| n.op.is_rep_conv())
        .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
    let rep = repeat_id(&node.id);
    if !g.contains(&rep) {
        return Err(Error::UnknownLayer(format!("{layer} (no '{rep}' node)")));
    }
    let is_bn = |id: &str| matches!(g.node(id).map(|n| &n.op), Some(Op::BatchNorm { .. }));
    // batch norm placed before the repeat: the repeat output is post-BN
    let bn = if is_bn(&g.node(&rep).unwrap().inputs[0]) {
        rep.clone()
    } else {
        match g.consumers(&rep).as_slice() {
            [c] if is_bn(c) => c.to_string(),
            _ => rep.clone(),
        }
    };
    let residual = g
        .consumers(&bn)
        .into_iter()
        .find(|c| g.node(c).unwrap().op == Op::Add)
        .map(str::to_string);
    Ok(Points {
        repeat: rep,
        bn,
        residual,
    })
}

/// Mean L2 distance over all pairs of the `blocks` channel blocks.
fn block_distance(t: &DenseTensor, blocks: usize) -> f64 {
    let d = t.dims();
    let size = d.c / blocks;
    let plane = d.plane();
    let (mut total, mut pairs) = (0.0f64, 0usize);
    for i in 0..blocks {
        for j in i + 1..blocks {
            let mut s = 0.0f64;
            for n in 0..d.n {
                let a = d.index(n, i * size, 0, 0);
                let b = d.index(n, j * size, 0, 0);
                for k in 0..size * plane {
                    s += (t.data()[a + k] as f64 - t.data()[b + k] as f64).powi(2);
                }
            }
            total += s.sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

fn eval_tape<'g>(g: &'g Graph, w: &Weights, input: &DenseTensor) -> Result<(Net<'g>, Tape)> {
    if !g.transformed || !g.nodes().any(|n| n.op.is_rep_conv()) {
        return Err(Error::NotRepGraph);
    }
    w.check(g)?;
    let net = Net::new(g)?;
    let tape = net.forward(w, input.clone(), Mode::Eval)?;
    Ok((net, tape))
}

/// Block distances at every replicated binary convolution, evaluated with
/// running batch-norm statistics on `probe`.
pub fn channel_diversity(g: &Graph, w: &Weights, probe: &DenseTensor) -> Result<DiversityReport> {
    let (net, tape) = eval_tape(g, w, probe)?;
    let blocks = g.beta * g.beta;
    let mut layers = Vec::new();
    for node in g.nodes().filter(|n| matches!(n.op, Op::RepBconv(_))) {
        let p = points(g, &node.id)?;
        let dist = |id: &str| block_distance(net.activation(&tape, id).unwrap(), blocks);
        layers.push(LayerDiversity {
            layer: node.id.clone(),
            post_repeat: dist(&p.repeat),
            post_bn: dist(&p.bn),
            post_residual: p.residual.as_deref().map(dist),
        });
    }
    Ok(DiversityReport {
        beta: g.beta,
        layers,
    })
}

/// The three probe activations of one replicated layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub post_repeat: DenseTensor,
    pub post_bn: DenseTensor,
    /// Equal to `post_bn` when no residual add follows.
    pub post_residual: DenseTensor,
}

impl FeatureDump {
    /// Writes `post_repeat.blob`, `post_bn.blob` and `post_residual.blob`
    /// into `dir`, creating it if needed.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_dense(dir.join("post_repeat.blob"), &self.post_repeat)?;
        save_dense(dir.join("post_bn.blob"), &self.post_bn)?;
        save_dense(dir.join("post_residual.blob"), &self.post_residual)?;
        Ok(())
    }
}

pub fn dump_features(
    g: &Graph,
    w: &Weights,
    input: &DenseTensor,
    layer: &str,
) -> Result<FeatureDump> {
    if !g.transformed {
        return Err(Error::NotRepGraph);
    }
    let p = points(g, layer)?;
    let (net, tape) = eval_tape(g, w, input)?;
    let act = |id: &str| net.activation(&tape, id).unwrap().clone();
    let post_bn = act(&p.bn);
    Ok(FeatureDump {
        post_repeat: act(&p.repeat),
        post_residual: p.residual.as_deref().map_or_else(|| post_bn.clone(), act),
        post_bn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_resnet20, build_toy, ToyConfig};
    use crate::reptran::{reptran, BnPosition, RepTranConfig};
    use crate::tensor::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probe(d: Dims, seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_raw(
            d,
            (0..d.numel())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    #[test]
    fn untrained_identity_bn_has_no_diversity() {
        let g0 = build_toy(ToyConfig {
            residual: false,
            ..Default::default()
        });
        let g = reptran(&g0, &RepTranConfig::new(2)).unwrap();
        let w = Weights::init(&g, &mut ChaCha8Rng::seed_from_u64(0), 0.0).unwrap();
        let r = channel_diversity(&g, &w, &probe(Dims::new(2, 3, 8, 8), 1)).unwrap();
        assert_eq!(r.layers.len(), 2);
        for l in &r.layers {
            assert_eq!(
                (l.post_repeat, l.post_bn, l.post_residual),
                (0.0, 0.0, None)
            );
        }
    }

    #[test]
    fn noisy_bn_diverges_after_bn_only() {
        let g = reptran(&build_toy(ToyConfig::default()), &RepTranConfig::new(2)).unwrap();
        let w = Weights::init(&g, &mut ChaCha8Rng::seed_from_u64(0), 0.1).unwrap();
        let r = channel_diversity(&g, &w, &probe(Dims::new(2, 3, 8, 8), 1)).unwrap();
        for l in &r.layers {
            assert_eq!(l.post_repeat, 0.0);
            assert!(l.post_bn > 0.0);
            assert!(l.post_residual.is_some());
        }
    }

    #[test]
    fn before_repeat_stays_symmetric() {
        let cfg = RepTranConfig::new(2).with_bn_position(BnPosition::BeforeRepeat);
        let g = reptran(&build_toy(ToyConfig::default()), &cfg).unwrap();
        let w = Weights::init(&g, &mut ChaCha8Rng::seed_from_u64(0), 0.1).unwrap();
        let r = channel_diversity(&g, &w, &probe(Dims::new(2, 3, 8, 8), 1)).unwrap();
        assert!(r.layers.iter().all(|l| l.post_bn == 0.0));
    }

    #[test]
    fn untransformed_graph_refused() {
        let g = build_toy(ToyConfig::default());
        let w = Weights::init(&g, &mut ChaCha8Rng::seed_from_u64(0), 0.0).unwrap();
        let x = probe(Dims::new(1, 3, 8, 8), 1);
        assert_eq!(channel_diversity(&g, &w, &x), Err(Error::NotRepGraph));
        assert_eq!(
            dump_features(&g, &w, &x, "b1_conv"),
            Err(Error::NotRepGraph)
        );
    }

    #[test]
    fn resnet_layer7_dump_has_32_channels() {
        let g = reptran(&build_resnet20(true), &RepTranConfig::new(2)).unwrap();
        let w = Weights::init(&g, &mut ChaCha8Rng::seed_from_u64(0), 0.01).unwrap();
        let x = probe(Dims::new(1, 3, 32, 32), 2);
        let d = dump_features(&g, &w, &x, "layer7_conv").unwrap();
        for t in [&d.post_repeat, &d.post_bn, &d.post_residual] {
            assert_eq!(t.dims(), Dims::new(1, 32, 32, 32));
        }
        assert!(matches!(
            dump_features(&g, &w, &x, "layer99_conv"),
            Err(Error::UnknownLayer(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        assert!(dir.path().join("post_residual.blob").exists());
    }
}
