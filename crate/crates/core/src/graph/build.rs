//! Reference topologies.

use super::{Graph, Op, Pool};
use crate::tensor::ConvSpec;

fn add(g: &mut Graph, id: impl Into<String>, op: Op, inputs: &[&str]) -> String {
    g.add(id, op, inputs).expect("builder ids are unique")
}

fn bn(c: usize) -> Op {
    Op::BatchNorm {
        channels: c,
        share: 1,
    }
}

/// CIFAR ResNet-20: a 3x3 stem conv, three stages of three basic blocks
/// (16, 32, 64 channels, two 3x3 convs per block) and a 64 -> 10 classifier.
///
/// Layers are numbered as in the usual layer table: `layer1` is the stem,
/// `layer2` .. `layer19` the block convolutions.
///
/// With `binary` each block conv is `Sign -> Bconv -> BatchNorm` with its
/// own residual add around it. Without it, blocks are the plain float
/// `Conv-BN-ReLU-Conv-BN-Add-ReLU`. Downsampling residuals are
/// `AvgPool(2, 2) -> 1x1 Conv -> BatchNorm` in both variants.
pub fn build_resnet20(binary: bool) -> Graph {
    let name = if binary {
        "resnet20-binary"
    } else {
        "resnet20"
    };
    let mut g = Graph::new(name);
    add(&mut g, "input", Op::Input { c: 3, h: 32, w: 32 }, &[]);
    add(
        &mut g,
        "layer1_conv",
        Op::Conv(ConvSpec::new(3, 16, 3, 1, 1)),
        &["input"],
    );
    let mut prev = add(&mut g, "layer1_bn", bn(16), &["layer1_conv"]);
    if !binary {
        prev = add(&mut g, "layer1_relu", Op::Relu, &[&prev]);
    }

    let mut layer = 2;
    let mut c_in = 16;
    for (stage, c_out) in [16usize, 32, 64].into_iter().enumerate() {
        for block in 0..3 {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let shortcut = if stride != 1 || c_in != c_out {
                let l = format!("layer{layer}");
                let p = add(
                    &mut g,
                    format!("{l}_down_pool"),
                    Op::AvgPool(Pool::Window {
                        kernel: stride,
                        stride,
                    }),
                    &[&prev],
                );
                let c = add(
                    &mut g,
                    format!("{l}_down_conv"),
                    Op::Conv(ConvSpec::new(c_in, c_out, 1, 1, 0)),
                    &[&p],
                );
                add(&mut g, format!("{l}_down_bn"), bn(c_out), &[&c])
            } else {
                prev.clone()
            };

            if binary {
                let mut block_in = prev.clone();
                for (i, (ci, s)) in [(c_in, stride), (c_out, 1)].into_iter().enumerate() {
                    let l = format!("layer{layer}");
                    let sg = add(&mut g, format!("{l}_sign"), Op::Sign, &[&block_in]);
                    let cv = add(
                        &mut g,
                        format!("{l}_conv"),
                        Op::Bconv(ConvSpec::new(ci, c_out, 3, s, 1).binary()),
                        &[&sg],
                    );
                    let b = add(&mut g, format!("{l}_bn"), bn(c_out), &[&cv]);
                    let res = if i == 0 {
                        shortcut.clone()
                    } else {
                        block_in.clone()
                    };
                    block_in = add(&mut g, format!("{l}_add"), Op::Add, &[&b, &res]);
                    layer += 1;
                }
                prev = block_in;
            } else {
                let la = format!("layer{layer}");
                let c1 = add(
                    &mut g,
                    format!("{la}_conv"),
                    Op::Conv(ConvSpec::new(c_in, c_out, 3, stride, 1)),
                    &[&prev],
                );
                let b1 = add(&mut g, format!("{la}_bn"), bn(c_out), &[&c1]);
                let r1 = add(&mut g, format!("{la}_relu"), Op::Relu, &[&b1]);
                let lb = format!("layer{}", layer + 1);
                let c2 = add(
                    &mut g,
                    format!("{lb}_conv"),
                    Op::Conv(ConvSpec::new(c_out, c_out, 3, 1, 1)),
                    &[&r1],
                );
                let b2 = add(&mut g, format!("{lb}_bn"), bn(c_out), &[&c2]);
                let a = add(&mut g, format!("{lb}_add"), Op::Add, &[&b2, &shortcut]);
                prev = add(&mut g, format!("{lb}_relu"), Op::Relu, &[&a]);
                layer += 2;
            }
            c_in = c_out;
        }
    }
    head(&mut g, &prev, 64, 10);
    g
}

fn head(g: &mut Graph, prev: &str, features: usize, classes: usize) {
    add(g, "pool", Op::AvgPool(Pool::Global), &[prev]);
    add(g, "flatten", Op::Flatten, &["pool"]);
    add(
        g,
        "fc",
        Op::Fc {
            in_features: features,
            out_features: classes,
        },
        &["flatten"],
    );
    g.outputs = vec!["fc".into()];
}

/// MobileNetV1-shaped binary network at 224x224 for ImageNet.
///
/// Stem: full-precision 3x3 conv, 3 -> 32, stride 2. Then 13 blocks with
/// output widths 64, 128, 128, 256, 256, 512 x6, 1024, 1024; every width
/// change except the first halves the resolution. Each block is
///
/// ```text
/// x -> Sign -> Bconv3x3(c, c, s) -> BN -> Add(., x | AvgPool2x2(x)) -> PReLUShifted = y
/// y -> Sign -> Bconv1x1(c, c')   -> BN -> Add(., y | Repeat2(y))    -> PReLUShifted
/// ```
///
/// When the width doubles, the two duplicated 1x1 convolutions of the
/// reduction block are one `c -> 2c` Bconv and the residual is the input
/// repeated twice along channels, which is the same computation as
/// adding the input to each half and concatenating.
pub fn build_reactnet_a() -> Graph {
    const WIDTHS: [usize; 14] = [
        32, 64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024,
    ];
    let mut g = Graph::new("reactnet-a");
    add(
        &mut g,
        "input",
        Op::Input {
            c: 3,
            h: 224,
            w: 224,
        },
        &[],
    );
    add(
        &mut g,
        "stem_conv",
        Op::Conv(ConvSpec::new(3, 32, 3, 2, 1)),
        &["input"],
    );
    let mut prev = add(&mut g, "stem_bn", bn(32), &["stem_conv"]);

    for i in 1..WIDTHS.len() {
        let (cin, cout) = (WIDTHS[i - 1], WIDTHS[i]);
        let stride = if cin != cout && cout != 64 { 2 } else { 1 };
        let b = format!("b{i}");

        let s1 = add(&mut g, format!("{b}_sign1"), Op::Sign, &[&prev]);
        let c1 = add(
            &mut g,
            format!("{b}_conv3x3"),
            Op::Bconv(ConvSpec::new(cin, cin, 3, stride, 1).binary()),
            &[&s1],
        );
        let n1 = add(&mut g, format!("{b}_bn1"), bn(cin), &[&c1]);
        let short1 = if stride == 2 {
            add(
                &mut g,
                format!("{b}_pool"),
                Op::AvgPool(Pool::Window {
                    kernel: 2,
                    stride: 2,
                }),
                &[&prev],
            )
        } else {
            prev.clone()
        };
        let a1 = add(&mut g, format!("{b}_add1"), Op::Add, &[&n1, &short1]);
        let y = add(
            &mut g,
            format!("{b}_act1"),
            Op::PReluShifted { channels: cin },
            &[&a1],
        );

        let s2 = add(&mut g, format!("{b}_sign2"), Op::Sign, &[&y]);
        let c2 = add(
            &mut g,
            format!("{b}_conv1x1"),
            Op::Bconv(ConvSpec::new(cin, cout, 1, 1, 0).binary()),
            &[&s2],
        );
        let n2 = add(&mut g, format!("{b}_bn2"), bn(cout), &[&c2]);
        let short2 = if cout == cin {
            y.clone()
        } else {
            add(
                &mut g,
                format!("{b}_dup"),
                Op::Repeat { times: cout / cin },
                &[&y],
            )
        };
        let a2 = add(&mut g, format!("{b}_add2"), Op::Add, &[&n2, &short2]);
        prev = add(
            &mut g,
            format!("{b}_act2"),
            Op::PReluShifted { channels: cout },
            &[&a2],
        );
    }
    head(&mut g, &prev, 1024, 1000);
    g
}

/// Small network for desk-scale experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyConfig {
    pub in_channels: usize,
    pub hw: usize,
    pub channels: usize,
    pub blocks: usize,
    pub classes: usize,
    pub residual: bool,
    pub binary: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            in_channels: 3,
            hw: 8,
            channels: 8,
            blocks: 2,
            classes: 2,
            residual: true,
            binary: true,
        }
    }
}

/// `stem conv -> BN`, then `blocks` blocks at constant width, then global
/// pool and a linear classifier. Binary blocks are `Sign -> Bconv -> BN`;
/// float blocks are `Conv -> BN -> ReLU`. With `residual` each block output
/// is added to its input.
pub fn build_toy(cfg: ToyConfig) -> Graph {
    let mut g = Graph::new(if cfg.binary { "toy-binary" } else { "toy" });
    add(
        &mut g,
        "input",
        Op::Input {
            c: cfg.in_channels,
            h: cfg.hw,
            w: cfg.hw,
        },
        &[],
    );
    add(
        &mut g,
        "stem_conv",
        Op::Conv(ConvSpec::new(cfg.in_channels, cfg.channels, 3, 1, 1)),
        &["input"],
    );
    let mut prev = add(&mut g, "stem_bn", bn(cfg.channels), &["stem_conv"]);
    for k in 1..=cfg.blocks {
        let b = format!("b{k}");
        let spec = ConvSpec::new(cfg.channels, cfg.channels, 3, 1, 1);
        let out = if cfg.binary {
            let s = add(&mut g, format!("{b}_sign"), Op::Sign, &[&prev]);
            let c = add(&mut g, format!("{b}_conv"), Op::Bconv(spec.binary()), &[&s]);
            add(&mut g, format!("{b}_bn"), bn(cfg.channels), &[&c])
        } else {
            let c = add(&mut g, format!("{b}_conv"), Op::Conv(spec), &[&prev]);
            let n = add(&mut g, format!("{b}_bn"), bn(cfg.channels), &[&c]);
            add(&mut g, format!("{b}_relu"), Op::Relu, &[&n])
        };
        prev = if cfg.residual {
            add(&mut g, format!("{b}_add"), Op::Add, &[&out, &prev])
        } else {
            out
        };
    }
    head(&mut g, &prev, cfg.channels, cfg.classes);
    g
}
