//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any criterion fails.
//!
//! Published figures are written here as literals. Values that the library
//! also derives (quantization levels, tied weights, BN factor) are recomputed
//! by independent code in this file.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repbnn::conv::{conv2d_dense, conv2d_xnor, quantization_levels};
use repbnn::cost::{bn_cost_factor, count, diff, CostReport};
use repbnn::graph::{
    build_reactnet_a, build_resnet20, build_toy, infer_shapes, Graph, Op, ToyConfig,
};
use repbnn::reptran::{reptran, verify_transform, BnPosition, LastLayerPolicy, RepTranConfig};
use repbnn::tensor::{repeat_channels, sign_binarize, BitTensor, ConvSpec, DenseTensor, Dims};
use repbnn::train::{
    channel_diversity, evaluate, hardtanh, load_dataset, ste_grad, train_on, TrainConfig, Weights,
};

type Check = Result<String, String>;

struct Criterion {
    id: &'static str,
    name: &'static str,
    check: fn() -> Check,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < budget, || format!("took {t:.2?}, budget {budget:.0?}"))
}

fn f(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn rel_close(name: &str, got: f64, want: f64, tol: f64) -> Result<String, String> {
    let rel = (got - want).abs() / want.abs();
    ensure(rel <= tol, || {
        format!(
            "{name}: got {got:.4e}, published {want:.4e}, off by {:.2}%",
            rel * 100.0
        )
    })?;
    Ok(format!("{name} {:+.2}%", (got - want) / want * 100.0))
}

// ReActNet-A cost table at 224x224 input
fn c1_reactnet_costs() -> Check {
    let start = Instant::now();
    let tol = 0.015;
    let d = Dims::new(1, 3, 224, 224);
    let g = build_reactnet_a();
    let before = count(&g, d).map_err(|e| e.to_string())?;
    let g1 = reptran(&g, &RepTranConfig::new(2)).map_err(|e| e.to_string())?;
    let after = count(&g1, d).map_err(|e| e.to_string())?;
    let (b, a) = (before.totals, after.totals);
    let delta = diff(&before, &after);
    let rows = [
        ("FC", b.fc_flops as f64, 0.102e7),
        ("Conv", b.conv_flops as f64, 1.084e7),
        ("BN", f(b.bn_flops), 1.009e7),
        ("Bconv", b.bops as f64, 4.822e9),
        ("OPs-without-BN", f(b.ops_without_bn()), 0.872e8),
        ("rep FC", a.fc_flops as f64, 0.205e7),
        ("rep BN", f(a.bn_flops), 1.261e7),
        ("rep OPs-without-BN", f(a.ops_without_bn()), 0.882e8),
        ("rep OPs-with-BN", f(a.ops_with_bn()), 1.008e8),
        (
            "delta BN",
            *delta.bn_flops.numer() as f64 / *delta.bn_flops.denom() as f64,
            0.252e7,
        ),
        (
            "delta OPs-with-BN",
            *delta.ops_with_bn.numer() as f64 / *delta.ops_with_bn.denom() as f64,
            0.035e8,
        ),
    ];
    let mut worst = (String::new(), 0.0f64);
    for (name, got, want) in rows {
        rel_close(name, got, want, tol)?;
        let rel = (got - want).abs() / want;
        if rel > worst.1 {
            worst = (name.to_string(), rel);
        }
    }
    within(Duration::from_secs(1), start)?;
    Ok(format!(
        "11 cells within 1.5%, worst {} at {:.2}%, {:.0?}",
        worst.0,
        worst.1 * 100.0,
        start.elapsed()
    ))
}

fn ops(r: &CostReport) -> Result<u64, String> {
    let o = r.totals.ops_without_bn();
    ensure(o.is_integer(), || format!("OPs {o} is not an integer"))?;
    Ok(o.to_integer())
}

// ResNet-20 OPs for the three classifier policies at beta = 2
fn c2_resnet_policies() -> Check {
    let start = Instant::now();
    let d = Dims::new(1, 3, 32, 32);
    let g = build_resnet20(true);
    let raw = count(&g, d).map_err(|e| e.to_string())?;
    let raw_ops = ops(&raw)?;
    ensure(raw_ops == 1_069_696, || {
        format!("raw OPs {raw_ops}, published 1069696")
    })?;
    let mut deltas = Vec::new();
    for (policy, want) in [
        (LastLayerPolicy::TakeAll, 640i128),
        (LastLayerPolicy::TakeOneOverBeta, 0),
        (LastLayerPolicy::TakeOneOverBetaSquared, -320),
    ] {
        let g1 = reptran(&g, &RepTranConfig::new(2).with_last_layer(policy))
            .map_err(|e| e.to_string())?;
        let r = count(&g1, d).map_err(|e| e.to_string())?;
        let got = ops(&r)? as i128 - raw_ops as i128;
        ensure(got == want, || {
            format!("{policy}: delta {got}, published {want}")
        })?;
        let dd = diff(&raw, &r).ops_without_bn;
        ensure(dd == Ratio::from_integer(want), || {
            format!("diff() reports {dd}")
        })?;
        deltas.push(got);
    }
    within(Duration::from_secs(1), start)?;
    Ok(format!(
        "raw 1069696, deltas {deltas:?}, {:.0?}",
        start.elapsed()
    ))
}

fn builders() -> Vec<Graph> {
    vec![
        build_resnet20(true),
        build_resnet20(false),
        build_reactnet_a(),
        build_toy(ToyConfig::default()),
        build_toy(ToyConfig {
            binary: false,
            residual: false,
            ..Default::default()
        }),
    ]
}

// batch-norm cost factor, as a formula and on whole graphs
fn c3_bn_factor() -> Check {
    for beta in [1u64, 2, 4, 8] {
        let want = Ratio::new(1, 2 * beta) + Ratio::new(beta, 2);
        let got = bn_cost_factor(beta);
        ensure(got == want, || {
            format!("beta {beta}: factor {got}, formula {want}")
        })?;
        let float = 1.0 / (2.0 * beta as f64) + beta as f64 / 2.0;
        ensure((f(got) - float).abs() < 1e-12, || {
            format!("beta {beta}: {got} vs {float}")
        })?;
    }
    let mut checked = 0;
    for g in builders() {
        let d = g.default_input_dims().unwrap();
        let before = count(&g, d).map_err(|e| e.to_string())?.totals.bn_flops;
        for beta in [2u64, 4, 8] {
            let g1 = reptran(&g, &RepTranConfig::new(beta as usize)).map_err(|e| e.to_string())?;
            let after = count(&g1, d).map_err(|e| e.to_string())?.totals.bn_flops;
            let want = before * (Ratio::new(1, 2 * beta) + Ratio::new(beta, 2));
            ensure(after == want, || {
                format!("{} beta {beta}: BN {after}, expected {want}", g.name)
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "factor exact for beta 1,2,4,8; {checked} graph/beta pairs exact"
    ))
}

fn naive_binary_conv(x: &[i32], xd: Dims, w: &[i32], s: &ConvSpec) -> Vec<i32> {
    let (oh, ow) = s.out_hw(xd.h, xd.w).unwrap();
    let mut out = Vec::with_capacity(xd.n * s.c_out * oh * ow);
    for n in 0..xd.n {
        for o in 0..s.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0;
                    for i in 0..s.c_in {
                        for ky in 0..s.kh {
                            for kx in 0..s.kw {
                                let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                                let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                                if iy < 0 || ix < 0 || iy >= xd.h as isize || ix >= xd.w as isize {
                                    continue;
                                }
                                let xv =
                                    x[((n * xd.c + i) * xd.h + iy as usize) * xd.w + ix as usize];
                                let wv = w[((o * s.c_in + i) * s.kh + ky) * s.kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn pm1(rng: &mut ChaCha8Rng, len: usize) -> Vec<i32> {
    (0..len)
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect()
}

fn dense(d: Dims, v: &[i32]) -> DenseTensor {
    DenseTensor::new(d, v.iter().map(|x| *x as f32).collect()).unwrap()
}

// XNOR/popcount against dense convolution
fn c4_xnor_vs_dense() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let mut cases = 0;
    let mut combos = [[0usize; 2]; 2];
    while cases < 1200 {
        let stride = 1 + cases % 2;
        let padding = (cases / 2) % 2;
        let k = rng.random_range(1..=3);
        let xd = Dims::new(
            rng.random_range(1..=2),
            rng.random_range(1..=70),
            rng.random_range(1..=9),
            rng.random_range(1..=9),
        );
        if xd.h + 2 * padding < k || xd.w + 2 * padding < k {
            continue;
        }
        let spec = ConvSpec::new(xd.c, rng.random_range(1..=4), k, stride, padding).binary();
        let x = pm1(&mut rng, xd.numel());
        let w = pm1(&mut rng, spec.kernel_dims().numel());
        let want = naive_binary_conv(&x, xd, &w, &spec);
        let xt = dense(xd, &x);
        let wt = dense(spec.kernel_dims(), &w);
        let d = conv2d_dense(&xt, &wt, &spec).map_err(|e| e.to_string())?;
        let b = conv2d_xnor(&sign_binarize(&xt), &sign_binarize(&wt), &spec)
            .map_err(|e| e.to_string())?;
        let want_f: Vec<f32> = want.iter().map(|v| *v as f32).collect();
        ensure(d.data() == want_f.as_slice(), || {
            format!("dense differs, case {cases} {spec:?}")
        })?;
        ensure(b.data() == d.data(), || {
            format!("xnor differs, case {cases} {spec:?} {xd}")
        })?;
        combos[stride - 1][padding] += 1;
        cases += 1;
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!(
        "{cases} cases bit-exact (stride,padding counts {:?}), {:.2?}",
        combos,
        start.elapsed()
    ))
}

fn effective_out<'a>(g1: &'a Graph, id: &'a str) -> &'a str {
    let rep = format!("{id}_rep");
    g1.nodes()
        .find(|n| n.id == rep)
        .map_or(id, |n| n.id.as_str())
}

fn tied_weights_check(beta: usize) -> Result<f32, String> {
    let e = |e: repbnn::Error| e.to_string();
    let g0 = build_toy(ToyConfig {
        binary: false,
        residual: false,
        ..Default::default()
    });
    let g1 = reptran(&g0, &RepTranConfig::new(beta)).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(beta as u64);
    let mut w1 = Weights::init(&g1, &mut rng, 0.0).map_err(e)?;
    let mut w0 = Weights::init(&g0, &mut rng, 0.0).map_err(e)?;
    for n in g0.nodes() {
        match n.op {
            Op::Conv(_) if n.id == "stem_conv" => {
                let k = w1.get(&n.id, "weight").unwrap().clone();
                w0.set(&n.id, "weight", k).map_err(e)?;
            }
            // original kernel W0[o][i] = sum over m of K[o mod (c_out/beta)][m*c_in + i]
            Op::Conv(s) => {
                let k = w1.get(&n.id, "weight").unwrap().data().to_vec();
                let (co, ci, kk) = (s.c_out, s.c_in, s.kh * s.kw);
                let ko = co / beta;
                let mut folded = vec![0.0f32; co * ci * kk];
                for o in 0..co {
                    for i in 0..ci {
                        for t in 0..kk {
                            folded[(o * ci + i) * kk + t] = (0..beta)
                                .map(|m| k[((o % ko) * ci * beta + m * ci + i) * kk + t])
                                .sum();
                        }
                    }
                }
                w0.set(
                    &n.id,
                    "weight",
                    DenseTensor::new(s.kernel_dims(), folded).unwrap(),
                )
                .map_err(e)?;
            }
            // classifier over beta tiled copies, scaled by 1/beta
            Op::Fc {
                in_features,
                out_features,
            } => {
                let k0 = w0.get(&n.id, "weight").unwrap().data().to_vec();
                let fin1 = in_features * beta;
                let mut k1 = vec![0.0f32; out_features * fin1];
                for o in 0..out_features {
                    for j in 0..fin1 {
                        k1[o * fin1 + j] = k0[o * in_features + j % in_features] / beta as f32;
                    }
                }
                w1.set(
                    &n.id,
                    "weight",
                    DenseTensor::new(Dims::new(out_features, fin1, 1, 1), k1).unwrap(),
                )
                .map_err(e)?;
                let b = w0.get(&n.id, "bias").unwrap().clone();
                w1.set(&n.id, "bias", b).map_err(e)?;
            }
            _ => {}
        }
    }
    let d = Dims::new(3, 3, 8, 8);
    let x = DenseTensor::new(
        d,
        (0..d.numel())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let a0 = evaluate(&g0, &w0, &x).map_err(e)?;
    let a1 = evaluate(&g1, &w1, &x).map_err(e)?;
    let mut worst = 0.0f32;
    for n in g0.nodes() {
        if matches!(n.op, Op::Input { .. } | Op::Fc { .. } | Op::Flatten) {
            continue;
        }
        let want = repeat_channels(&a0[&n.id], beta).unwrap();
        let got = &a1[effective_out(&g1, &n.id)];
        let diff = got
            .max_abs_diff(&want)
            .ok_or_else(|| format!("{}: dims {} vs {}", n.id, got.dims(), want.dims()))?;
        let scale = want.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
        ensure(diff <= 1e-5 * scale, || {
            format!("{}: activations differ by {diff}", n.id)
        })?;
        worst = worst.max(diff / scale);
    }
    let out = g0.output_ids()[0];
    let diff = a1[out].max_abs_diff(&a0[out]).unwrap();
    ensure(diff <= 1e-5, || format!("logits differ by {diff}"))?;
    Ok(worst.max(diff))
}

// convolution cost and width invariance under the rewrite
fn c5_reptran_invariance() -> Check {
    let mut pairs = 0;
    for g in builders() {
        let d = g.default_input_dims().unwrap();
        let s0 = infer_shapes(&g, d).map_err(|e| e.to_string())?;
        for beta in [2usize, 4, 8] {
            let cfg = RepTranConfig::new(beta);
            let g1 = reptran(&g, &cfg).map_err(|e| e.to_string())?;
            verify_transform(&g, &g1, &cfg).map_err(|e| format!("{} beta {beta}: {e}", g.name))?;
            let s1 = infer_shapes(&g1, d).map_err(|e| e.to_string())?;
            for n0 in g.nodes() {
                let n1 = g1.nodes().find(|n| n.id == n0.id).ok_or("node lost")?;
                if let (Some(a), Some(b)) = (n0.op.conv_spec(), n1.op.conv_spec()) {
                    let p0 = a.c_out * a.c_in * a.kh * a.kw;
                    let p1 = b.reshaped_kernel_dims().numel();
                    ensure(p0 == p1, || format!("{}: params {p0} -> {p1}", n0.id))?;
                    let o0 = s0[n0.id.as_str()];
                    let o1 = s1[n0.id.as_str()];
                    let m0 = p0 * o0.h * o0.w;
                    let m1 = p1 * o1.h * o1.w;
                    ensure(m0 == m1, || format!("{}: ops {m0} -> {m1}", n0.id))?;
                    let w0 = o0.c;
                    let w1 = s1[effective_out(&g1, &n0.id)].c;
                    ensure(w1 == beta * w0, || format!("{}: width {w0} -> {w1}", n0.id))?;
                }
                if let (Op::BatchNorm { channels: c0, .. }, Op::BatchNorm { channels: c1, .. }) =
                    (n0.op, n1.op)
                {
                    ensure(c1 == beta * c0, || {
                        format!("{}: bn width {c0} -> {c1}", n0.id)
                    })?;
                }
            }
            let (r0, r1) = (count(&g, d).unwrap().totals, count(&g1, d).unwrap().totals);
            ensure(
                r0.conv_flops == r1.conv_flops
                    && r0.shortcut_flops == r1.shortcut_flops
                    && r0.bops == r1.bops,
                || format!("{} beta {beta}: conv totals changed", g.name),
            )?;
            pairs += 1;
        }
    }
    let e2 = tied_weights_check(2)?;
    let e4 = tied_weights_check(4)?;
    Ok(format!(
        "{pairs} graph/beta pairs invariant; tied-weights toy matches (rel err {:.1e})",
        e2.max(e4)
    ))
}

// distinct outputs of a 1 x c_in x 1 x 1 binary convolution
fn c6_quantization_levels() -> Check {
    for c_in in 1..=8usize {
        let spec = ConvSpec::new(c_in, 1, 1, 1, 0).binary();
        let patterns = 1usize << c_in;
        let to_pm = |bits: usize| -> Vec<f32> {
            (0..c_in)
                .map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect()
        };
        let xs: Vec<f32> = (0..patterns).flat_map(to_pm).collect();
        let x = sign_binarize(&DenseTensor::new(Dims::new(patterns, c_in, 1, 1), xs).unwrap());
        let mut seen = std::collections::BTreeSet::new();
        for wbits in 0..patterns {
            let w: BitTensor =
                sign_binarize(&DenseTensor::new(spec.kernel_dims(), to_pm(wbits)).unwrap());
            let y = conv2d_xnor(&x, &w, &spec).map_err(|e| e.to_string())?;
            seen.extend(y.data().iter().map(|v| *v as i64));
        }
        let want: Vec<i64> = (0..=c_in as i64).map(|k| 2 * k - c_in as i64).collect();
        let got: Vec<i64> = seen.into_iter().collect();
        ensure(got == want, || {
            format!("c_in {c_in}: values {got:?}, expected {want:?}")
        })?;
        ensure(
            got.iter().all(|v| (v - c_in as i64).rem_euclid(2) == 0),
            || format!("c_in {c_in}: parity"),
        )?;
        ensure(quantization_levels(&spec) == c_in + 1, || {
            format!("c_in {c_in}: formula")
        })?;
    }
    for (ci, k) in [(16usize, 3usize), (32, 3), (1, 1)] {
        let spec = ConvSpec::new(ci, 4, k, 1, 1).binary();
        ensure(quantization_levels(&spec) == ci * k * k + 1, || {
            format!("formula {ci}x{k}x{k}")
        })?;
    }
    Ok("c_in 1..8 exhaustive: c_in+1 values of matching parity; formula holds".into())
}

fn blocks_equal(t: &DenseTensor, blocks: usize) -> bool {
    let size = t.dims().c / blocks;
    let first = t.channel_block(0, size).unwrap();
    (1..blocks).all(|b| t.channel_block(b * size, size).unwrap() == first)
}

fn toy_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        deterministic: true,
        ..Default::default()
    }
}

// symmetry of replicated blocks with and without BN after the repeat
fn c7_symmetry() -> Check {
    let e = |e: repbnn::Error| e.to_string();
    let cfg = toy_train_config(3);
    let data = load_dataset(&cfg.dataset, cfg.seed).map_err(e)?;
    let (probe, _) = data.batch(&(0..16).collect::<Vec<_>>());

    let plain = build_toy(ToyConfig {
        residual: false,
        ..Default::default()
    });
    let before = reptran(
        &plain,
        &RepTranConfig::new(2).with_bn_position(BnPosition::BeforeRepeat),
    )
    .map_err(e)?;
    let out = train_on(
        &before,
        &data,
        &TrainConfig {
            max_steps: Some(10),
            ..cfg.clone()
        },
    )
    .map_err(e)?;
    ensure(out.steps == 10, || format!("ran {} steps", out.steps))?;
    let acts = evaluate(&before, &out.weights, &probe).map_err(e)?;
    let mut layers_a = 0;
    for n in before.nodes() {
        if let Op::Repeat { times } = n.op {
            ensure(blocks_equal(&acts[&n.id], times), || {
                format!("{}: blocks differ", n.id)
            })?;
            layers_a += 1;
        }
    }
    let div = channel_diversity(&before, &out.weights, &probe).map_err(e)?;
    ensure(
        div.layers
            .iter()
            .all(|l| l.post_repeat == 0.0 && l.post_bn == 0.0),
        || format!("before-repeat diversity not zero:\n{div}"),
    )?;

    let residual = build_toy(ToyConfig::default());
    let after = reptran(&residual, &RepTranConfig::new(2)).map_err(e)?;
    let out = train_on(&after, &data, &cfg).map_err(e)?;
    let div = channel_diversity(&after, &out.weights, &probe).map_err(e)?;
    ensure(!div.layers.is_empty(), || "no replicated layers".into())?;
    for l in &div.layers {
        ensure(l.post_repeat == 0.0, || {
            format!("{}: post-repeat {}", l.layer, l.post_repeat)
        })?;
        ensure(l.post_bn > 0.0, || {
            format!("{}: post-BN distance is 0", l.layer)
        })?;
    }
    let bn: Vec<String> = div
        .layers
        .iter()
        .map(|l| format!("{:.3}", l.post_bn))
        .collect();
    Ok(format!(
        "(a) {layers_a} repeats exactly symmetric after 10 steps; (b) post-BN distances [{}]",
        bn.join(", ")
    ))
}

// trainer determinism, descent and estimator
fn c8_trainer() -> Check {
    let start = Instant::now();
    let e = |e: repbnn::Error| e.to_string();
    let base = build_toy(ToyConfig::default());
    let rep = reptran(&base, &RepTranConfig::new(2)).map_err(e)?;
    let cfg = toy_train_config(7);
    let data = load_dataset(&cfg.dataset, cfg.seed).map_err(e)?;
    let mut summary = Vec::new();
    for (name, g) in [("baseline", &base), ("beta=2", &rep)] {
        let a = train_on(g, &data, &cfg).map_err(e)?;
        let b = train_on(g, &data, &cfg).map_err(e)?;
        ensure(a.weights.encode() == b.weights.encode(), || {
            format!("{name}: weights differ")
        })?;
        ensure(a.metrics_log() == b.metrics_log(), || {
            format!("{name}: metrics differ")
        })?;
        let losses: Vec<f32> = a.metrics.iter().take(5).map(|m| m.train_loss).collect();
        ensure(
            losses.len() == 5 && losses.windows(2).all(|w| w[1] < w[0]),
            || format!("{name}: first losses {losses:?} not strictly decreasing"),
        )?;
        summary.push(format!("{name} {:.3}->{:.3}", losses[0], losses[4]));
    }
    let h = 1e-7;
    let mut points = 0;
    for i in -3000..=3000 {
        let x = i as f64 / 1000.0 + 0.0005;
        if (x.abs() - 1.0).abs() < 2.0 * h {
            continue;
        }
        let fd = (hardtanh(x + h) - hardtanh(x - h)) / (2.0 * h);
        ensure((fd - ste_grad(x)).abs() <= 1e-6, || {
            format!("x={x}: ste {} fd {fd}", ste_grad(x))
        })?;
        points += 1;
    }
    within(Duration::from_secs(120), start)?;
    Ok(format!(
        "bitwise reproducible; {}; STE matches at {points} points; {:.1?}",
        summary.join(", "),
        start.elapsed()
    ))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: "C1",
            name: "ReActNet-A cost table",
            check: c1_reactnet_costs,
        },
        Criterion {
            id: "C2",
            name: "ResNet-20 classifier policies",
            check: c2_resnet_policies,
        },
        Criterion {
            id: "C3",
            name: "batch-norm cost factor",
            check: c3_bn_factor,
        },
        Criterion {
            id: "C4",
            name: "XNOR vs dense convolution",
            check: c4_xnor_vs_dense,
        },
        Criterion {
            id: "C5",
            name: "rewrite invariance",
            check: c5_reptran_invariance,
        },
        Criterion {
            id: "C6",
            name: "quantization levels",
            check: c6_quantization_levels,
        },
        Criterion {
            id: "C7",
            name: "replicated-block symmetry",
            check: c7_symmetry,
        },
        Criterion {
            id: "C8",
            name: "trainer",
            check: c8_trainer,
        },
    ];
    let mut failed = 0;
    for Criterion { id, name, check } in &criteria {
        match check() {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id} {name}: {why}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
