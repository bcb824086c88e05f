//! A replicated convolution: the kernel `(c_out, c_in, k, k)` is reshaped to
//! `(c_out/beta, c_in*beta, k, k)`, applied to a `beta` times wider input and
//! its output repeated `beta^2` times. Parameters and multiply-accumulates
//! stay the same while the feature map grows by `beta`.
//!
//! cargo run --example rep_conv

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repbnn::conv::{conv2d_dense, rep_conv, rep_conv_xnor};
use repbnn::tensor::{repeat_channels, sign_binarize, ConvSpec, DenseTensor, Dims};

fn main() -> repbnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let beta = 2;
    let base = ConvSpec::new(8, 8, 3, 1, 1).binary();
    let spec = base.with_beta(beta);
    let x0 = Dims::new(1, 8, 6, 6);
    let x = DenseTensor::new(
        x0,
        (0..x0.numel())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;
    let wide = repeat_channels(&x, beta)?;
    let wd = spec.kernel_dims();
    let w = DenseTensor::new(
        wd,
        (0..wd.numel())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;

    let plain = conv2d_dense(&x.signum(), &w.signum(), &base)?;
    let rep = rep_conv(&wide.signum(), &w.signum(), &spec)?;
    let bits = rep_conv_xnor(&sign_binarize(&wide), &sign_binarize(&w), &spec)?;

    let macs = |s: &ConvSpec, out: Dims| s.executed().kernel_dims().numel() * out.h * out.w;
    println!(
        "kernel {} executed as {}",
        spec.kernel_dims(),
        spec.reshaped_kernel_dims()
    );
    println!(
        "plain: output {} with {} MACs",
        plain.dims(),
        macs(&base, plain.dims())
    );
    println!(
        "rep:   output {} with {} MACs",
        rep.output.dims(),
        macs(&spec, rep.output.dims())
    );
    println!(
        "window {} so each value has {} levels",
        rep.window(),
        rep.window() + 1
    );
    println!("xnor path agrees: {}", bits.output == rep.output);
    let block = rep.output.dims().c / (beta * beta);
    let first = rep.output.channel_block(0, block)?;
    let same =
        (1..beta * beta).all(|b| rep.output.channel_block(b * block, block).unwrap() == first);
    println!("all {} output blocks identical: {same}", beta * beta);
    Ok(())
}
