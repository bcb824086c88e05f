//! Runs a binary convolution twice, once on floats and once through the
//! packed XNOR/popcount kernel, and checks the results agree exactly.
//!
//! cargo run --example xnor_conv

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repbnn::conv::{conv2d_dense, conv2d_xnor};
use repbnn::tensor::{sign_binarize, ConvSpec, DenseTensor, Dims};

fn main() -> repbnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = ConvSpec::new(96, 8, 3, 2, 1).binary();
    let xd = Dims::new(2, 96, 14, 14);
    let x = DenseTensor::new(
        xd,
        (0..xd.numel())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;
    let wd = spec.kernel_dims();
    let w = DenseTensor::new(
        wd,
        (0..wd.numel())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;

    let dense = conv2d_dense(&x.signum(), &w.signum(), &spec)?;
    let (xb, wb) = (sign_binarize(&x), sign_binarize(&w));
    let xnor = conv2d_xnor(&xb, &wb, &spec)?;

    println!(
        "input {} packed into {} words per sample",
        xd,
        xb.words_per_sample()
    );
    println!("output {}", xnor.dims());
    println!("first row: {:?}", &xnor.data()[..7]);
    println!("bit-exact: {}", dense.data() == xnor.data());
    Ok(())
}
