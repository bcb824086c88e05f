//! Enumerates every input and weight pattern of a 1x1 binary convolution
//! and shows that the output takes exactly `c_in + 1` values, then shows how
//! channel replication widens the executed window.
//!
//! cargo run --example quantization_levels

use std::collections::BTreeSet;

use repbnn::conv::{conv2d_xnor, quantization_levels};
use repbnn::tensor::{sign_binarize, ConvSpec, DenseTensor, Dims};

fn patterns(c: usize) -> Vec<f32> {
    (0..1usize << c)
        .flat_map(|bits| (0..c).map(move |i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }))
        .collect()
}

fn main() -> repbnn::Result<()> {
    for c_in in 1..=6 {
        let spec = ConvSpec::new(c_in, 1, 1, 1, 0).binary();
        let count = 1 << c_in;
        let x = sign_binarize(&DenseTensor::new(
            Dims::new(count, c_in, 1, 1),
            patterns(c_in),
        )?);
        let mut values = BTreeSet::new();
        for w in patterns(c_in).chunks(c_in) {
            let w = sign_binarize(&DenseTensor::new(spec.kernel_dims(), w.to_vec())?);
            values.extend(conv2d_xnor(&x, &w, &spec)?.data().iter().map(|v| *v as i32));
        }
        println!("c_in={c_in}: {} levels {:?}", values.len(), values);
    }
    println!();
    for beta in [1, 2, 4] {
        let spec = ConvSpec::new(16, 16, 3, 1, 1).binary().with_beta(beta);
        println!(
            "3x3 conv 16->16, beta={beta}: {} levels",
            quantization_levels(&spec)
        );
    }
    Ok(())
}
