//! Rewrites binary ResNet-20 at beta = 2 under each classifier policy and
//! compares OPs with the original network.
//!
//! cargo run --example reptran_resnet20

use repbnn::cost::count;
use repbnn::graph::build_resnet20;
use repbnn::reptran::{reptran, verify_transform, LastLayerPolicy, RepTranConfig};
use repbnn::tensor::Dims;

fn main() -> repbnn::Result<()> {
    let d = Dims::new(1, 3, 32, 32);
    let g = build_resnet20(true);
    let raw = count(&g, d)?.totals.ops_without_bn();
    println!("{:<20}{:>12}{:>8}", "policy", "OPs", "delta");
    println!("{:<20}{:>12}{:>8}", "original", raw, "");
    for policy in [
        LastLayerPolicy::TakeAll,
        LastLayerPolicy::TakeOneOverBeta,
        LastLayerPolicy::TakeOneOverBetaSquared,
    ] {
        let cfg = RepTranConfig::new(2).with_last_layer(policy);
        let g1 = reptran(&g, &cfg)?;
        verify_transform(&g, &g1, &cfg)?;
        let ops = count(&g1, d)?.totals.ops_without_bn();
        let delta = ops.to_integer() as i64 - raw.to_integer() as i64;
        println!("{:<20}{:>12}{:>+8}", policy.to_string(), ops, delta);
    }
    Ok(())
}
