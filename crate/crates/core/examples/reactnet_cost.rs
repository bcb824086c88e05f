//! Cost breakdown of ReActNet-A at 224x224 before and after the beta = 2
//! rewrite, and the difference.
//!
//! cargo run --example reactnet_cost

use repbnn::cost::{bn_cost_factor, count, diff};
use repbnn::graph::build_reactnet_a;
use repbnn::reptran::{reptran, RepTranConfig};
use repbnn::tensor::Dims;

fn main() -> repbnn::Result<()> {
    let d = Dims::new(1, 3, 224, 224);
    let g = build_reactnet_a();
    let before = count(&g, d)?;
    let after = count(&reptran(&g, &RepTranConfig::new(2))?, d)?;
    println!("## original\n{}", before.render_summary(true));
    println!("## beta=2\n{}", after.render_summary(true));
    println!("{}", diff(&before, &after));
    println!("BN cost factor at beta=2: {}", bn_cost_factor(2));
    Ok(())
}
