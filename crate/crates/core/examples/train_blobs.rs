//! Trains the 2-block binary toy network and its replicated form on
//! synthetic two-class blobs and prints the per-epoch metrics.
//!
//! cargo run --release --example train_blobs

use repbnn::graph::{build_toy, ToyConfig};
use repbnn::reptran::{reptran, RepTranConfig};
use repbnn::train::{train, TrainConfig};

fn main() -> repbnn::Result<()> {
    let base = build_toy(ToyConfig::default());
    let rep = reptran(&base, &RepTranConfig::new(2))?;
    let cfg = TrainConfig {
        epochs: 20,
        seed: 7,
        deterministic: true,
        ..Default::default()
    };
    for (label, g) in [("baseline", &base), ("beta=2", &rep)] {
        let out = train(g, &cfg)?;
        println!("# {label}: {} steps", out.steps);
        println!("epoch\ttrain_loss\teval_acc");
        print!("{}", out.metrics_log());
    }
    Ok(())
}
