//! Trains replicated toy networks with batch norm before and after the
//! repeat and reports how far the repeated channel blocks drift apart.
//! With BN before the repeat and no residual the blocks stay identical.
//!
//! cargo run --release --example channel_diversity

use repbnn::graph::{build_toy, ToyConfig};
use repbnn::reptran::{reptran, BnPosition, RepTranConfig};
use repbnn::train::{channel_diversity, load_dataset, train_on, TrainConfig};

fn main() -> repbnn::Result<()> {
    let cfg = TrainConfig {
        epochs: 5,
        seed: 3,
        deterministic: true,
        ..Default::default()
    };
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let (probe, _) = data.batch(&(0..32).collect::<Vec<_>>());
    let cases = [
        (
            "BN before repeat, no residual",
            false,
            BnPosition::BeforeRepeat,
        ),
        (
            "BN after repeat, no residual",
            false,
            BnPosition::AfterRepeat,
        ),
        ("BN after repeat, residual", true, BnPosition::AfterRepeat),
    ];
    for (label, residual, pos) in cases {
        let g = build_toy(ToyConfig {
            residual,
            ..Default::default()
        });
        let g1 = reptran(&g, &RepTranConfig::new(2).with_bn_position(pos))?;
        let out = train_on(&g1, &data, &cfg)?;
        println!("## {label}");
        println!("{}", channel_diversity(&g1, &out.weights, &probe)?);
    }
    Ok(())
}
