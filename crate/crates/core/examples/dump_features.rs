//! Trains a replicated toy network briefly and writes the activations of one
//! layer after the repeat, after batch norm and after the residual add.
//!
//! cargo run --release --example dump_features [OUT_DIR]

use repbnn::graph::{build_toy, ToyConfig};
use repbnn::reptran::{reptran, RepTranConfig};
use repbnn::train::{dump_features, load_dataset, train_on, TrainConfig};

fn main() -> repbnn::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("repbnn-features"));
    std::fs::create_dir_all(&dir)?;
    let g = reptran(&build_toy(ToyConfig::default()), &RepTranConfig::new(2))?;
    let cfg = TrainConfig {
        epochs: 3,
        deterministic: true,
        ..Default::default()
    };
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let out = train_on(&g, &data, &cfg)?;
    let (x, _) = data.batch(&[0, 1, 2, 3]);
    let dump = dump_features(&g, &out.weights, &x, "b1_conv")?;
    println!("post_repeat   {}", dump.post_repeat.dims());
    println!("post_bn       {}", dump.post_bn.dims());
    println!("post_residual {}", dump.post_residual.dims());
    dump.write(&dir)?;
    println!("wrote blobs to {}", dir.display());
    Ok(())
}
