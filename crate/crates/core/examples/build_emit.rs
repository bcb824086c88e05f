//! Builds the reference topologies and prints them in the model text format,
//! then parses the text back.
//!
//! cargo run --example build_emit [resnet20|reactnet-a|toy]

use repbnn::graph::{
    build_reactnet_a, build_resnet20, build_toy, emit_model, infer_shapes, parse_model, ToyConfig,
};

fn main() -> repbnn::Result<()> {
    let arch = std::env::args().nth(1).unwrap_or_else(|| "toy".into());
    let g = match arch.as_str() {
        "resnet20" => build_resnet20(true),
        "reactnet-a" => build_reactnet_a(),
        _ => build_toy(ToyConfig::default()),
    };
    let text = emit_model(&g);
    print!("{text}");
    let back = parse_model(&text)?;
    let dims = back
        .default_input_dims()
        .expect("builders declare an input");
    let shapes = infer_shapes(&back, dims)?;
    let out = back.output_ids()[0];
    eprintln!(
        "{} nodes, round trip equal: {}, output {}",
        g.len(),
        back == g,
        shapes[out]
    );
    Ok(())
}
