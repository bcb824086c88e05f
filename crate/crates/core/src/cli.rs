//! The `repbnn` command line.
//!
//! Machine-readable output goes to stdout and diagnostics to stderr. Exit
//! codes: 0 on success, 1 when a command fails, 2 on a usage error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::cost::count;
use crate::error::{Error, Result};
use crate::graph::{
    build_reactnet_a, build_resnet20, build_toy, emit_model, parse_model, Graph, ToyConfig,
};
use crate::reptran::{reptran, verify_transform, BnPosition, LastLayerPolicy, RepTranConfig};
use crate::tensor::blob::load_dense;
use crate::tensor::Dims;
use crate::train::{dump_features, train, BlobsConfig, DatasetSource, TrainConfig, Weights};

#[derive(Debug, Parser)]
#[command(
    name = "repbnn",
    version,
    about = "Binary networks with channel-replicating convolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Arch {
    Resnet20,
    ReactnetA,
    Toy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LastLayer {
    #[value(name = "take-all")]
    All,
    #[value(name = "take-1-over-beta")]
    OneOverBeta,
    #[value(name = "take-1-over-beta2")]
    OneOverBetaSquared,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BnPos {
    After,
    Before,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Tsv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a reference topology in the model text format.
    Build {
        #[arg(long, value_enum)]
        arch: Arch,
        /// Binary block convolutions (ResNet-20 and the toy net).
        #[arg(long)]
        binary: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rewrite a model into its replicated-channel form.
    Transform {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        beta: usize,
        #[arg(long, value_enum, default_value = "take-all")]
        last_layer: LastLayer,
        #[arg(long, value_enum, default_value = "after")]
        bn_position: BnPos,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count FLOPs, BOPs, OPs and parameters.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to the model's declared input with N = 1.
        #[arg(long)]
        input_dims: Option<Dims>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long)]
        with_bn: bool,
    },
    /// Check that one model is a faithful rewrite of another.
    Verify {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
    },
    /// Train a model and print `epoch, train_loss, eval_acc` per epoch.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        /// An RBDS or CIFAR-10 binary file, or `synthetic` for generated blobs.
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        deterministic: bool,
        /// Where to write the weights checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f32,
        #[arg(long, default_value_t = 1e-4)]
        weight_decay: f32,
        #[arg(long, default_value_t = 0.25)]
        eval_split: f32,
        #[arg(long, default_value_t = 0.01)]
        bn_init_noise: f32,
    },
    /// Write post-repeat, post-BN and post-residual activations of a layer.
    DumpFeatures {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        layer: String,
        /// Dense tensor blob holding the input batch.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs the command line with process stdio.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the command line, writing to the given streams. Returns the exit
/// code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            return match e.kind() {
                DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand
                    if e.exit_code() == 0 =>
                {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    2
                }
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn read_model(path: &Path) -> Result<Graph> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_model(&text)
}

fn emit(out: &mut dyn Write, dest: Option<&Path>, text: &str) -> Result<()> {
    match dest {
        Some(p) => {
            fs::write(p, text).map_err(|e| Error::Io(format!("cannot write {}: {e}", p.display())))
        }
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Build {
            arch,
            binary,
            out: dest,
        } => {
            let g = match arch {
                Arch::Resnet20 => build_resnet20(binary),
                Arch::ReactnetA => build_reactnet_a(),
                Arch::Toy => build_toy(ToyConfig {
                    binary,
                    ..Default::default()
                }),
            };
            emit(out, dest.as_deref(), &emit_model(&g))
        }
        Command::Transform {
            input,
            beta,
            last_layer,
            bn_position,
            out: dest,
        } => {
            let g = read_model(&input)?;
            let cfg = RepTranConfig::new(beta)
                .with_last_layer(match last_layer {
                    LastLayer::All => LastLayerPolicy::TakeAll,
                    LastLayer::OneOverBeta => LastLayerPolicy::TakeOneOverBeta,
                    LastLayer::OneOverBetaSquared => LastLayerPolicy::TakeOneOverBetaSquared,
                })
                .with_bn_position(match bn_position {
                    BnPos::After => BnPosition::AfterRepeat,
                    BnPos::Before => BnPosition::BeforeRepeat,
                });
            let g1 = reptran(&g, &cfg)?;
            emit(out, dest.as_deref(), &emit_model(&g1))
        }
        Command::Analyze {
            input,
            input_dims,
            format,
            with_bn,
        } => {
            let g = read_model(&input)?;
            let dims = match input_dims {
                Some(d) => d,
                None => g
                    .default_input_dims()
                    .ok_or_else(|| Error::InvalidConfig("model has no Input node".into()))?,
            };
            let r = count(&g, dims)?;
            let text = match format {
                Format::Table => r.render_table(with_bn),
                Format::Tsv => r.render_tsv(with_bn),
            };
            Ok(out.write_all(text.as_bytes())?)
        }
        Command::Verify { before, after } => {
            let g0 = read_model(&before)?;
            let g1 = read_model(&after)?;
            let report = verify_transform(&g0, &g1, &RepTranConfig::new(g1.beta))?;
            Ok(writeln!(out, "{report}")?)
        }
        Command::Train {
            input,
            dataset,
            epochs,
            seed,
            deterministic,
            out: dest,
            batch_size,
            lr,
            weight_decay,
            eval_split,
            bn_init_noise,
        } => {
            let g = read_model(&input)?;
            let dataset = if dataset == "synthetic" {
                let d = g
                    .default_input_dims()
                    .ok_or_else(|| Error::InvalidConfig("model has no Input node".into()))?;
                let shapes = crate::graph::infer_shapes(&g, d)?;
                let classes = shapes[g.output_ids()[0]].sample_len();
                DatasetSource::Synthetic(BlobsConfig {
                    channels: d.c,
                    hw: d.h,
                    classes,
                    ..Default::default()
                })
            } else {
                DatasetSource::Path(PathBuf::from(dataset))
            };
            let cfg = TrainConfig {
                epochs,
                batch_size,
                learning_rate: lr,
                weight_decay,
                seed,
                dataset,
                eval_split,
                bn_init_noise,
                deterministic,
                ..Default::default()
            };
            let outcome = train(&g, &cfg)?;
            out.write_all(b"epoch\ttrain_loss\teval_acc\n")?;
            out.write_all(outcome.metrics_log().as_bytes())?;
            if let Some(p) = dest {
                outcome.weights.save(&p)?;
                let _ = writeln!(
                    err,
                    "wrote {} parameters to {}",
                    outcome.weights.len(),
                    p.display()
                );
            }
            Ok(())
        }
        Command::DumpFeatures {
            input,
            weights,
            layer,
            image,
            out: dir,
        } => {
            let g = read_model(&input)?;
            let w = Weights::load(&weights)?;
            let x = load_dense(&image)?;
            let dump = dump_features(&g, &w, &x, &layer)?;
            dump.write(&dir)?;
            for name in ["post_repeat", "post_bn", "post_residual"] {
                writeln!(out, "{}", dir.join(format!("{name}.blob")).display())?;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run_with(
            std::iter::once("repbnn").chain(args.iter().copied()),
            &mut o,
            &mut e,
        );
        (
            code,
            String::from_utf8(o).unwrap(),
            String::from_utf8(e).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_capture(&["frobnicate"]).0, 2);
        assert_eq!(
            run_capture(&["build", "--arch", "resnet20", "--bogus"]).0,
            2
        );
        assert_eq!(run_capture(&["build"]).0, 2);
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("transform"));
    }

    #[test]
    fn build_prints_model() {
        let (code, out, _) = run_capture(&["build", "--arch", "resnet20", "--binary"]);
        assert_eq!(code, 0);
        let g = parse_model(&out).unwrap();
        assert_eq!(g, build_resnet20(true));
    }

    #[test]
    fn missing_file_is_domain_error() {
        let (code, _, err) = run_capture(&["analyze", "--in", "/nonexistent/model.txt"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error:"));
    }
}
