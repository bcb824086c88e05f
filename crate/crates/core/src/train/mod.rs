//! Desk-scale training with the straight-through estimator.
//!
//! SGD with momentum over softmax cross-entropy. Batch norms use batch
//! statistics while training and running statistics for evaluation
//! (`running = (1 - m) * running + m * batch`, biased variance). One
//! ChaCha8 stream seeded from [`TrainConfig::seed`] drives initialization,
//! the eval split and shuffling, and every reduction runs in a fixed order,
//! so a seed determines the run bit for bit.

mod data;
mod engine;
mod probe;
mod weights;

pub use data::{synthetic_blobs, BlobsConfig, Dataset};
pub use engine::{hardtanh, ste_grad};
pub use probe::{channel_diversity, dump_features, DiversityReport, FeatureDump, LayerDiversity};
pub use weights::Weights;

use std::fmt::Write as _;
use std::path::PathBuf;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::DenseTensor;
use engine::{softmax_xent, Mode, Net};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(BlobsConfig),
    /// An RBDS file or CIFAR-10 binary batch.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    /// L2 penalty on convolution and classifier weights.
    pub weight_decay: f32,
    pub seed: u64,
    pub dataset: DatasetSource,
    /// Fraction of samples held out for evaluation. With 0 the training set
    /// is evaluated.
    pub eval_split: f32,
    /// Half-width of the uniform noise added to every batch-norm gamma.
    pub bn_init_noise: f32,
    pub bn_momentum: f32,
    /// Run on a single worker thread.
    pub deterministic: bool,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            dataset: DatasetSource::Synthetic(BlobsConfig::default()),
            eval_split: 0.25,
            bn_init_noise: 0.01,
            bn_momentum: 0.1,
            deterministic: false,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.eval_split) {
            return bad("eval split must be in [0, 1)");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad("bn momentum must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f32,
    pub eval_acc: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: Weights,
    pub metrics: Vec<EpochMetrics>,
    pub steps: usize,
}

impl TrainOutcome {
    /// `epoch\ttrain_loss\teval_acc`, one line per epoch.
    pub fn metrics_log(&self) -> String {
        let mut s = String::new();
        for m in &self.metrics {
            let _ = writeln!(s, "{}\t{:.6}\t{:.4}", m.epoch, m.train_loss, m.eval_acc);
        }
        s
    }
}

/// Loads the configured dataset. Synthetic data is drawn from its own
/// stream derived from `seed`.
pub fn load_dataset(src: &DatasetSource, seed: u64) -> Result<Dataset> {
    match src {
        DatasetSource::Synthetic(cfg) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            synthetic_blobs(cfg, &mut rng)
        }
        DatasetSource::Path(p) => Dataset::load(p),
    }
}

/// Loads the dataset and trains fresh weights.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    train_on(g, &data, cfg)
}

/// Trains fresh weights on `data`, ignoring `cfg.dataset`.
pub fn train_on(g: &Graph, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| run(g, data, cfg))
    } else {
        run(g, data, cfg)
    }
}

/// Every activation of `g` on `x` in evaluation mode, keyed by node id in
/// topological order.
pub fn evaluate(g: &Graph, w: &Weights, x: &DenseTensor) -> Result<IndexMap<String, DenseTensor>> {
    w.check(g)?;
    let net = Net::new(g)?;
    let tape = net.forward(w, x.clone(), Mode::Eval)?;
    Ok(net.activations_map(tape))
}

fn check_fit(g: &Graph, data: &Dataset) -> Result<()> {
    let input = g
        .default_input_dims()
        .ok_or_else(|| Error::InvalidConfig("graph has no Input node".into()))?;
    let s = data.sample_dims();
    if (input.c, input.h, input.w) != (s.c, s.h, s.w) {
        return Err(Error::Dataset(format!(
            "samples are {s}, graph input expects {input}"
        )));
    }
    let shapes = crate::graph::infer_shapes(g, input)?;
    let out = g.output_ids()[0];
    if shapes[out].sample_len() != data.classes() {
        return Err(Error::Dataset(format!(
            "dataset has {} classes, graph output '{out}' has {}",
            data.classes(),
            shapes[out].sample_len()
        )));
    }
    if data.len() < 2 {
        return Err(Error::Dataset("need at least two samples".into()));
    }
    Ok(())
}

fn run(g: &Graph, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_fit(g, data)?;
    let net = Net::new(g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = Weights::init(g, &mut rng, cfg.bn_init_noise)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_eval = ((data.len() as f32 * cfg.eval_split).round() as usize).min(data.len() - 1);
    let (eval_idx, train_idx) = order.split_at(n_eval);
    let eval_idx = if eval_idx.is_empty() {
        train_idx
    } else {
        eval_idx
    };
    let mut train_idx = train_idx.to_vec();

    let mut velocity: IndexMap<String, Vec<f32>> = IndexMap::new();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    'epochs: for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0f64, 0usize);
        for chunk in train_idx.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let (x, labels) = data.batch(chunk);
            let tape = net.forward(&weights, x, Mode::Train)?;
            let (loss, dlogits) = softmax_xent(net.output(&tape), &labels);
            if !loss.is_finite() {
                return Err(Error::DivergedLoss {
                    epoch,
                    step: steps + 1,
                });
            }
            let grads = net.backward(&weights, &tape, dlogits)?;
            update_stats(&mut weights, &tape.bn_stats, cfg.bn_momentum);
            sgd_step(&mut weights, &mut velocity, grads, cfg);
            total += loss as f64;
            batches += 1;
            steps += 1;
        }
        if batches == 0 {
            break 'epochs;
        }
        let acc = accuracy(&net, &weights, data, eval_idx, cfg.batch_size)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss: (total / batches as f64) as f32,
            eval_acc: acc,
        });
    }
    Ok(TrainOutcome {
        weights,
        metrics,
        steps,
    })
}

fn update_stats(w: &mut Weights, stats: &[engine::BnStats], m: f32) {
    for s in stats {
        for (name, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            for (r, b) in w
                .data_mut(&format!("{}.{name}", s.node))
                .iter_mut()
                .zip(batch)
            {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }
}

fn sgd_step(
    w: &mut Weights,
    velocity: &mut IndexMap<String, Vec<f32>>,
    grads: engine::Grads,
    cfg: &TrainConfig,
) {
    for (name, g) in grads {
        let decay = if name.ends_with(".weight") {
            cfg.weight_decay
        } else {
            0.0
        };
        let v = velocity
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let p = w.data_mut(&name);
        for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(&g) {
            *v = cfg.momentum * *v + g + decay * *p;
            *p -= cfg.learning_rate * *v;
        }
    }
}

fn accuracy(net: &Net, w: &Weights, data: &Dataset, idx: &[usize], bs: usize) -> Result<f32> {
    let mut correct = 0usize;
    for chunk in idx.chunks(bs) {
        let (x, labels) = data.batch(chunk);
        let tape = net.forward(w, x, Mode::Eval)?;
        let out = net.output(&tape);
        for (n, l) in labels.iter().enumerate() {
            let z = out.sample(n);
            let best = (0..z.len()).fold(0, |b, j| if z[j] > z[b] { j } else { b });
            correct += usize::from(best == *l);
        }
    }
    Ok(correct as f32 / idx.len() as f32)
}
