//! Experiment orchestration: method x benchmark training runs over multiple
//! seeds, accuracy bookkeeping, CSV and checkpoint artifacts.

mod metrics;
mod visualize;

pub use metrics::{emit_metrics, AccuracyMatrix, SeedResult};
pub use visualize::visualize_attention;

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::baselines::{fisher_diagonal, FisherLabels, PathIntegralState};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy_masked, AdamState, DenseNet};
use crate::plasticity::ImportanceStore;
use crate::tasks::{load_mnist_dir, Dataset, TaskStream};
use crate::{attention, checkpoint};

/// Consolidation strategy trained against the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Uniformly plastic network, no regularizer.
    Vanilla,
    /// Attention-based selective plasticity (contrastive-EB + Oja).
    Absp,
    /// Elastic weight consolidation (diagonal Fisher importance).
    Ewc,
    /// Synaptic Intelligence (path-integral importance).
    Si,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Absp => "absp",
            Method::Ewc => "ewc",
            Method::Si => "si",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Method::Vanilla),
            "absp" => Ok(Method::Absp),
            "ewc" => Ok(Method::Ewc),
            "si" => Ok(Method::Si),
            other => Err(Error::InvalidConfig(format!(
                "unknown method '{other}' (expected vanilla|absp|ewc|si)"
            ))),
        }
    }
}

/// Which task stream the experiment runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    Permuted,
    Split,
}

impl Benchmark {
    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Permuted => "permuted",
            Benchmark::Split => "split",
        }
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "permuted" => Ok(Benchmark::Permuted),
            "split" => Ok(Benchmark::Split),
            other => Err(Error::InvalidConfig(format!(
                "unknown benchmark '{other}' (expected permuted|split)"
            ))),
        }
    }
}

/// Full experiment description. Defaults follow the benchmark protocol:
/// two hidden layers of 400, Adam at 1e-3, batches of 100, five tasks,
/// ten seeds.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub benchmark: Benchmark,
    pub num_tasks: usize,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Consolidation penalty strength.
    pub lambda: f64,
    /// Oja learning rate for the attention-based importance.
    pub epsilon: f64,
    /// Damping for the Synaptic Intelligence importance.
    pub xi: f64,
    /// Noise level for attention visualization inputs.
    pub sigma: f64,
    /// Keep the running importance across task boundaries instead of
    /// resetting it.
    pub accumulate_gamma: bool,
    /// Run one Oja update per sample instead of one per batch on the
    /// batch-averaged attention maps.
    pub oja_per_sample: bool,
    /// Estimate the Fisher with labels sampled from the model's predictive
    /// distribution instead of the ground truth.
    pub fisher_sampled: bool,
    /// Cap on samples per task for the Fisher estimate (None = full set).
    pub fisher_samples: Option<usize>,
    /// Cap on training samples per task (None = full set); desk-scale runs.
    pub train_limit: Option<usize>,
    /// Parallel seed workers (each worker is single-threaded).
    pub workers: usize,
    pub data_dir: PathBuf,
    /// Artifact directory; no files are written when `None`.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Vanilla,
            benchmark: Benchmark::Permuted,
            num_tasks: 5,
            seeds: (0..10).collect(),
            epochs: 5,
            batch_size: 100,
            lr: 1e-3,
            hidden: vec![400, 400],
            lambda: 1.0,
            epsilon: 0.1,
            xi: 1e-3,
            sigma: 0.3,
            accumulate_gamma: false,
            oja_per_sample: false,
            fisher_sampled: false,
            fisher_samples: None,
            train_limit: None,
            workers: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            data_dir: PathBuf::from("data/mnist"),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            (self.num_tasks, "tasks"),
            (self.epochs, "epochs"),
            (self.batch_size, "batch size"),
            (self.workers, "workers"),
        ];
        for (v, name) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("need at least one seed".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden layer widths must be positive".into(),
            ));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 || !self.xi.is_finite() || self.xi <= 0.0 {
            return Err(Error::InvalidConfig("lr and xi must be positive".into()));
        }
        if self.lambda < 0.0 || self.epsilon < 0.0 || self.sigma < 0.0 {
            return Err(Error::InvalidConfig(
                "lambda, epsilon, and sigma must be nonnegative".into(),
            ));
        }
        if self.epsilon > 1.0 {
            return Err(Error::InvalidConfig(
                "epsilon must be <= 1 to keep importances nonnegative".into(),
            ));
        }
        if self.benchmark == Benchmark::Split && self.num_tasks > 5 {
            return Err(Error::InvalidConfig(
                "split streams provide at most 5 tasks".into(),
            ));
        }
        Ok(())
    }
}

/// Loads MNIST from `config.data_dir` and runs the experiment. All
/// pre-flight validation happens before any training starts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<AccuracyMatrix> {
    config.validate()?;
    let (train, test) = load_mnist_dir(&config.data_dir)?;
    run_with_datasets(config, Arc::new(train), Arc::new(test))
}

/// Runs the experiment on already-loaded datasets. Seeds execute as
/// independent workers (at most `config.workers` at a time) and results are
/// merged in seed order, so the output is independent of scheduling.
pub fn run_with_datasets(
    config: &ExperimentConfig,
    train: Arc<Dataset>,
    test: Arc<Dataset>,
) -> Result<AccuracyMatrix> {
    config.validate()?;
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }

    let mut outcomes: Vec<(SeedResult, DenseNet, ImportanceStore)> =
        Vec::with_capacity(config.seeds.len());
    for chunk in config.seeds.chunks(config.workers.max(1)) {
        let mut chunk_results: Vec<Result<(SeedResult, DenseNet, ImportanceStore)>> =
            Vec::with_capacity(chunk.len());
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    let train = Arc::clone(&train);
                    let test = Arc::clone(&test);
                    scope.spawn(move || train_single_seed(config, train, test, seed))
                })
                .collect();
            for handle in handles {
                chunk_results.push(handle.join().expect("seed worker panicked"));
            }
        });
        for result in chunk_results {
            outcomes.push(result?);
        }
    }

    if let Some(dir) = &config.out_dir {
        for (result, net, store) in &outcomes {
            let path = dir.join(format!("checkpoint_seed{}.ckpt", result.seed));
            checkpoint::save(&path, net, Some(store))?;
        }
    }

    let matrix = AccuracyMatrix {
        method: config.method.as_str().to_string(),
        benchmark: config.benchmark.as_str().to_string(),
        num_tasks: config.num_tasks,
        results: outcomes.into_iter().map(|(r, _, _)| r).collect(),
    };
    if let Some(dir) = &config.out_dir {
        emit_metrics(&matrix, dir)?;
    }
    Ok(matrix)
}

/// Builds the task stream for one run seed. Streams derive from the run
/// seed directly, so different methods with the same seed see identical
/// tasks.
fn build_stream(
    config: &ExperimentConfig,
    train: Arc<Dataset>,
    test: Arc<Dataset>,
    seed: u64,
) -> Result<TaskStream> {
    let mut stream = match config.benchmark {
        Benchmark::Permuted => TaskStream::permuted(train, test, config.num_tasks, seed)?,
        Benchmark::Split => TaskStream::split(train, test, seed)?,
    };
    if config.benchmark == Benchmark::Split && config.num_tasks < stream.num_tasks() {
        stream.truncate(config.num_tasks);
    }
    Ok(stream)
}

/// splitmix64; used to derive the weight-init seed from the run seed so the
/// init draw is decorrelated from the stream construction draw.
fn derive_init_seed(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn train_single_seed(
    config: &ExperimentConfig,
    train: Arc<Dataset>,
    test: Arc<Dataset>,
    seed: u64,
) -> Result<(SeedResult, DenseNet, ImportanceStore)> {
    let stream = build_stream(config, train.clone(), test, seed)?;
    let input_dim = train.pixel_count();
    let mut dims = vec![input_dim];
    dims.extend_from_slice(&config.hidden);
    dims.push(10);

    let mut net = DenseNet::kaiming_seeded(&dims, derive_init_seed(seed))?;
    let mut adam = AdamState::new(&net, config.lr);
    let mut store = ImportanceStore::new(&net, config.lambda, config.epsilon);
    store.set_reset_on_consolidate(!config.accumulate_gamma);
    let mut si_state = match config.method {
        Method::Si => Some(PathIntegralState::new(&net, config.xi)),
        _ => None,
    };

    let mut accuracy: Vec<Vec<f64>> = Vec::with_capacity(stream.num_tasks());
    let mut losses: Vec<Vec<f64>> = Vec::with_capacity(stream.num_tasks());

    for t in 0..stream.num_tasks() {
        let task = &stream.tasks()[t];
        let n = match config.train_limit {
            Some(limit) => task.train_len().min(limit),
            None => task.train_len(),
        };
        if n == 0 {
            return Err(Error::EmptyData(format!("task {} training set", t + 1)));
        }
        let mask: Option<Vec<usize>> = match config.benchmark {
            Benchmark::Split => Some(task.eval_classes.iter().map(|&c| c as usize).collect()),
            Benchmark::Permuted => None,
        };
        let task_anchor = si_state.as_ref().map(|_| net.snapshot_weights());
        let mut task_losses = Vec::with_capacity(config.epochs * n.div_ceil(config.batch_size));

        for epoch in 0..config.epochs {
            // Documented shuffle derivation: run seed ^ task index ^ epoch.
            let shuffle_seed = seed ^ (t as u64) ^ (epoch as u64);
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.shuffle(&mut ChaCha20Rng::seed_from_u64(shuffle_seed));

            for batch in order.chunks(config.batch_size) {
                let (images, labels) = stream.gather_train(t, batch);
                let labels_usize: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
                let trace = net.forward(&images)?;
                let out =
                    softmax_cross_entropy_masked(trace.logits(), &labels_usize, mask.as_deref())?;
                let mut grads = net.backward(&trace, &out.dlogits)?;
                task_losses.push(out.loss);

                if config.method == Method::Absp {
                    if config.oja_per_sample {
                        for (b, &label) in labels_usize.iter().enumerate() {
                            let maps = attention::contrastive_mwp(&net, &trace, b, label)?;
                            store.oja_update(&maps)?;
                        }
                    } else {
                        let maps =
                            attention::batch_contrastive_mwp(&net, &trace, &labels_usize)?;
                        store.oja_update(&maps)?;
                    }
                }
                let si_grads = si_state.as_ref().map(|_| grads.clone());
                if config.method != Method::Vanilla && store.has_tasks() && config.lambda != 0.0 {
                    store.accumulate_penalty(&net, &mut grads)?;
                }
                let before = si_state.as_ref().map(|_| net.snapshot_weights());
                adam.step(&mut net, &grads)?;
                if let Some(si) = si_state.as_mut() {
                    let before = before.expect("snapshot taken when SI active");
                    let delta: Vec<Array2<f64>> = net
                        .snapshot_weights()
                        .iter()
                        .zip(&before)
                        .map(|(a, b)| a - b)
                        .collect();
                    si.accumulate(&si_grads.expect("grads kept when SI active"), &delta);
                }
            }
        }

        match config.method {
            Method::Vanilla => {}
            Method::Absp => store.consolidate_task(&net),
            Method::Ewc => {
                let fisher = task_fisher(config, &stream, t, n, &net, seed)?;
                store.push_task(net.snapshot_weights(), fisher);
            }
            Method::Si => {
                let si = si_state.as_mut().expect("SI state active");
                let anchor = task_anchor.expect("anchor taken when SI active");
                let new_params = net.snapshot_weights();
                let importance = si.consolidate(&anchor, &new_params);
                store.push_task(new_params, importance);
            }
        }

        let mut row = Vec::with_capacity(t + 1);
        for t_eval in 0..=t {
            row.push(evaluate(&net, &stream, t_eval, config.benchmark)?);
        }
        accuracy.push(row);
        losses.push(task_losses);
    }

    Ok((
        SeedResult {
            seed,
            accuracy,
            losses,
        },
        net,
        store,
    ))
}

/// Diagonal Fisher of the task's training distribution, computed in chunks
/// to bound the size of materialized transformed batches.
fn task_fisher(
    config: &ExperimentConfig,
    stream: &TaskStream,
    t: usize,
    train_len: usize,
    net: &DenseNet,
    seed: u64,
) -> Result<Vec<ndarray::Array2<f64>>> {
    let n = match config.fisher_samples {
        Some(limit) => train_len.min(limit),
        None => train_len,
    };
    if n == 0 {
        return Err(Error::EmptyData(format!("task {} fisher set", t + 1)));
    }
    let labels_mode = |chunk: usize| {
        if config.fisher_sampled {
            // One sub-seed per (run, task, chunk) so chunked estimation stays
            // deterministic.
            FisherLabels::Sampled(derive_init_seed(seed ^ ((t as u64) << 20) ^ chunk as u64))
        } else {
            FisherLabels::GroundTruth
        }
    };
    let mut acc: Vec<ndarray::Array2<f64>> = net
        .layers()
        .iter()
        .map(|l| ndarray::Array2::zeros((l.fan_out(), l.fan_in())))
        .collect();
    let chunk_size = 4096usize;
    let mut start = 0usize;
    let mut chunk_index = 0usize;
    while start < n {
        let end = (start + chunk_size).min(n);
        let positions: Vec<u32> = (start as u32..end as u32).collect();
        let (images, labels) = stream.gather_train(t, &positions);
        let fisher = fisher_diagonal(net, &images, &labels, labels_mode(chunk_index))?;
        chunk_index += 1;
        let weight = (end - start) as f64;
        for (a, f) in acc.iter_mut().zip(&fisher.values) {
            a.zip_mut_with(f, |x, &y| *x += y * weight);
        }
        start = end;
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Ok(acc)
}

/// Test accuracy of task `t_eval`. Split tasks restrict the argmax to the
/// task's own classes; permuted tasks rank all ten logits.
pub fn evaluate(
    net: &DenseNet,
    stream: &TaskStream,
    t_eval: usize,
    benchmark: Benchmark,
) -> Result<f64> {
    let (images, labels) = stream.gather_test(t_eval);
    if labels.is_empty() {
        return Err(Error::EmptyData(format!("task {} test set", t_eval + 1)));
    }
    let classes: Option<Vec<usize>> = match benchmark {
        Benchmark::Split => Some(
            stream.tasks()[t_eval]
                .eval_classes
                .iter()
                .map(|&c| c as usize)
                .collect(),
        ),
        Benchmark::Permuted => None,
    };
    let mut correct = 0usize;
    let chunk = 1000usize;
    let mut start = 0usize;
    while start < labels.len() {
        let end = (start + chunk).min(labels.len());
        let batch = images.slice(ndarray::s![start..end, ..]).to_owned();
        let trace = net.forward(&batch)?;
        let logits = trace.logits();
        for (row, &label) in logits.rows().into_iter().zip(&labels[start..end]) {
            let predicted = match &classes {
                None => row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(c, _)| c)
                    .unwrap(),
                Some(classes) => classes
                    .iter()
                    .copied()
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .unwrap(),
            };
            if predicted == label as usize {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / labels.len() as f64)
}
