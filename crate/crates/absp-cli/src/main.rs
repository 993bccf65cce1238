//! Command-line front end for the continual-learning experiments.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use absp::harness::{run_experiment, visualize_attention, Benchmark, ExperimentConfig, Method};
use absp::tasks::load_mnist_dir;

#[derive(Parser)]
#[command(
    name = "absp",
    about = "Continual-learning benchmark harness: selective plasticity on Permuted/Split MNIST"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train method x benchmark over multiple seeds; writes CSV metrics and
    /// per-seed checkpoints.
    Run(Box<RunArgs>),
    /// Render attention heatmaps for noisy test digits from a checkpoint.
    Visualize(VisualizeArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Optional `key = value` config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// vanilla | absp | ewc | si
    #[arg(long)]
    method: Option<String>,
    /// permuted | split
    #[arg(long)]
    benchmark: Option<String>,
    /// Number of sequential tasks.
    #[arg(long)]
    tasks: Option<usize>,
    /// Number of seeds (runs use seeds 0..N).
    #[arg(long)]
    seeds: Option<usize>,
    /// Training epochs per task.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Hidden layer widths, comma-separated (e.g. 400,400).
    #[arg(long)]
    hidden: Option<String>,
    /// Synaptic Intelligence damping.
    #[arg(long)]
    xi: Option<f64>,
    /// Noise level used by downstream visualization.
    #[arg(long)]
    sigma: Option<f64>,
    /// Keep running importance across task boundaries instead of resetting.
    #[arg(long)]
    accumulate_gamma: bool,
    /// One Oja update per sample instead of per batch.
    #[arg(long)]
    oja_per_sample: bool,
    /// Sample Fisher labels from the model instead of using ground truth.
    #[arg(long)]
    fisher_sampled: bool,
    /// Cap on Fisher-estimation samples per task (ewc).
    #[arg(long)]
    fisher_samples: Option<usize>,
    /// Cap on training samples per task (desk-scale runs).
    #[arg(long)]
    train_limit: Option<usize>,
    /// Parallel seed workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Directory with the MNIST IDX files (plain or .gz).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for CSVs and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct VisualizeArgs {
    /// Checkpoint written by `run`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of test digits to render.
    #[arg(long, default_value_t = 3)]
    count: usize,
    /// Gaussian noise level added to the inputs.
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    /// Seed for the noise draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory with the MNIST IDX files.
    #[arg(long, default_value = "data/mnist")]
    data: PathBuf,
    /// Output directory for the PGM files.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(*args),
        Command::Visualize(args) => visualize(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

/// Parses a `key = value` config file (one pair per line, `#` comments).
fn parse_config_file(path: &PathBuf) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!(
                "{}:{}: expected 'key = value', got '{line}'",
                path.display(),
                lineno + 1
            );
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .with_context(|| format!("bad hidden width '{p}'"))
        })
        .collect()
}

/// Merge order: defaults, then config file, then explicit flags.
fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let file = match &args.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    let mut cfg = ExperimentConfig::default();

    if let Some(raw) = file.get("method") {
        cfg.method = raw.parse::<Method>()?;
    }
    if let Some(raw) = &args.method {
        cfg.method = raw.parse::<Method>()?;
    }
    if let Some(raw) = file.get("benchmark") {
        cfg.benchmark = raw.parse::<Benchmark>()?;
    }
    if let Some(raw) = &args.benchmark {
        cfg.benchmark = raw.parse::<Benchmark>()?;
    }

    fn merge<T>(
        field: &mut T,
        file: &BTreeMap<String, String>,
        key: &str,
        flag: Option<T>,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<()> {
        if let Some(raw) = file.get(key) {
            *field = parse(raw).with_context(|| format!("config key '{key}' = '{raw}'"))?;
        }
        if let Some(v) = flag {
            *field = v;
        }
        Ok(())
    }

    let parse_usize = |s: &str| s.parse::<usize>().context("expected an integer");
    let parse_f64 = |s: &str| s.parse::<f64>().context("expected a number");

    merge(&mut cfg.num_tasks, &file, "tasks", args.tasks, parse_usize)?;
    merge(&mut cfg.epochs, &file, "epochs", args.epochs, parse_usize)?;
    merge(&mut cfg.batch_size, &file, "batch", args.batch, parse_usize)?;
    merge(&mut cfg.lr, &file, "lr", args.lr, parse_f64)?;
    merge(&mut cfg.lambda, &file, "lambda", args.lambda, parse_f64)?;
    merge(&mut cfg.epsilon, &file, "epsilon", args.epsilon, parse_f64)?;
    merge(&mut cfg.xi, &file, "xi", args.xi, parse_f64)?;
    merge(&mut cfg.sigma, &file, "sigma", args.sigma, parse_f64)?;
    merge(&mut cfg.workers, &file, "workers", args.workers, parse_usize)?;
    merge(
        &mut cfg.hidden,
        &file,
        "hidden",
        args.hidden.as_deref().map(parse_hidden).transpose()?,
        parse_hidden,
    )?;

    let seed_count = match (args.seeds, file.get("seeds")) {
        (Some(n), _) => Some(n),
        (None, Some(raw)) => Some(parse_usize(raw)?),
        (None, None) => None,
    };
    if let Some(n) = seed_count {
        if n == 0 {
            bail!("--seeds must be positive");
        }
        cfg.seeds = (0..n as u64).collect();
    }

    if let Some(raw) = file.get("train_limit") {
        cfg.train_limit = Some(parse_usize(raw)?);
    }
    if args.train_limit.is_some() {
        cfg.train_limit = args.train_limit;
    }
    if let Some(raw) = file.get("fisher_samples") {
        cfg.fisher_samples = Some(parse_usize(raw)?);
    }
    if args.fisher_samples.is_some() {
        cfg.fisher_samples = args.fisher_samples;
    }
    if let Some(raw) = file.get("accumulate_gamma") {
        cfg.accumulate_gamma = raw
            .parse::<bool>()
            .context("accumulate_gamma expects true|false")?;
    }
    if args.accumulate_gamma {
        cfg.accumulate_gamma = true;
    }
    if let Some(raw) = file.get("oja_per_sample") {
        cfg.oja_per_sample = raw
            .parse::<bool>()
            .context("oja_per_sample expects true|false")?;
    }
    if args.oja_per_sample {
        cfg.oja_per_sample = true;
    }
    if let Some(raw) = file.get("fisher_sampled") {
        cfg.fisher_sampled = raw
            .parse::<bool>()
            .context("fisher_sampled expects true|false")?;
    }
    if args.fisher_sampled {
        cfg.fisher_sampled = true;
    }
    if let Some(raw) = file.get("data") {
        cfg.data_dir = PathBuf::from(raw);
    }
    if let Some(data) = &args.data {
        cfg.data_dir = data.clone();
    }
    if let Some(raw) = file.get("out") {
        cfg.out_dir = Some(PathBuf::from(raw));
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if cfg.out_dir.is_none() {
        bail!("--out is required (or set 'out' in the config file)");
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let matrix = run_experiment(&cfg)?;
    let out = cfg.out_dir.as_ref().expect("out_dir enforced above");
    println!(
        "{} on {}: {} task(s), {} seed(s)",
        matrix.method,
        matrix.benchmark,
        matrix.num_tasks,
        matrix.results.len()
    );
    for t in 0..matrix.num_tasks {
        println!(
            "  after task {}: mean accuracy over seen tasks {:.4}",
            t + 1,
            matrix.mean_accuracy_after(t)
        );
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

fn visualize(args: VisualizeArgs) -> Result<()> {
    let (_, test) = load_mnist_dir(&args.data)?;
    let written = visualize_attention(
        &args.checkpoint,
        &test,
        args.count,
        args.sigma,
        args.seed,
        &args.out,
    )?;
    println!(
        "wrote {} PGM files to {}",
        written.len(),
        args.out.display()
    );
    Ok(())
}
